"""Exception hierarchy shared by all modules."""


class DtctrlError(Exception):
    """Base class for every error raised by this package."""


class DivisionByZero(DtctrlError, ArithmeticError):
    pass


class ExprSyntaxError(DtctrlError):
    def __init__(self, message, line=None, pos=None):
        self.line = line
        self.pos = pos
        where = ""
        if line is not None:
            where += f"line {line}"
        if pos is not None:
            where += (", " if where else "") + f"col {pos + 1}"
        super().__init__(f"{where}: {message}" if where else message)


class DimensionMismatch(DtctrlError, ValueError):
    pass


class NonIntegerExponent(ExprSyntaxError):
    pass


class NonFiniteResult(DtctrlError, FloatingPointError):
    pass


class SingularJacobian(DtctrlError, ArithmeticError):
    pass


class NewtonDivergence(DtctrlError, ArithmeticError):
    pass


class NotInterior(DtctrlError, ValueError):
    """Control sequence touches or leaves the control box."""


class DegenerateInput(DtctrlError, ValueError):
    pass


class LambdaNotInAnnihilator(DtctrlError, ValueError):
    pass


class ConditionIIIFails(DtctrlError):
    """The restricted form lambda*H|_K is not positive definite."""

    def __init__(self, message, inertia=None):
        self.inertia = inertia
        super().__init__(message)


class KernelViolation(DtctrlError, ValueError):
    pass
