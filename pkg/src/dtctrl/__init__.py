"""Second-order controllability and optimality for invertible discrete-time systems."""
from .analysis import Status, VerdictOptions, span_kernel, verdict
from .errors import DtctrlError
from .optimal import (BolzaProblem, MeyerProblem, adjoint_chain, bolza_reduce,
                      check_geometric_hamiltonian, check_meyer_necessary,
                      check_meyer_sufficient, lambda_covector, qform_construct)
from .oracle import EndpointMap, ReachProbe, fd_jacobian, minimize_psi, probe_interior
from .system import DiscreteSystem, builtin, load_system
from .variation import variations

__version__ = "0.1.0"

__all__ = [
    "BolzaProblem", "DiscreteSystem", "DtctrlError", "EndpointMap", "MeyerProblem",
    "ReachProbe", "Status", "VerdictOptions", "adjoint_chain", "bolza_reduce", "builtin",
    "check_geometric_hamiltonian", "check_meyer_necessary", "check_meyer_sufficient",
    "fd_jacobian", "lambda_covector", "load_system", "minimize_psi", "probe_interior",
    "qform_construct", "span_kernel", "variations", "verdict",
]
