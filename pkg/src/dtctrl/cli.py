"""Command-line interface: ``dtctrl analyze | optimal | oracle | list-systems``.

Exit codes: 0 success (controllable / certified / checks pass), 10 negative
verdict, 20 inconclusive, 30 oracle discrepancy, 1 error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import analysis, exprdsl, optimal, oracle
from ._linalg import subspace_distance
from .analysis import Status, VerdictOptions
from .errors import DtctrlError
from .system import BUILTIN_DESCRIPTIONS, BUILTIN_SYSTEMS, DiscreteSystem, load_system
from .variation import variations

EXIT_OK = 0
EXIT_NEGATIVE = 10
EXIT_INCONCLUSIVE = 20
EXIT_DISCREPANCY = 30
EXIT_ERROR = 1

FD_JAC_TOL = 1e-6
KERNEL_TOL = 1e-5
FD_HESS_TOL = 1e-4


# --------------------------------------------------------------------------
# reports


def fmt(v) -> str:
    """Canonical text for a report value; floats use ``repr`` so they round-trip."""
    if v is None:
        return "none"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v) + 0.0)
    if isinstance(v, (tuple, list, np.ndarray)):
        return " ".join(fmt(x) for x in np.ravel(np.asarray(v, dtype=object)))
    return str(v)


@dataclass
class Report:
    sections: list = field(default_factory=list)

    def section(self, title):
        items: list = []
        self.sections.append((title, items))
        return items

    def structured(self) -> str:
        out = []
        for title, items in self.sections:
            for key, value in items:
                out.append(f"{title}.{key} = {fmt(value)}")
        return "\n".join(out) + "\n"

    def text(self) -> str:
        out = []
        for title, items in self.sections:
            out.append(f"[{title}]")
            width = max((len(k) for k, _ in items), default=0)
            for key, value in items:
                out.append(f"  {key.ljust(width)}  {fmt(value)}")
            out.append("")
        return "\n".join(out)

    def emit(self, style, stream=None):
        stream = stream or sys.stdout
        stream.write(self.structured() if style == "structured" else self.text())


# --------------------------------------------------------------------------
# configuration


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _default_seed():
    env = os.environ.get("DTCTRL_SEED")
    return int(env) if env not in (None, "") else 0


def _common(p, with_system=True):
    if with_system:
        p.add_argument("--system", required=True,
                       help="built-in system name or path to a system file")
    p.add_argument("--x0", type=float, nargs="+", required=True, help="initial state")
    p.add_argument("--u", type=float, nargs="+", required=True,
                   help="controls u1..uN flattened, or one control with --steps")
    p.add_argument("--steps", type=int, help="number of steps N")
    p.add_argument("--rank-tol", type=float, default=analysis.RANK_TOL)
    p.add_argument("--eig-tol", type=float, default=analysis.EIG_TOL)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--format", choices=("text", "structured"), default="text")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dtctrl", description="Second-order controllability and optimality "
                "checks for invertible discrete-time systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    a = sub.add_parser("analyze", help="strong local controllability verdict")
    _common(a)
    o = sub.add_parser("optimal", help="optimality conditions for a problem file")
    _common(o, with_system=False)
    o.add_argument("--problem", required=True, help="system file with phi (and optional c)")
    r = sub.add_parser("oracle", help="finite-difference and Monte-Carlo cross-checks")
    _common(r)
    r.add_argument("--radius", type=float, default=0.05)
    r.add_argument("--samples", type=int, default=20000)
    r.add_argument("--backend", choices=("numba", "numpy"), default=None)
    sub.add_parser("list-systems", help="print the built-in systems")
    return p


def _controls(args, m):
    u = np.asarray(args.u, float)
    if args.steps is not None:
        if args.steps < 1:
            raise exprdsl.DimensionMismatch("--steps must be positive")
        if len(u) == m:
            u = np.tile(u, args.steps)
        elif len(u) != args.steps * m:
            raise exprdsl.DimensionMismatch(
                f"--u has {len(u)} values; expected {m} or {args.steps * m}")
    if len(u) == 0 or len(u) % m:
        raise exprdsl.DimensionMismatch(f"--u has {len(u)} values, not a multiple of m={m}")
    return u.reshape(-1, m)


def _x0(args, n):
    x0 = np.asarray(args.x0, float)
    if len(x0) != n:
        raise exprdsl.DimensionMismatch(f"--x0 has {len(x0)} values; the system has n={n}")
    return x0


def _header(rep, sys_, x0, ubar, seed):
    h = rep.section("input")
    h += [("system", sys_.name), ("n", sys_.n), ("m", sys_.m), ("N", len(ubar)),
          ("x0", x0), ("u", ubar), ("seed", seed)]


# --------------------------------------------------------------------------
# commands


def _verdict_report(rep, v, opts):
    s = rep.section("span")
    sk = v.span
    s += [("rank", v.rank), ("k", v.k)]
    if sk is not None:
        s += [("dim_K", sk.dim_K), ("singular_values", sk.singular_values),
              ("spectral_gap", sk.spectral_gap)]
        for j in range(sk.k):
            s.append((f"lambda_basis.{j + 1}", sk.Lperp_basis[:, j]))
    if v.samples:
        t = rep.section("lambda_samples")
        t.append(("count", len(v.samples)))
        for j, smp in enumerate(v.samples, 1):
            t.append((f"{j}.lambda", smp.lam))
            t.append((f"{j}.inertia", smp.inertia))
            t.append((f"{j}.min_eig", float(smp.eigenvalues[0]) if len(smp.eigenvalues) else None))
    r = rep.section("verdict")
    r.append(("status", str(v.status)))
    if v.witness is not None:
        r += [("witness.lambda", v.witness.lam), ("witness.inertia", v.witness.inertia),
              ("witness.eigenvalues", v.witness.eigenvalues), ("witness.margin", v.witness.margin)]
    r += [("worst_margin", v.worst_margin), ("best_pd_margin", v.best_pd_margin)]
    for j, note in enumerate(v.notes, 1):
        r.append((f"note.{j}", note))


def _verdict_opts(args):
    return VerdictOptions(rank_tol=args.rank_tol, eig_tol=args.eig_tol, seed=args.seed)


def cmd_analyze(args) -> int:
    sys_ = load_system(args.system)
    x0 = _x0(args, sys_.n)
    ubar = _controls(args, sys_.m)
    v = analysis.verdict(sys_, x0, ubar, _verdict_opts(args))
    rep = Report()
    _header(rep, sys_, x0, ubar, args.seed)
    _verdict_report(rep, v, args)
    rep.emit(args.format)
    if v.status in (Status.CERTIFIED_CONTROLLABLE, Status.FULL_RANK_CONTROLLABLE):
        return EXIT_OK
    if v.status == Status.CERTIFIED_NOT_CONTROLLABLE:
        return EXIT_NEGATIVE
    return EXIT_INCONCLUSIVE


def load_problem(path, x0, ubar_len):
    """Meyer problem from a problem file; a running cost triggers the Bolza reduction."""
    with open(path, encoding="utf-8") as fh:
        pf = exprdsl.parse_problem(fh.read())
    sys_ = DiscreteSystem.from_file(pf.system, os.path.basename(path))
    x0 = _x0_check(x0, sys_.n)
    if pf.c is None:
        return sys_, optimal.MeyerProblem.from_expr(sys_, x0, ubar_len, pf.phi), False
    bp = optimal.BolzaProblem.from_expr(sys_, x0, ubar_len, pf.phi, pf.c)
    return sys_, optimal.bolza_reduce(bp), True


def _x0_check(x0, n):
    x0 = np.asarray(x0, float)
    if len(x0) != n:
        raise exprdsl.DimensionMismatch(f"--x0 has {len(x0)} values; the system has n={n}")
    return x0


def cmd_optimal(args) -> int:
    with open(args.problem, encoding="utf-8") as fh:
        m = exprdsl.parse_problem(fh.read()).system.m
    ubar = _controls(args, m)
    base_sys, prob, bolza = load_problem(args.problem, args.x0, len(ubar))
    opts = optimal.OptimalityOptions(rank_tol=args.rank_tol, eig_tol=args.eig_tol)
    nec = optimal.check_meyer_necessary(prob, ubar, opts)
    suf = optimal.check_meyer_sufficient(prob, ubar, opts)
    adj = optimal.adjoint_chain(prob, ubar, opts)
    rep = Report()
    _header(rep, base_sys, np.asarray(args.x0, float), ubar, args.seed)
    pr = rep.section("problem")
    pr += [("bolza_reduced", bolza), ("state_dim", prob.sys.n),
           ("objective", prob.objective(ubar))]
    c = rep.section("conditions")
    c += [("lambda", nec.lam), ("rank", nec.rank), ("dim_K", nec.dim_K),
          ("I.residual", nec.cond_I_residual), ("I.holds", nec.cond_I),
          ("II.inertia", nec.cond_II_inertia), ("II.holds", nec.cond_II),
          ("III.inertia", suf.cond_III_inertia), ("III.margin", suf.cond_III_margin),
          ("IV.margin", suf.cond_IV_margin), ("marginal", suf.marginal)]
    if suf.qform is not None:
        q = suf.qform
        c += [("Q", q.Q), ("Q.equation_residual", q.eq_residual),
              ("Q.A_plus_B_min_eig", q.psd_min), ("Q.zero_completion_off_L", True)]
    c += [("psi.grad_norm", suf.psi_grad_norm), ("psi.hess_min_eig", suf.psi_hess_min),
          ("psi.consistent", suf.consistent)]
    t = rep.section("adjoint")
    t.append(("p0_equals_lambda", float(np.max(np.abs(adj.lam - nec.lam)))))
    for k in range(len(ubar) + 1):
        t += [(f"{k}.x", adj.xs[k]), (f"{k}.p", adj.ps[k])]
        if k:
            ind, codim = adj.so_results[k - 1][2], adj.codims[k - 1]
            t += [(f"{k}.cc_residual", adj.cc_residuals[k - 1]),
                  (f"{k}.so_inertia", adj.so_results[k - 1]),
                  (f"{k}.ic", "holds" if ind < codim else "fails")]
    r = rep.section("verdict")
    r += [("status", suf.verdict), ("reason", suf.reason)]
    rep.emit(args.format)
    if suf.verdict == optimal.LOCALLY_OPTIMAL:
        return EXIT_OK
    if not nec.cond_I or (nec.cond_II is False):
        return EXIT_NEGATIVE
    return EXIT_INCONCLUSIVE


def cmd_oracle(args) -> int:
    sys_ = load_system(args.system)
    x0 = _x0(args, sys_.n)
    ubar = _controls(args, sys_.m)
    v = analysis.verdict(sys_, x0, ubar, _verdict_opts(args))
    data = v.data or variations(sys_, x0, ubar)
    F = oracle.EndpointMap(sys_, x0, len(ubar))
    S = data.df_ubar @ data.Y_matrix()
    J = oracle.fd_jacobian(F, ubar)
    scale = max(1.0, float(np.max(np.abs(S))))
    jac_err = float(np.max(np.abs(J - S))) / scale
    sk = v.span or analysis.span_kernel(data.Y, args.rank_tol, allow_degenerate=True)
    kdist = subspace_distance(oracle.fd_kernel(J), sk.K_basis)
    H = data.hessian()
    hess_err = 0.0
    hess_fail = None
    for a in sk.K_basis.T:
        try:
            fd = oracle.fd_hessian_on_kernel(F, ubar, a)
        except DtctrlError as exc:
            hess_fail = str(exc)
            hess_err = np.inf
            break
        ref = data.df_ubar @ H(a)
        hess_err = max(hess_err, float(np.linalg.norm(fd - ref))
                       / max(1.0, float(np.linalg.norm(ref))))
    opts = optimal.OptimalityOptions(rank_tol=args.rank_tol, eig_tol=args.eig_tol)
    level = oracle.witness_level_set(sys_, x0, ubar, v, opts)
    extra = None if level is None else np.vstack([level[0], -level[0]])
    probe = oracle.ReachProbe(radius=args.radius, samples=args.samples, seed=args.seed,
                              extra_directions=extra, level_set=level, backend=args.backend)
    pr = oracle.probe_interior(F, ubar, probe)
    contradicts = ((v.status == Status.CERTIFIED_CONTROLLABLE
                    and pr.verdict == oracle.BOUNDARY_LIKELY)
                   or (v.status == Status.CERTIFIED_NOT_CONTROLLABLE
                       and pr.verdict == oracle.INTERIOR_LIKELY))
    checks = {"fd_jacobian": jac_err <= FD_JAC_TOL, "kernel": kdist <= KERNEL_TOL,
              "fd_hessian": hess_err <= FD_HESS_TOL, "probe_agrees": not contradicts}
    rep = Report()
    _header(rep, sys_, x0, ubar, args.seed)
    a = rep.section("agreement")
    a += [("analytic_status", str(v.status)),
          ("fd_jacobian.rel_error", jac_err), ("fd_jacobian.tol", FD_JAC_TOL),
          ("kernel.distance", kdist), ("kernel.tol", KERNEL_TOL),
          ("fd_hessian.rel_error", hess_err), ("fd_hessian.tol", FD_HESS_TOL)]
    if hess_fail:
        a.append(("fd_hessian.failure", hess_fail))
    for name, ok in checks.items():
        a.append((f"{name}.pass", ok))
    p = rep.section("probe")
    p += [("radius", probe.radius), ("samples", probe.samples), ("samples_used", pr.samples_used),
          ("samples_dropped", pr.samples_dropped), ("coverage_floor", pr.floor),
          ("directions", len(pr.directions)),
          ("min_directional_coverage", pr.min_directional_coverage),
          ("level_set_min", pr.level_set_min), ("verdict", pr.verdict)]
    for j, note in enumerate(pr.notes, 1):
        p.append((f"note.{j}", note))
    rep.emit(args.format)
    return EXIT_OK if all(checks.values()) else EXIT_DISCREPANCY


def cmd_list_systems(args) -> int:
    for name in BUILTIN_SYSTEMS:
        print(f"{name:16s} {BUILTIN_DESCRIPTIONS.get(name, '')}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "optimal": cmd_optimal, "oracle": cmd_oracle,
            "list-systems": cmd_list_systems}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (DtctrlError, OSError, KeyError, ValueError, ArithmeticError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dtctrl: error: {msg}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
