"""Stability LPI -> SDP by coefficient matching, and certificate re-checks.

For a PIE T u' = A u we look for

    P = eps I + Omega_d(P1, P2),
    D = -del T*T - A*P T - T*P A  in  Omega_d'(Q1, Q2),

with P1, P2, Q1, Q2 >= 0.  Every kernel coefficient of D is affine in
(P1, P2); matching it against the Gram kernels of (Q1, Q2) gives linear
equalities.  Both sides are self-adjoint, so a coefficient and its adjoint
partner give the same equation and only one of each pair is kept.

A certificate yields <Tu, P Tu> <= zeta |Tu|^2 with decay rate del / zeta.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .pi_algebra import (
    COMPS, PIError, PIOp, _ADJ_TAG, _adj_map, adjoint, compose, identity,
)
from .poly_core import Q, Poly, PolyMatrix, make_perm, mono_rename, to_fraction
from .positivity import (
    AffineN, BLOCK_TAGS, Omega, PsdVarHandle, _Collector, gram_affine, omega_d, op_to_labels,
)
from .sdp import SdpProblem, SdpSolution, SolverSettings, solve_sdp

log = logging.getLogger(__name__)


class LpiDegreeError(PIError):
    """The slack cone cannot reach the degree of some kernel block of D."""


class LpiCapacityError(PIError):
    """The LPI is larger than the embedded solver is configured to take."""


@dataclass
class LpiConfig:
    """Assembly options.  eps / delta accept numbers or decimal strings."""

    eps: object = "1e-5"
    delta: object = None              # None -> 1e-5 * domain area
    slack_degree: int | None = None   # None -> computed
    max_slack_degree: int = 12
    reduce_slack: bool = True         # drop Gram blocks that D forces to zero
    objective: str = "feasibility"    # or "trace": minimize tr P1 + tr P2, which keeps zeta small
    max_psd_size: int = 200           # largest Gram matrix handed to the solver
    max_sdp_rows: int = 20000         # largest number of matching constraints


def _rational(v) -> Q:
    if isinstance(v, float):
        return Q(Fraction(repr(v)))
    return to_fraction(v)


def default_delta(rect) -> Q:
    return Q(1, 100000) * rect.area


# --------------------------------------------------------------------------
# labels and adjoint partners


def _partner(label):
    oc, ic, key, p, q, e = label
    mapping = _adj_map(key[0], 0) | _adj_map(key[1], 1)
    e2 = mono_rename(e, make_perm(mapping)) if mapping else e
    return (ic, oc, (_ADJ_TAG[key[0]], _ADJ_TAG[key[1]]), q, p, e2)


def _sort_key(label):
    oc, ic, key, p, q, e = label
    return (COMPS.index(oc), COMPS.index(ic), str(key), p, q, e)


def is_upper(label) -> bool:
    """Keep one coefficient out of each adjoint pair."""
    return _sort_key(label) <= _sort_key(_partner(label))


def _part(label):
    return label[:3]


def part_degrees(labels) -> dict[tuple, int]:
    out: dict[tuple, int] = {}
    for lab in labels:
        k = _part(lab)
        out[k] = max(out.get(k, 0), sum(lab[5]))
    return out


# --------------------------------------------------------------------------
# problem


@dataclass
class LpiProblem:
    """The assembled LPI: handles, affine kernels and the SDP they produce."""

    T: PIOp
    A: PIOp
    degree: int
    eps: Q
    delta: Q
    omega: Omega
    slack: Omega
    slack_degree: int
    D: AffineN
    S: AffineN
    sdp: SdpProblem
    labels: list
    timings: dict = field(default_factory=dict)

    @property
    def handles(self) -> tuple[PsdVarHandle, ...]:
        return self.omega.handles + self.slack.handles

    def sizes(self) -> dict:
        return {"blocks": list(self.sdp.sizes), "constraints": self.sdp.m,
                "slack_degree": self.slack_degree,
                "slack_block_degrees": list(self.slack.plain.degrees or [])}


def _space(T: PIOp) -> tuple[int, int]:
    n0, nx, ny, n = T.in_sizes
    if nx or ny or T.out_sizes != T.in_sizes:
        raise PIError("stability LPI needs square operators on R^n0 x L2[x,y]^n")
    return n0, n


def _slack_active(parts: set, n0: int, n: int) -> tuple[int, ...] | None:
    """Gram blocks of the slack to keep, given the kernel parts present in D.

    The 1D-in-x kernels of a Gram form come only from the Z1, Z2, Z3 rows
    and the multiplier only from Z1, so when D has none of them those rows
    are dropped (same for y with Z4, Z5).  Any subset of blocks spans a
    sub-cone, so this never weakens soundness; it removes faces on which no
    strictly feasible point exists.
    """
    has = lambda key: ("xy", "xy", key) in parts
    drop = set()
    if not has((0, 0)):
        drop.add((0, 0))
    if not has((1, 0)) and not has((2, 0)):
        drop |= {(1, 0), (2, 0)}
    if not has((0, 1)) and not has((0, 2)):
        drop |= {(0, 1), (0, 2)}
    if not drop or not n:
        return None
    keep = [0] if n0 else []
    keep += [len(keep) + i for i, key in enumerate(BLOCK_TAGS) if key not in drop]
    return tuple(keep)


def _generic_psd(size: int, rng) -> np.ndarray:
    G = rng.integers(-3, 4, size=(size, size))
    M = G @ G.T + np.eye(size, dtype=np.int64)
    out = np.empty((size, size), dtype=object)
    for i in range(size):
        for j in range(size):
            out[i, j] = Q(int(M[i, j]), 7)
    return out


def _concrete_D(T: PIOp, A: PIOp, P: PIOp, delta) -> PIOp:
    APT = compose(adjoint(A), compose(P, T))
    return compose(adjoint(T), T).scale(-delta) - APT - adjoint(APT)


def _affine_D(T: PIOp, A: PIOp, omega: Omega, eps: Q, delta: Q) -> AffineN:
    h1, h2 = omega.handles
    col = _Collector(True)
    gram_affine(omega.plain, h1, left=A, right=T, scale=-1, collector=col)
    gram_affine(omega.weighted, h2, left=A, right=T, col_offset=h1.nvars, scale=-1,
                collector=col)
    AT = compose(adjoint(A), T)
    const = compose(adjoint(T), T).scale(-delta) - (AT + adjoint(AT)).scale(eps)
    return col.build(T, (h1, h2), const)


def _shortfall(D_deg: dict, S_deg: dict) -> list[tuple]:
    out = []
    for part, deg in D_deg.items():
        if S_deg.get(part, -1) < deg:
            out.append((part, deg, S_deg.get(part)))
    return out


def _upper_degrees(op: PIOp) -> dict:
    return part_degrees([lab for lab in op_to_labels(op) if is_upper(lab)])


def assemble_lpi(T: PIOp, A: PIOp, degree: int, eps=None, delta=None,
                 config: LpiConfig | None = None) -> LpiProblem:
    """Form D(P), pick the slack degree, and emit the matching SDP.

    Blocks of the SDP are [P1, P2, Q1, Q2].  Sizes are predicted from D and
    the slack evaluated at generic P before any affine map is built, and
    LpiCapacityError is raised when they exceed the configured limits.
    """
    cfg = config or LpiConfig()
    if degree < 0:
        raise PIError("degree must be >= 0")
    n0, n = _space(T)
    rect = T.rect
    eps = _rational(cfg.eps if eps is None else eps)
    if delta is None:
        delta = cfg.delta
    delta = default_delta(rect) if delta is None else _rational(delta)
    if eps <= 0 or delta < 0:
        raise PIError("need eps > 0 and del >= 0")
    timings = {}
    rng = np.random.default_rng(0)
    omega = omega_d(n, degree, rect, n0)
    if omega.plain.Q > cfg.max_psd_size:
        raise LpiCapacityError(f"Omega_{degree} Gram matrix is {omega.plain.Q}x{omega.plain.Q}, "
                               f"above the limit {cfg.max_psd_size}")

    # structure of D from one generic instance
    t0 = time.perf_counter()
    P = identity(T.in_sizes, rect).scale(eps) + omega.concrete(
        _generic_psd(omega.plain.Q, rng), _generic_psd(omega.weighted.Q, rng))
    D_probe = _concrete_D(T, A, P, delta)
    D_deg = _upper_degrees(D_probe)
    active = _slack_active(set(D_deg), n0, n) if cfg.reduce_slack else None

    # slack degrees: start at `degree` everywhere; for each kernel part of D
    # that is still short, raise the blocks (or pairs of blocks, for parts
    # made by cross terms) whose Gram kernels reach that part highest
    nb = omega.plain.n_all
    act = active if active is not None else tuple(range(nb))
    fixed = cfg.slack_degree is not None
    degs = [cfg.slack_degree if fixed else degree] * nb
    reach: dict = {}

    def subset_reach(sub: tuple, dg: tuple) -> dict:
        if (sub, dg) not in reach:
            d_all = [0] * nb
            for i, v in zip(sub, dg):
                d_all[i] = v
            one = omega_d(n, max(dg), rect, n0, sub, d_all)
            reach[sub, dg] = _upper_degrees(one.concrete(_generic_psd(one.plain.Q, rng),
                                                         _generic_psd(one.weighted.Q, rng)))
        return reach[sub, dg]

    def to_raise(part) -> set:
        best, out = -1, set()
        for size in (1, 2):
            for sub in itertools.combinations(act, size):
                r = subset_reach(sub, tuple(degs[i] for i in sub)).get(part, -1)
                if r > best:
                    best, out = r, set(sub)
                elif r == best and r >= 0:
                    out |= set(sub)
            if best >= 0:
                break
        return out or set(act)

    while True:
        slack = omega_d(n, max(degs), rect, n0, active, degs)
        if slack.plain.Q > cfg.max_psd_size:
            raise LpiCapacityError(
                f"slack block degrees {_fmt_block_degrees(slack.plain)} need a "
                f"{slack.plain.Q}x{slack.plain.Q} Gram matrix, above the limit "
                f"{cfg.max_psd_size}; D has kernel degrees {_fmt_degrees(D_deg)}")
        S_probe = slack.concrete(_generic_psd(slack.plain.Q, rng),
                                 _generic_psd(slack.weighted.Q, rng))
        miss = _shortfall(D_deg, _upper_degrees(S_probe))
        if not miss:
            break
        if fixed or max(degs) >= cfg.max_slack_degree:
            part, need, have = miss[0]
            raise LpiDegreeError(
                f"slack degree {max(degs)} cannot express D: kernel block {part[0]}<-{part[1]} "
                f"tags {part[2]} has degree {need}, slack reaches {have}")
        for i in set().union(*(to_raise(part) for part, _, _ in miss)):
            degs[i] += 1
    k = max(degs)
    timings["plan"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    D = _affine_D(T, A, omega, eps, delta)
    timings["D"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    S = slack.affine()
    timings["slack"] = time.perf_counter() - t0
    miss = _shortfall(part_degrees([lab for lab in D.labels if is_upper(lab)]),
                      part_degrees(S.labels))
    if miss:
        raise LpiDegreeError(f"slack degree {k} misses kernel blocks {miss}")

    t0 = time.perf_counter()
    labels = sorted({lab for lab in D.labels if is_upper(lab)}
                    | {lab for lab in S.labels if is_upper(lab)}, key=_sort_key)
    if len(labels) > cfg.max_sdp_rows:
        raise LpiCapacityError(f"{len(labels)} matching constraints, above the limit "
                               f"{cfg.max_sdp_rows}")
    sdp = _matching_sdp(D, S, labels, omega, slack, cfg.objective)
    timings["sdp"] = time.perf_counter() - t0
    log.info("LPI d=%d d'=%d: blocks %s, %d constraints", degree, k, sdp.sizes, sdp.m)
    return LpiProblem(T, A, degree, eps, delta, omega, slack, k, D, S, sdp, labels, timings)


def _fmt_block_degrees(basis) -> str:
    return ", ".join(f"{b.comp}{b.key}:{len(b.monomials)}" for b in basis.blocks)


def _fmt_degrees(deg: dict) -> str:
    return ", ".join(f"{oc}<-{ic} {key}: {d}" for (oc, ic, key), d in sorted(deg.items(), key=str))


def _matching_sdp(D: AffineN, S: AffineN, labels, omega: Omega, slack: Omega,
                  objective: str = "feasibility") -> SdpProblem:
    row_of = {lab: r for r, lab in enumerate(labels)}
    handles = omega.handles + slack.handles
    tri = {}
    for h in handles:
        if h.size not in tri:
            tri[h.size] = np.triu_indices(h.size)
    entries = []
    b = np.zeros(len(labels))

    def emit(aff: AffineN, block0: int, sign: float):
        offs = aff.col_offsets
        for r, c, v in zip(aff.rows, aff.cols, aff.vals):
            lab = aff.labels[r]
            row = row_of.get(lab)
            if row is None or v == 0:
                continue
            h = int(np.searchsorted(offs, c, side="right") - 1)
            iu = tri[aff.handles[h].size]
            i, j = int(iu[0][c - offs[h]]), int(iu[1][c - offs[h]])
            val = sign * float(v) * (1.0 if i == j else 0.5)
            entries.append((row, block0 + h, i, j, val))

    emit(D, 0, 1.0)
    emit(S, 2, -1.0)
    for lab, v in zip(D.labels, D.const):
        row = row_of.get(lab)
        if row is not None and v != 0:
            b[row] = -float(v)
    sizes = [h.size for h in handles]
    if objective == "feasibility":
        obj = []
    elif objective == "trace":
        obj = [(blk, i, i, 1.0) for blk in (0, 1) for i in range(sizes[blk])]
    else:
        raise PIError(f"unknown objective {objective!r}")
    return SdpProblem(sizes, entries, b, obj, row_labels=labels)


# --------------------------------------------------------------------------
# certificate re-check


@dataclass
class StabilityVerdict:
    certified: bool
    eps: float
    delta: float
    zeta: float | None
    decay_bound: float | None
    degree: int
    slack_degree: int | None
    solver: dict
    failures: list[str] = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "certified" if self.certified else f"not certified at degree {self.degree}"

    def report(self, probes: list | None = None) -> dict:
        return {"verdict": self.verdict, "eps": self.eps, "del": self.delta, "zeta": self.zeta,
                "decay_bound": self.decay_bound, "degree": self.degree,
                "slack_degree": self.slack_degree,
                "solver": {"iters": self.solver.get("iters"), "gap": self.solver.get("gap"),
                           "residuals": self.solver.get("residuals"),
                           "status": self.solver.get("status")},
                "failures": list(self.failures), "checks": dict(self.checks),
                "sizes": dict(self.sizes), "probes": list(probes or [])}


def _rationalize(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = Q(float(M[i, j]))
    return out


def _sup_bound(p: Poly, rect) -> Fraction:
    """sum |c| max|x^i y^j| over the rectangle: an upper bound of sup |p|."""
    mx = max(abs(rect.a), abs(rect.b))
    my = max(abs(rect.c), abs(rect.d))
    return sum((abs(c) * mx ** e[0] * my ** e[1] for e, c in p.terms.items()), Q(0))


def _square_integral(mat: PolyMatrix, vars_: list[str], rect) -> Poly:
    """sum over entries of the integral of kernel^2 over the given variables."""
    bounds = {"x": (rect.a, rect.b), "theta": (rect.a, rect.b),
              "y": (rect.c, rect.d), "nu": (rect.c, rect.d)}
    total = Poly()
    for row in mat.to_polys():
        for p in row:
            if p.is_zero():
                continue
            sq = p * p
            for v in vars_:
                lo, hi = bounds[v]
                sq = sq.integrate(v, lo, hi)
            total = total + sq
    return total


def hs_bound(P: PIOp) -> float:
    """Operator-norm upper bound: sup|N00| plus Hilbert-Schmidt norms of the kernels.

    Kernels that keep a multiplier dimension are bounded by the sup over that
    dimension of the L2 norm in the integrated ones.
    """
    rect = P.rect
    total = 0.0
    for oc, ic, key, mat in P.iter_terms():
        if key in ((0, 0), ("-", "-")):
            sq = Q(0)
            for row in mat.to_polys():
                for p in row:
                    sq += _sup_bound(p, rect) ** 2
            total += math.sqrt(float(sq))
            continue
        integrate = []
        for k, tag in enumerate(key):
            if tag in (1, 2):
                integrate += [("x", "y")[k], ("theta", "nu")[k]]
            elif tag == "o":
                integrate.append(("x", "y")[k])
            elif tag == "i":
                integrate.append(("theta", "nu")[k])
        sq = _square_integral(mat, integrate, rect)
        total += math.sqrt(float(_sup_bound(sq, rect)))
    return total


def concrete_P(problem: LpiProblem, P1, P2) -> PIOp:
    I = identity(problem.T.in_sizes, problem.T.rect)
    return I.scale(problem.eps) + problem.omega.concrete(P1, P2)


def verify_certificate(problem: LpiProblem, sol: SdpSolution, eig_tol: float = 1e-9,
                       residual_tol: float = 1e-7) -> StabilityVerdict:
    """Rebuild P, D and the slack exactly from the solution and re-check them.

    The kernels are recomputed through full Gram compositions, not through the
    affine maps used for assembly.  A solver that stopped early may still
    hand back a point that passes; one that passes nothing is rejected here
    whatever its status says.
    """
    failures, checks = [], {}
    diag = sol.diagnostics()
    T, A = problem.T, problem.A
    verdict = lambda ok, zeta=None: StabilityVerdict(
        ok, float(problem.eps), float(problem.delta), zeta,
        (float(problem.delta) / zeta if zeta else None), problem.degree, problem.slack_degree,
        diag, failures, checks, problem.sizes())
    # the solver status is recorded, but only the re-check below decides
    checks["solver_status"] = sol.status
    if sol.status == "infeasible-certificate" or not all(np.all(np.isfinite(X)) for X in sol.X):
        failures.append(f"solver status {sol.status}: {sol.message}")
        return verdict(False)
    mats = [_rationalize(X) for X in sol.X]
    eigs = [float(np.linalg.eigvalsh(np.asarray(M, dtype=float))[0]) for M in mats]
    checks["min_block_eigenvalues"] = eigs
    for h, ev in zip(problem.handles, eigs):
        if ev < -eig_tol:
            failures.append(f"block {h.name} has eigenvalue {ev:.3e} < -{eig_tol:g}")
    P1, P2, Q1, Q2 = mats
    P = concrete_P(problem, P1, P2)
    D = _concrete_D(T, A, P, problem.delta)
    S = problem.slack.concrete(Q1, Q2)
    checks["P_selfadjoint"] = adjoint(P) == P
    checks["D_selfadjoint"] = adjoint(D) == D
    if not checks["P_selfadjoint"]:
        failures.append("P is not self-adjoint")
    if not checks["D_selfadjoint"]:
        failures.append("D is not self-adjoint")
    diff = op_to_labels(D - S)
    resid = max((abs(float(v)) for v in diff.values()), default=0.0)
    checks["coefficient_residual"] = resid
    if resid > residual_tol:
        worst = max(diff, key=lambda k: abs(diff[k]))
        failures.append(f"D - Omega residual {resid:.3e} > {residual_tol:g} at "
                        f"{worst[0]}<-{worst[1]} tags {worst[2]}")
    zeta = hs_bound(P)
    checks["zeta"] = zeta
    return verdict(not failures, zeta)


# --------------------------------------------------------------------------
# end to end


def certify(pair, degree: int, eps=None, delta=None, config: LpiConfig | None = None,
            settings: SolverSettings | None = None) -> tuple[StabilityVerdict, LpiProblem | None]:
    """Assemble, solve and re-check.  `pair` is anything with T and A."""
    cfg = config or LpiConfig()
    try:
        problem = assemble_lpi(pair.T, pair.A, degree, eps, delta, cfg)
    except (LpiDegreeError, LpiCapacityError) as exc:
        e = _rational(cfg.eps if eps is None else eps)
        d = delta if delta is not None else cfg.delta
        d = default_delta(pair.T.rect) if d is None else _rational(d)
        v = StabilityVerdict(False, float(e), float(d), None, None, degree, None, {},
                             [f"{type(exc).__name__}: {exc}"])
        return v, None
    t0 = time.perf_counter()
    sol = solve_sdp(problem.sdp, settings)
    problem.timings["solve"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    verdict = verify_certificate(problem, sol)
    problem.timings["verify"] = time.perf_counter() - t0
    return verdict, problem


@dataclass
class Probe:
    value: float
    certified: bool
    detail: str

    def as_dict(self) -> dict:
        return {"value": self.value, "certified": self.certified, "detail": self.detail}


@dataclass
class BisectionResult:
    threshold: float | None
    probes: list[Probe]
    message: str


def bisect_parameter(check: Callable[[float], bool | tuple[bool, str]], lo: float, hi: float,
                     iters: int, maximize: bool = True) -> BisectionResult:
    """Largest (maximize) or smallest certified value on [lo, hi].

    Assumes certification is monotone in the parameter: certified at the
    `lo` end (maximize) and lost somewhere towards `hi`.
    """
    if not lo < hi:
        raise PIError(f"empty range [{lo}, {hi}]")
    probes: list[Probe] = []

    def run(v: float) -> bool:
        out = check(v)
        ok, detail = out if isinstance(out, tuple) else (out, "")
        probes.append(Probe(v, bool(ok), detail))
        log.info("probe %.6g: %s", v, "certified" if ok else "not certified")
        return bool(ok)

    good, bad = (lo, hi) if maximize else (hi, lo)
    if not run(good):
        return BisectionResult(None, probes, "range exhausted: no certified value")
    if run(bad):
        return BisectionResult(bad, probes, "whole range certified")
    for _ in range(iters):
        mid = 0.5 * (good + bad)
        if run(mid):
            good = mid
        else:
            bad = mid
    return BisectionResult(good, probes, f"resolution {abs(hi - lo) / 2 ** iters:.3g}")
