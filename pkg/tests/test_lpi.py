"""Stability LPI: assembly bookkeeping, solved small instances, independent
re-checks, tampering, degree monotonicity, scaling, and bisection."""
import copy
from types import SimpleNamespace

import numpy as np
import pytest

from pie2d.pi_algebra import PIError, PIOp, identity
from pie2d.poly_core import Poly, PolyMatrix, Q, Rect
from pie2d.positivity import embed_gram, op_to_labels
from pie2d.lpi_sdp import (
    LpiCapacityError, LpiConfig, LpiDegreeError, _partner, assemble_lpi, bisect_parameter,
    certify, hs_bound, is_upper, verify_certificate,
)
from pie2d.sdp import SdpSolution
from pie2d.verify import QuadratureGrid, apply_numeric, inner_product, random_state

RECT = Rect.unit()


def pie(T, A):
    return SimpleNamespace(T=T, A=A)


def scalar_ode(a):
    T = PIOp((1, 0, 0, 0), (1, 0, 0, 0), None, RECT)
    A = PIOp((1, 0, 0, 0), (1, 0, 0, 0), None, RECT)
    T._put("0", "0", ("-", "-"), PolyMatrix.eye(1))
    A._put("0", "0", ("-", "-"), PolyMatrix.const([[a]]))
    return pie(T, A)


def reaction(r):
    I = identity((0, 0, 0, 1), RECT)
    return pie(I, I.scale(Q(r)))


def coupled():
    sizes = (1, 0, 0, 1)
    T = identity(sizes, RECT)
    A = PIOp(sizes, sizes, None, RECT)
    A._put("0", "0", ("-", "-"), PolyMatrix.const([[-1]]))
    A._put("xy", "xy", (0, 0), PolyMatrix.const([[-2]]))
    A._put("xy", "0", ("o", "o"), PolyMatrix.const([[Q(1, 2)]]))
    A._put("0", "xy", ("i", "i"), PolyMatrix.from_polys([[Poly.var("theta") * Q(1, 4)]]))
    return pie(T, A)


_SOLVED = {}


def solved(name, d, **kw):
    key = (name, d, tuple(sorted(kw.items())))
    if key not in _SOLVED:
        inst = {"ode": lambda: scalar_ode(-1), "reaction": lambda: reaction(-1),
                "coupled": coupled}[name]()
        _SOLVED[key] = certify(inst, d, config=LpiConfig(**kw))
    return _SOLVED[key]


# --------------------------------------------------------------------------
# assembly bookkeeping


def test_constraints_are_distinct_upper_labels():
    pr = assemble_lpi(*vars(reaction(-1)).values(), 0)
    want = {l for l in pr.D.labels if is_upper(l)} | {l for l in pr.S.labels if is_upper(l)}
    assert pr.sdp.m == len(want) == len(set(pr.labels))
    assert set(pr.labels) == want
    for lab in pr.labels:
        part = _partner(lab)
        assert part == lab or part not in want


def test_partner_is_involution():
    pr = assemble_lpi(*vars(coupled()).values(), 0)
    for lab in pr.D.labels[:200]:
        assert _partner(_partner(lab)) == lab


def test_rhs_is_minus_constant_part():
    pr = assemble_lpi(*vars(reaction(-1)).values(), 0, eps="1/100", delta="1/10")
    # D const = -del T*T - eps (A*T + T*A) = (-1/10 + 2/100) I
    row = pr.labels.index(("xy", "xy", (0, 0), 0, 0, (0,) * 6))
    assert abs(pr.sdp.b[row] - (1 / 10 - 2 / 100)) < 1e-15


def test_block_sizes_and_slack_degree():
    pr = assemble_lpi(*vars(reaction(-1)).values(), 1)
    assert pr.sdp.sizes[:2] == [39, 39]
    assert pr.slack_degree == 1


def test_slack_degree_shortfall_raises():
    I = identity((0, 0, 0, 1), RECT)
    A = PIOp((0, 0, 0, 1), (0, 0, 0, 1), None, RECT)
    A._put("xy", "xy", (0, 0), PolyMatrix.from_polys([[-1 - Poly.var("x")]]))
    with pytest.raises(LpiDegreeError):
        assemble_lpi(I, A, 0, config=LpiConfig(slack_degree=0))
    assert assemble_lpi(I, A, 0).slack_degree == 1


def test_capacity_guard():
    with pytest.raises(LpiCapacityError):
        assemble_lpi(*vars(reaction(-1)).values(), 1, config=LpiConfig(max_psd_size=20))
    v, pr = certify(reaction(-1), 1, config=LpiConfig(max_psd_size=20))
    assert not v.certified and pr is None and "LpiCapacityError" in v.failures[0]


def test_rejects_bad_parameters():
    with pytest.raises(PIError):
        assemble_lpi(*vars(reaction(-1)).values(), 0, eps=0)
    with pytest.raises(PIError):
        assemble_lpi(*vars(reaction(-1)).values(), -1)


# --------------------------------------------------------------------------
# solved instances


@pytest.mark.parametrize("name", ["ode", "reaction", "coupled"])
def test_stable_instances_certified(name):
    v, pr = solved(name, 0)
    assert v.certified, v.failures
    assert v.checks["P_selfadjoint"] and v.checks["D_selfadjoint"]
    assert v.checks["coefficient_residual"] <= 1e-7
    assert min(v.checks["min_block_eigenvalues"]) >= -1e-9
    assert v.zeta > 0 and v.decay_bound == pytest.approx(v.delta / v.zeta)


@pytest.mark.parametrize("inst", [scalar_ode(1), reaction(1)], ids=["ode", "reaction"])
def test_unstable_instances_not_certified(inst):
    v, _ = certify(inst, 0)
    assert not v.certified
    assert v.verdict == "not certified at degree 0"


def test_defaults_recorded():
    v, pr = solved("reaction", 0)
    assert v.eps == 1e-5 and v.delta == 1e-5 * float(RECT.area)


def test_trace_objective_shrinks_zeta():
    v0, _ = solved("reaction", 0)
    v1, _ = solved("reaction", 0, objective="trace")
    assert v1.certified and v1.zeta < v0.zeta


def test_report_fields():
    v, pr = solved("ode", 0)
    rep = v.report(probes=[{"value": 1.0, "certified": True, "detail": ""}])
    for k in ("verdict", "eps", "del", "zeta", "decay_bound", "degree", "solver", "probes"):
        assert k in rep
    assert set(rep["solver"]) >= {"iters", "gap", "residuals"}


# --------------------------------------------------------------------------
# independent re-check


def _with(sol, X):
    out = copy.copy(sol)
    out.X = X
    return out


def test_corrupted_slack_rejected():
    _, pr = solved("reaction", 0)
    sol = _solve_again(pr)
    X = [x.copy() for x in sol.X]
    X[2][0, 0] += 1e-3
    bad = verify_certificate(pr, _with(sol, X))
    assert not bad.certified
    assert any("residual" in f for f in bad.failures)


def test_indefinite_block_rejected():
    _, pr = solved("reaction", 0)
    sol = _solve_again(pr)
    X = [x.copy() for x in sol.X]
    w, V = np.linalg.eigh(X[0])
    w[0] = -1e-3
    X[0] = V @ np.diag(w) @ V.T
    bad = verify_certificate(pr, _with(sol, X))
    assert not bad.certified
    assert any("eigenvalue" in f for f in bad.failures)


def test_solver_status_not_trusted():
    _, pr = solved("reaction", 0)
    sol = _solve_again(pr)
    fake = _with(sol, [np.zeros_like(x) for x in sol.X])
    assert not verify_certificate(pr, fake).certified


def test_status_alone_does_not_reject():
    # a solver that gave up on accuracy but returned a good point still certifies
    _, pr = solved("reaction", 0)
    sol = copy.copy(_solve_again(pr))
    sol.status = "numerical-failure"
    v = verify_certificate(pr, sol)
    assert v.certified and v.checks["solver_status"] == "numerical-failure"
    sol.status = "infeasible-certificate"
    assert not verify_certificate(pr, sol).certified


def _solve_again(pr):
    from pie2d.sdp import solve_sdp
    return solve_sdp(pr.sdp)


# --------------------------------------------------------------------------
# properties


def _rational(M):
    out = np.empty(M.shape, dtype=object)
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            out[i, j] = Q(float(M[i, j]))
    return out


def test_certificate_lifts_to_next_degree():
    # Omega_d is a sub-cone of Omega_{d+1}: pad the degree-0 certificate with zeros
    _, p0 = solved("reaction", 0)
    sol = _solve_again(p0)
    p1 = assemble_lpi(p0.T, p0.A, 1)
    X = [embed_gram(_rational(sol.X[0]), p0.omega.plain, p1.omega.plain),
         embed_gram(_rational(sol.X[1]), p0.omega.weighted, p1.omega.weighted),
         embed_gram(_rational(sol.X[2]), p0.slack.plain, p1.slack.plain),
         embed_gram(_rational(sol.X[3]), p0.slack.weighted, p1.slack.weighted)]
    lifted = SdpSolution("feasible", [x.astype(float) for x in X], np.zeros(p1.sdp.m), X)
    v = verify_certificate(p1, lifted)
    assert v.certified, v.failures


def test_monotone_in_degree_resolved():
    assert solved("reaction", 0)[0].certified
    assert solved("reaction", 1)[0].certified


def test_scaling_by_lambda():
    # 2A with 2 del: the same P works with the slack doubled
    v, pr = solved("reaction", 0)
    sol = _solve_again(pr)
    inst = reaction(-1)
    p2 = assemble_lpi(inst.T, inst.A.scale(Q(2)), 0, delta=2 * pr.delta)
    X = [sol.X[0], sol.X[1], 2 * sol.X[2], 2 * sol.X[3]]
    v2 = verify_certificate(p2, _with(sol, X))
    assert v2.certified, v2.failures
    assert v2.delta == pytest.approx(2 * v.delta)


def test_scaling_by_lambda_resolved():
    _, pr = solved("coupled", 0)
    inst = coupled()
    v, _ = certify(pie(inst.T, inst.A.scale(Q(2))), 0, delta=2 * pr.delta)
    assert v.certified, v.failures


def test_hs_bound_dominates_rayleigh_quotient(rng):
    _, pr = solved("reaction", 0)
    sol = _solve_again(pr)
    from pie2d.lpi_sdp import concrete_P
    P = concrete_P(pr, _rational(sol.X[0]), _rational(sol.X[1]))
    zeta = hs_bound(P)
    grid = QuadratureGrid(RECT, 10)
    for _ in range(5):
        u, _ = random_state((0, 0, 0, 1), 3, rng)
        num = inner_product(u, apply_numeric(P, u, grid), grid)
        den = inner_product(u, u, grid)
        assert num <= zeta * den * (1 + 1e-9)


def test_hs_bound_of_multiplier():
    P = identity((0, 0, 0, 1), RECT).scale(Q(3))
    assert hs_bound(P) == pytest.approx(3.0)


# --------------------------------------------------------------------------
# bisection


def test_bisection_synthetic():
    res = bisect_parameter(lambda v: v <= 0.3, 0.0, 1.0, 10)
    assert 0.3 - 1 / 1024 <= res.threshold <= 0.3
    assert len(res.probes) == 12 and res.probes[0].certified and not res.probes[1].certified


def test_bisection_minimize():
    res = bisect_parameter(lambda v: v >= -0.4, -1.0, 0.0, 10, maximize=False)
    assert -0.4 <= res.threshold <= -0.4 + 1 / 1024


def test_bisection_nothing_certified():
    res = bisect_parameter(lambda v: False, 0.0, 1.0, 5)
    assert res.threshold is None and len(res.probes) == 1


def test_bisection_empty_range():
    with pytest.raises(PIError):
        bisect_parameter(lambda v: True, 1.0, 1.0, 3)


def test_bisection_on_reaction_rate():
    # u_t = r u is certified exactly for r < 0
    res = bisect_parameter(lambda r: certify(reaction(Q(r)), 0)[0].certified, -2.0, 1.0, 6)
    assert res.threshold is not None
    assert -3 / 64 - 1e-12 <= res.threshold <= 0
