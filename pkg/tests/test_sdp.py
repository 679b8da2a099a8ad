"""Embedded SDP solver: analytic instances, constructed-feasible instances, SDPA I/O."""
import numpy as np
import pytest

from pie2d.sdp import (
    SdpProblem, SolverSettings, presolve, read_sdpa, read_sdpa_solution, solve_sdp,
    write_sdpa, write_sdpa_solution,
)


def _entry(k, blk, i, j, v):
    return (k, blk, min(i, j), max(i, j), v)


def random_feasible(rng, sizes=(4, 3), m=8, with_objective=True):
    """A(X0) = b for a PSD X0; objective C = S0 + A^T y0 with S0 PSD, so both sides are feasible."""
    entries = []
    for k in range(m):
        for blk, n in enumerate(sizes):
            for _ in range(3):
                i, j = rng.integers(0, n, 2)
                entries.append(_entry(k, blk, i, j, float(rng.normal())))
    p0 = SdpProblem(list(sizes), entries, np.zeros(m))
    X0 = []
    for n in sizes:
        G = rng.normal(size=(n, n))
        X0.append(G @ G.T + 0.1 * np.eye(n))
    b = p0.apply(X0)
    c_entries = []
    if with_objective:
        y0 = rng.normal(size=m)
        S0 = []
        for n in sizes:
            G = rng.normal(size=(n, n))
            S0.append(G @ G.T + 0.1 * np.eye(n))
        AtY = p0.apply_adjoint(y0)
        for blk, n in enumerate(sizes):
            Cb = S0[blk] + AtY[blk]
            for i in range(n):
                for j in range(i, n):
                    c_entries.append((blk, i, j, float(Cb[i, j])))
    return SdpProblem(list(sizes), entries, b, c_entries)


def test_trace_minimization_analytic():
    # min <I, X> s.t. X11 = 1 on 2x2 -> 1 at e1 e1^T
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0)], np.array([1.0]), [(0, 0, 0, 1.0), (0, 1, 1, 1.0)])
    sol = solve_sdp(p)
    assert sol.status == "feasible"
    assert abs(sol.primal_objective - 1) < 1e-7
    assert np.allclose(sol.X[0], [[1, 0], [0, 0]], atol=1e-6)


def test_offdiagonal_analytic():
    # min -2 X12 s.t. X11 = X22 = 1 -> X12 = 1, value -2
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0), (1, 0, 1, 1, 1.0)], np.array([1.0, 1.0]),
                   [(0, 0, 1, -1.0)])
    sol = solve_sdp(p)
    assert sol.status == "feasible" and abs(sol.primal_objective + 2) < 1e-7


def test_two_blocks_analytic():
    # min X_a + X_b (1x1 blocks) s.t. X_a + X_b = 3, X_a - X_b = 1 -> X = (2, 1)
    p = SdpProblem([1, 1], [(0, 0, 0, 0, 1.0), (0, 1, 0, 0, 1.0),
                            (1, 0, 0, 0, 1.0), (1, 1, 0, 0, -1.0)], np.array([3.0, 1.0]),
                   [(0, 0, 0, 1.0), (1, 0, 0, 1.0)])
    sol = solve_sdp(p)
    assert abs(sol.X[0][0, 0] - 2) < 1e-7 and abs(sol.X[1][0, 0] - 1) < 1e-7


def test_eigenvalue_analytic():
    # min <M, X> s.t. tr X = 1 -> lambda_min(M)
    M = np.array([[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]])
    c = [(0, i, j, M[i, j]) for i in range(3) for j in range(i, 3)]
    p = SdpProblem([3], [(0, 0, i, i, 1.0) for i in range(3)], np.array([1.0]), c)
    sol = solve_sdp(p)
    assert abs(sol.primal_objective - np.linalg.eigvalsh(M)[0]) < 1e-7


def test_feasibility_problem_has_psd_solution():
    # X11 = 1, X22 = 1, X12 = 1/2: any PSD completion
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0), (1, 0, 1, 1, 1.0), (2, 0, 0, 1, 0.5)],
                   np.array([1.0, 1.0, 0.5]))
    sol = solve_sdp(p)
    assert sol.status == "feasible"
    assert sol.primal_residual < 1e-8 and np.linalg.eigvalsh(sol.X[0])[0] > -1e-9


def test_contradictory_constraints_caught_in_presolve():
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0), (1, 0, 0, 0, 1.0)], np.array([1.0, 2.0]))
    info = presolve(p)
    assert not info.consistent
    assert solve_sdp(p).status == "infeasible-certificate"


def test_dependent_rows_dropped():
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0), (1, 0, 0, 0, 2.0), (2, 0, 1, 1, 1.0)],
                   np.array([1.0, 2.0, 3.0]))
    info = presolve(p)
    assert info.consistent and len(info.keep) == 2
    assert solve_sdp(p).status == "feasible"


def test_infeasible_psd_detected():
    # X11 = -1 is linear-consistent but has no PSD solution
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0)], np.array([-1.0]))
    sol = solve_sdp(p)
    assert sol.status == "infeasible-certificate"


@pytest.mark.parametrize("seed", range(20))
def test_constructed_feasible(seed):
    rng = np.random.default_rng(seed)
    sizes = tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(1, 4))))
    p = random_feasible(rng, sizes, m=int(rng.integers(2, 10)))
    sol = solve_sdp(p)
    assert sol.status == "feasible"
    assert sol.primal_residual <= 1e-8 and sol.dual_residual <= 1e-8
    assert sol.gap <= 1e-8


def test_solution_residuals_recomputed(rng):
    p = random_feasible(rng)
    sol = solve_sdp(p)
    r = p.apply(sol.X) - p.b
    assert abs(np.linalg.norm(r) / (1 + np.linalg.norm(p.b)) - sol.primal_residual) < 1e-14


def test_max_iter_status(rng):
    p = random_feasible(rng, (5, 5), 10)
    sol = solve_sdp(p, SolverSettings(max_iter=2))
    assert sol.status == "max-iter" and sol.iterations == 2


def test_sdpa_roundtrip_bitwise(tmp_path, rng):
    p = random_feasible(rng, (3, 4, 2), 6)
    path = tmp_path / "p.dat-s"
    write_sdpa(p, path)
    q = read_sdpa(path)
    assert q.sizes == p.sizes
    assert np.array_equal(q.b, p.b)
    assert p.canonical_entries() == q.canonical_entries()
    assert p.canonical_objective() == q.canonical_objective()
    # writing the re-read problem gives identical bytes
    path2 = tmp_path / "q.dat-s"
    write_sdpa(q, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_sdpa_solution_roundtrip(tmp_path, rng):
    p = random_feasible(rng, (3, 2), 4)
    sol = solve_sdp(p)
    path = tmp_path / "s.sol"
    write_sdpa_solution(sol, path)
    back = read_sdpa_solution(path, p.sizes)
    assert all(np.array_equal(a, b) for a, b in zip(back.X, sol.X))
    assert np.array_equal(back.y, sol.y)


def test_sdpa_format_header(tmp_path):
    p = SdpProblem([2], [(0, 0, 0, 1, 0.1)], np.array([1 / 3]))
    path = tmp_path / "h.dat-s"
    write_sdpa(p, path)
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith(('"', "*"))]
    assert body[0] == "1" and body[1] == "1" and body[2] == "2"
    assert body[3] == "0.33333333333333331"
    assert body[4] == "1 1 1 2 0.10000000000000001"


def test_face_problem_matches_restriction(rng):
    from pie2d.sdp import face_problem
    p = random_feasible(rng, (4, 3), 5)
    V = [np.linalg.qr(rng.normal(size=(n, 2)))[0] for n in p.sizes]
    W = []
    for _ in p.sizes:
        G = rng.normal(size=(2, 2))
        W.append(G @ G.T)
    sub = face_problem(p, V)
    assert sub.sizes == [2, 2]
    assert np.allclose(sub.apply(W), p.apply([v @ w @ v.T for v, w in zip(V, W)]), atol=1e-12)
    C = p.objective_matrices()
    got = sum(float(np.sum(c * w)) for c, w in zip(sub.objective_matrices(), W))
    want = sum(float(np.sum(c * (v @ w @ v.T))) for c, v, w in zip(C, V, W))
    assert abs(got - want) < 1e-10


def test_face_only_feasible_problem():
    # X = [[1, t], [t, s]] with X11 = 1, X22 = 0: the feasible set is one point on a face
    p = SdpProblem([2], [(0, 0, 0, 0, 1.0), (1, 0, 1, 1, 1.0)], np.array([1.0, 0.0]))
    sol = solve_sdp(p)
    assert sol.primal_residual <= 1e-6
    assert sol.min_eig_X >= -1e-8


def test_primal_polish_on_rank_deficient_point(rng):
    from pie2d.sdp import polish_primal
    p = random_feasible(rng, (5, 4), 6, with_objective=False)
    # a rank-deficient PSD point with a small residual
    X = []
    for n in p.sizes:
        G = rng.normal(size=(n, n - 2))
        X.append(G @ G.T)
    b = p.apply(X)
    q = SdpProblem(p.sizes, p.entries, b + 1e-5 * rng.normal(size=p.m))
    Y = polish_primal(q, X)
    before = np.linalg.norm(q.apply(X) - q.b)
    after = np.linalg.norm(q.apply(Y) - q.b)
    assert after < 1e-3 * before
    assert min(np.linalg.eigvalsh(y)[0] for y in Y) >= -1e-12
