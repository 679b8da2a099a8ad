"""A small primal-dual interior-point SDP solver and SDPA sparse I/O.

Primal form, blocks X_1..X_B:

    min  <C, X>   s.t.  <A_k, X> = b_k  (k = 1..m),   X >= 0

Dual: max b'y s.t. sum_k y_k A_k + S = C, S >= 0.

Search direction is HKM (X dS + dX S = R, dX symmetrized), with the Mehrotra
predictor-corrector.  Matrices are stored per block in svec form (upper
triangle, off-diagonals scaled by sqrt 2) so <A, X> is a dot product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse

SQRT2 = math.sqrt(2.0)
STATUSES = ("feasible", "infeasible-certificate", "max-iter", "numerical-failure")


class SdpError(ValueError):
    """Malformed SDP data or unreadable SDPA file."""


# --------------------------------------------------------------------------
# svec helpers


def _tri(n: int):
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return iu, scale


def svec(X: np.ndarray) -> np.ndarray:
    iu, scale = _tri(X.shape[-1])
    return X[..., iu[0], iu[1]] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    iu, scale = _tri(n)
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = v / scale
    out[..., iu[1], iu[0]] = v / scale
    return out


def _sym(G: np.ndarray) -> np.ndarray:
    return 0.5 * (G + np.swapaxes(G, -1, -2))


# --------------------------------------------------------------------------
# problem data


@dataclass
class SdpProblem:
    """Block SDP in primal standard form.

    entries: (row, block, i, j, value) with i <= j; A_row has `value` at
    (i, j) and (j, i).  objective: (block, i, j, value), same convention.
    An empty objective means pure feasibility.
    """

    sizes: list[int]
    entries: list[tuple]
    b: np.ndarray
    objective: list[tuple] = field(default_factory=list)
    row_labels: list | None = None

    def __post_init__(self):
        self.sizes = [int(s) for s in self.sizes]
        self.b = np.asarray(self.b, dtype=float).ravel()
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise SdpError("every block needs size >= 1")
        m = len(self.b)
        for e in self.entries:
            k, blk, i, j, _ = e
            if not (0 <= k < m and 0 <= blk < len(self.sizes) and 0 <= i <= j < self.sizes[blk]):
                raise SdpError(f"bad constraint entry {e}")
        for e in self.objective:
            blk, i, j, _ = e
            if not (0 <= blk < len(self.sizes) and 0 <= i <= j < self.sizes[blk]):
                raise SdpError(f"bad objective entry {e}")

    @property
    def m(self) -> int:
        return len(self.b)

    # sparse svec matrices, one m x N_b matrix per block
    def block_matrices(self) -> list[sparse.csr_matrix]:
        rows = [[] for _ in self.sizes]
        cols = [[] for _ in self.sizes]
        vals = [[] for _ in self.sizes]
        for k, blk, i, j, v in self.entries:
            n = self.sizes[blk]
            rows[blk].append(k)
            cols[blk].append(i * n - i * (i - 1) // 2 + (j - i))
            vals[blk].append(float(v) * (1.0 if i == j else SQRT2))
        out = []
        for blk, n in enumerate(self.sizes):
            N = n * (n + 1) // 2
            out.append(sparse.csr_matrix((vals[blk], (rows[blk], cols[blk])), shape=(self.m, N)))
        return out

    def objective_svecs(self) -> list[np.ndarray]:
        out = [np.zeros(n * (n + 1) // 2) for n in self.sizes]
        for blk, i, j, v in self.objective:
            n = self.sizes[blk]
            out[blk][i * n - i * (i - 1) // 2 + (j - i)] += float(v) * (1.0 if i == j else SQRT2)
        return out

    def objective_matrices(self) -> list[np.ndarray]:
        return [smat(c, n) for c, n in zip(self.objective_svecs(), self.sizes)]

    def apply(self, X: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for Ab, Xb in zip(self.block_matrices(), X):
            out += Ab @ svec(np.asarray(Xb, dtype=float))
        return out

    def apply_adjoint(self, y) -> list[np.ndarray]:
        y = np.asarray(y, dtype=float)
        return [smat(Ab.T @ y, n) for Ab, n in zip(self.block_matrices(), self.sizes)]

    def canonical_entries(self) -> list[tuple]:
        acc: dict[tuple, float] = {}
        for k, blk, i, j, v in self.entries:
            acc[(k, blk, i, j)] = acc.get((k, blk, i, j), 0.0) + float(v)
        return sorted((key + (v,) for key, v in acc.items() if v != 0.0))

    def canonical_objective(self) -> list[tuple]:
        acc: dict[tuple, float] = {}
        for blk, i, j, v in self.objective:
            acc[(blk, i, j)] = acc.get((blk, i, j), 0.0) + float(v)
        return sorted((key + (v,) for key, v in acc.items() if v != 0.0))


@dataclass
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98
    infeasibility_tol: float = 1e-8
    rank_tol: float = 1e-11
    facial_reduction: bool = True
    verbose: bool = False


@dataclass
class SdpSolution:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    primal_residual: float = math.inf
    dual_residual: float = math.inf
    gap: float = math.inf
    primal_objective: float = 0.0
    dual_objective: float = 0.0
    iterations: int = 0
    message: str = ""
    min_eig_X: float = 0.0
    min_eig_S: float = 0.0
    history: list[dict] = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {"status": self.status, "iters": self.iterations, "gap": self.gap,
                "residuals": {"primal": self.primal_residual, "dual": self.dual_residual},
                "min_eig_X": self.min_eig_X, "min_eig_S": self.min_eig_S,
                "message": self.message}


def measure(p: SdpProblem, X, y, S) -> dict:
    """Residuals and objectives recomputed from the matrices themselves."""
    C = p.objective_matrices()
    rp = p.apply(X) - p.b
    AtY = p.apply_adjoint(y)
    rd = math.sqrt(sum(np.sum((Cb - Sb - Ab) ** 2) for Cb, Sb, Ab in zip(C, S, AtY)))
    cn = math.sqrt(sum(np.sum(Cb ** 2) for Cb in C))
    pobj = float(sum(np.sum(Cb * Xb) for Cb, Xb in zip(C, X)))
    dobj = float(p.b @ y)
    xs = float(sum(np.sum(Xb * Sb) for Xb, Sb in zip(X, S)))
    return {"pres": float(np.linalg.norm(rp) / (1 + np.linalg.norm(p.b))),
            "dres": rd / (1 + cn), "pobj": pobj, "dobj": dobj,
            "gap": abs(xs) / (1 + abs(pobj) + abs(dobj)),
            "min_eig_X": min(float(np.linalg.eigvalsh(Xb)[0]) for Xb in X),
            "min_eig_S": min(float(np.linalg.eigvalsh(Sb)[0]) for Sb in S)}


# --------------------------------------------------------------------------
# presolve


@dataclass
class PresolveInfo:
    keep: np.ndarray          # independent rows, original indices
    consistent: bool
    inconsistency: float
    scale: np.ndarray         # row scaling applied to kept rows
    rank: int


def presolve(p: SdpProblem, rank_tol: float = 1e-11) -> PresolveInfo:
    """Drop linearly dependent rows (pivoted QR) and check b is consistent."""
    A = sparse.hstack(p.block_matrices(), format="csr")
    norms = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    zero = norms == 0
    bad_zero = float(np.max(np.abs(p.b[zero]), initial=0.0))
    live = np.nonzero(~zero)[0]
    if live.size == 0:
        return PresolveInfo(live, bad_zero <= rank_tol, bad_zero, np.ones(0), 0)
    scale = 1.0 / norms[live]
    As = sparse.diags(scale) @ A[live]
    bs = p.b[live] * scale
    dense = As.T.toarray()
    _, R, piv = sla.qr(dense, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > rank_tol * max(d[0], 1.0) * max(dense.shape)))
    indep = piv[:r]
    dep = piv[r:]
    worst = bad_zero
    if dep.size:
        coef = sla.solve_triangular(R[:r, :r], R[:r, r:], lower=False)
        pred = coef.T @ bs[indep]
        worst = max(worst, float(np.max(np.abs(pred - bs[dep]))))
    tol = 1e-9 * (1 + float(np.max(np.abs(bs), initial=0.0)))
    keep_order = np.sort(indep)
    return PresolveInfo(live[keep_order], worst <= tol, worst, scale[keep_order], r)


# --------------------------------------------------------------------------
# interior-point method


def _chol(M: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(M)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    L = _chol(X)
    W = sla.solve_triangular(L, sla.solve_triangular(L, dX, lower=True).T, lower=True)
    lam = float(np.linalg.eigvalsh(_sym(W))[0])
    return math.inf if lam >= 0 else -1.0 / lam


class _Workspace:
    def __init__(self, sizes, Ablocks, b, Csvec):
        self.sizes = sizes
        self.A = Ablocks
        self.b = b
        self.C = [smat(c, n) for c, n in zip(Csvec, sizes)]
        self.m = len(b)
        self.tri = [_tri(n) for n in sizes]
        self.active = [np.unique(Ab.nonzero()[0]) for Ab in Ablocks]

    def op(self, X) -> np.ndarray:
        out = np.zeros(self.m)
        for Ab, Xb in zip(self.A, X):
            out += Ab @ svec(Xb)
        return out

    def adj(self, y) -> list[np.ndarray]:
        return [smat(Ab.T @ y, n) for Ab, n in zip(self.A, self.sizes)]

    def schur(self, X, Sinv) -> np.ndarray:
        M = np.zeros((self.m, self.m))
        for Ab, n, Xb, Sb, rows in zip(self.A, self.sizes, X, Sinv, self.active):
            if rows.size == 0:
                continue
            N = n * (n + 1) // 2
            Asub = Ab[rows]
            if N <= 2500:
                # explicit svec form of the map A -> sym(X A S^-1)
                E = smat(np.eye(N), n)
                K = svec(_sym(Xb @ E @ Sb))
                T = np.asarray(Asub @ K)
                M[np.ix_(rows, rows)] += np.asarray(Asub @ T.T)
            else:
                for s in range(0, rows.size, 64):
                    chunk = rows[s:s + 64]
                    G = svec(_sym(Xb @ smat(Ab[chunk].toarray(), n) @ Sb))
                    M[np.ix_(rows, chunk)] += np.asarray(Asub @ G.T)
        return M

    def solve_direction(self, cho, X, S, Sinv, rp, Rd, Rc):
        # Rc is the target of X dS + dX S (nonsymmetric matrix per block)
        rhs_mats = [(Rcb - Xb @ Rdb) @ Sib for Rcb, Xb, Rdb, Sib in zip(Rc, X, Rd, Sinv)]
        rhs = rp - self.op([_sym(G) for G in rhs_mats])
        dy = _refined_solve(cho, rhs)
        AtY = self.adj(dy)
        dS = [Rdb - Ab for Rdb, Ab in zip(Rd, AtY)]
        dX = [_sym((Rcb - Xb @ dSb) @ Sib) for Rcb, Xb, dSb, Sib in zip(Rc, X, dS, Sinv)]
        return dX, dy, dS


def _refined_solve(cho, rhs, steps: int = 3):
    # iterative refinement against the unregularized Schur matrix
    M = cho[1]
    dy = sla.cho_solve(cho[0], rhs)
    for _ in range(steps):
        r = rhs - M @ dy
        if not np.all(np.isfinite(r)) or np.linalg.norm(r) <= 1e-15 * np.linalg.norm(rhs):
            break
        dy = dy + sla.cho_solve(cho[0], r)
    return dy


def _factor(M: np.ndarray):
    diag = np.diag(M).copy()
    reg = 0.0
    scale = max(float(np.max(np.abs(diag), initial=1.0)), 1e-300)
    for _ in range(8):
        try:
            return (sla.cho_factor(M + reg * np.eye(len(M)), lower=True), M, reg), reg
        except np.linalg.LinAlgError:
            reg = 1e-14 * scale if reg == 0 else reg * 100
    raise np.linalg.LinAlgError("Schur complement is not positive definite")


@dataclass
class FacialReduction:
    """Rows/columns of each block that every feasible X has zero."""

    sizes: list[int]                # original block sizes
    keep: list[np.ndarray]          # surviving indices per original block
    reduced: SdpProblem | None      # None if every block vanished
    blocks: list[int]               # original block of each reduced block
    rounds: int

    @property
    def removed(self) -> int:
        return sum(n - len(k) for n, k in zip(self.sizes, self.keep))

    def expand(self, mats: Sequence[np.ndarray], sizes: Sequence[int]) -> list[np.ndarray]:
        out = [np.zeros((n, n)) for n in sizes]
        for M, blk in zip(mats, self.blocks):
            ix = self.keep[blk]
            out[blk][np.ix_(ix, ix)] = M
        return out


def facial_reduce(p: SdpProblem) -> FacialReduction:
    """Zero-diagonal facial reduction.

    A row with b_k = 0 that touches only diagonal entries, all with one
    sign, forces those diagonals to zero; a PSD matrix with X_ii = 0 has a
    zero row i.  Entries on removed rows are dropped and the scan repeats.
    Every X of the reduced problem, padded with zeros, is feasible for p.
    """
    E = np.array([e[:4] for e in p.entries], dtype=np.int64).reshape(-1, 4)
    V = np.array([float(e[4]) for e in p.entries]).reshape(-1)
    offs = np.concatenate([[0], np.cumsum(p.sizes)])
    gi = offs[E[:, 1]] + E[:, 2]
    gj = offs[E[:, 1]] + E[:, 3]
    dead = np.zeros(offs[-1], dtype=bool)
    zero_b = p.b == 0
    rounds = 0
    while True:
        alive = ~dead[gi] & ~dead[gj] & (V != 0)
        k = E[alive, 0]
        diag = gi[alive] == gj[alive]
        m = p.m
        n_off = np.bincount(k[~diag], minlength=m)
        n_pos = np.bincount(k, weights=(V[alive] > 0), minlength=m)
        n_all = np.bincount(k, minlength=m)
        rows = zero_b & (n_all > 0) & (n_off == 0) & ((n_pos == 0) | (n_pos == n_all))
        hit = np.isin(k, np.nonzero(rows)[0]) & diag
        new = np.unique(gi[alive][hit])
        new = new[~dead[new]]
        if new.size == 0:
            break
        dead[new] = True
        rounds += 1
    keep = [np.nonzero(~dead[offs[b]:offs[b + 1]])[0] for b in range(len(p.sizes))]
    blocks = [b for b in range(len(p.sizes)) if len(keep[b])]
    fr = FacialReduction(list(p.sizes), keep, None, blocks, rounds)
    if not blocks:
        return fr
    if rounds == 0:
        fr.reduced = p
        return fr
    newpos = np.full(offs[-1], -1, dtype=np.int64)
    for nb, b in enumerate(blocks):
        newpos[offs[b] + keep[b]] = np.arange(len(keep[b]))
    bmap = {b: nb for nb, b in enumerate(blocks)}
    entries = [(int(e[0]), bmap[int(e[1])], int(newpos[a]), int(newpos[c]), val)
               for e, a, c, val, ok in zip(E, gi, gj, V, ~dead[gi] & ~dead[gj]) if ok]
    objective = []
    for blk, i, j, v in p.objective:
        a, c = offs[blk] + i, offs[blk] + j
        if not dead[a] and not dead[c]:
            objective.append((bmap[blk], int(newpos[a]), int(newpos[c]), v))
    fr.reduced = SdpProblem([len(keep[b]) for b in blocks], entries, p.b.copy(), objective,
                            p.row_labels)
    return fr


def solve_sdp(p: SdpProblem, settings: SolverSettings | None = None) -> SdpSolution:
    """Solve, with zero-diagonal facial reduction first when enabled."""
    st = settings or SolverSettings()
    if not st.facial_reduction:
        return _solve(p, st)
    fr = facial_reduce(p)
    if fr.reduced is p:
        return _solve(p, st)
    zeros = [np.zeros((n, n)) for n in p.sizes]
    if fr.reduced is None:
        sol = SdpSolution("feasible", zeros, np.zeros(p.m), zeros)
        inner_status, msg = "feasible", "every block reduced away"
    else:
        sol = _solve(fr.reduced, st)
        inner_status, msg = sol.status, sol.message
    X = fr.expand(sol.X, p.sizes)
    y = sol.y
    C = p.objective_matrices()
    S = [Cb - Ab for Cb, Ab in zip(C, p.apply_adjoint(y))]
    meas = measure(p, X, y, S)
    status = inner_status
    if status == "feasible" and meas["pres"] > st.tol:
        status = "numerical-failure"
    note = f"facial reduction removed {fr.removed} of {sum(p.sizes)} rows in {fr.rounds} rounds"
    return SdpSolution(status, X, y, S, meas["pres"], meas["dres"], meas["gap"], meas["pobj"],
                       meas["dobj"], sol.iterations, "; ".join(x for x in (msg, note) if x),
                       meas["min_eig_X"], meas["min_eig_S"], sol.history)


def _solve(p: SdpProblem, st: SolverSettings, face_retry: bool = True) -> SdpSolution:
    sizes = p.sizes
    zeros = [np.zeros((n, n)) for n in sizes]
    info = presolve(p, st.rank_tol)
    if not info.consistent:
        return SdpSolution("infeasible-certificate", zeros, np.zeros(p.m), zeros,
                           message=f"presolve: equality constraints are inconsistent "
                                   f"(mismatch {info.inconsistency:.3e})")
    Ablocks = [sparse.diags(info.scale) @ Ab[info.keep] for Ab in p.block_matrices()]
    Ablocks = [sparse.csr_matrix(Ab) for Ab in Ablocks]
    b = p.b[info.keep] * info.scale
    ws = _Workspace(sizes, Ablocks, b, p.objective_svecs())
    m = ws.m
    ntot = sum(sizes)

    def lift_y(yk):
        y = np.zeros(p.m)
        y[info.keep] = yk * info.scale
        return y

    # initial point (SDPT3-style scaling)
    anorm = [max(float(np.sqrt(sum(Ab[k].multiply(Ab[k]).sum() for Ab in Ablocks))), 1e-12)
             for k in range(m)]
    xi = max(10.0, math.sqrt(max(sizes)), max((ntot * (1 + abs(b[k])) / (1 + anorm[k])
                                               for k in range(m)), default=1.0))
    cn = max((float(np.linalg.norm(Cb)) for Cb in ws.C), default=0.0)
    eta = max(10.0, math.sqrt(max(sizes)), max(anorm, default=1.0), cn)
    X = [xi * np.eye(n) for n in sizes]
    S = [eta * np.eye(n) for n in sizes]
    y = np.zeros(m)
    best = None
    history = []

    def finish(status, it, msg=""):
        sol_y = lift_y(y)
        meas = measure(p, X, sol_y, S)
        return SdpSolution(status, [x.copy() for x in X], sol_y, [s.copy() for s in S],
                           meas["pres"], meas["dres"], meas["gap"], meas["pobj"], meas["dobj"],
                           it, msg, meas["min_eig_X"], meas["min_eig_S"], history)

    near = None                     # smallest primal residual once the gap is small

    def finish_polished(status, it, msg):
        if near is None:
            return finish(status, it, msg)
        if face_retry:
            sol = _face_retry(p, near[1], st)
            if sol is not None:
                sol.message = f"{msg}; {sol.message}"
                return sol
        # hand back the near-face iterate with the smallest primal residual,
        # after pulling it back onto Ax = b inside the cone where possible
        _, X[:], y[:], S[:] = near
        Xp = polish_primal(p, X)
        if Xp is not None:
            X[:] = Xp
        pres = measure(p, X, lift_y(y), S)["pres"]
        if pres <= st.tol and not p.objective:
            return finish("feasible", it, f"{msg}; feasible point recovered by primal polishing")
        return finish(status, it, f"{msg}; returning the iterate with primal residual "
                                  f"{pres:.2e}")

    for it in range(st.max_iter + 1):
        AX = ws.op(X)
        rp = b - AX
        AtY = ws.adj(y)
        Rd = [Cb - Sb - Ab for Cb, Sb, Ab in zip(ws.C, S, AtY)]
        xs = sum(float(np.sum(Xb * Sb)) for Xb, Sb in zip(X, S))
        mu = xs / ntot
        pobj = sum(float(np.sum(Cb * Xb)) for Cb, Xb in zip(ws.C, X))
        dobj = float(b @ y)
        meas = measure(p, X, lift_y(y), S)
        rel_gap = xs / (1 + abs(pobj) + abs(dobj))
        history.append({"iter": it, "pres": meas["pres"], "dres": meas["dres"], "gap": rel_gap})
        if st.verbose:
            print(f"  it {it:3d} pres {meas['pres']:.2e} dres {meas['dres']:.2e} "
                  f"gap {rel_gap:.2e} mu {mu:.2e}")
        score = max(meas["pres"], meas["dres"], rel_gap)
        if best is None or score < best[0]:
            best = (score, [x.copy() for x in X], y.copy(), [s.copy() for s in S])
        if rel_gap <= 1e-2 and (near is None or meas["pres"] < near[0]):
            near = (meas["pres"], [x.copy() for x in X], y.copy(), [s.copy() for s in S])
        if meas["pres"] <= st.tol and meas["dres"] <= st.tol and rel_gap <= st.tol:
            return finish("feasible", it)
        # primal infeasibility: A^T y + S -> C with b'y -> +inf
        if dobj > 0:
            ray = math.sqrt(sum(float(np.sum((Ab + Sb) ** 2)) for Ab, Sb in zip(AtY, S)))
            if (ray - cn) / dobj <= st.infeasibility_tol and dobj > 1e6 * (1 + cn):
                return finish("infeasible-certificate", it,
                              "dual ray: b'y unbounded with A^T y + S bounded")
        if pobj < 0 and -pobj > 1e6 * (1 + float(np.linalg.norm(b))):
            if float(np.linalg.norm(AX)) / -pobj <= st.infeasibility_tol:
                return finish("infeasible-certificate", it, "primal ray: dual infeasible")
        if it == st.max_iter:
            break
        try:
            Sinv = [np.linalg.inv(Sb) for Sb in S]
            Sinv = [_sym(Si) for Si in Sinv]
            M = ws.schur(X, Sinv)
            cho, reg = _factor(M)
            Rc0 = [-(Xb @ Sb) for Xb, Sb in zip(X, S)]
            dXa, dya, dSa = ws.solve_direction(cho, X, S, Sinv, rp, Rd, Rc0)
            ap = min(1.0, min(_max_step(Xb, d) for Xb, d in zip(X, dXa)))
            ad = min(1.0, min(_max_step(Sb, d) for Sb, d in zip(S, dSa)))
            mu_aff = sum(float(np.sum((Xb + ap * a) * (Sb + ad * c)))
                         for Xb, a, Sb, c in zip(X, dXa, S, dSa)) / ntot
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            Rc = [sigma * mu * np.eye(n) - Xb @ Sb - a @ c
                  for n, Xb, Sb, a, c in zip(sizes, X, S, dXa, dSa)]
            dX, dy, dS = ws.solve_direction(cho, X, S, Sinv, rp, Rd, Rc)
            ap = min(1.0, st.step_fraction * min(_max_step(Xb, d) for Xb, d in zip(X, dX)))
            ad = min(1.0, st.step_fraction * min(_max_step(Sb, d) for Sb, d in zip(S, dS)))
        except (np.linalg.LinAlgError, ValueError) as exc:
            _, X, y, S = best
            cond = _cond_estimate(X)
            return finish_polished(
                "numerical-failure", it,
                f"{exc}; min eig X {min(np.linalg.eigvalsh(x)[0] for x in X):.2e}, "
                f"condition estimate {cond:.2e}")
        X = [Xb + ap * d for Xb, d in zip(X, dX)]
        y = y + ad * dy
        S = [Sb + ad * d for Sb, d in zip(S, dS)]
    _, X, y, S = best
    return finish_polished("max-iter", st.max_iter,
                           "iteration limit reached; best iterate returned")


def face_problem(p: SdpProblem, V: Sequence[np.ndarray]) -> SdpProblem:
    """The SDP restricted to X_b = V_b W_b V_b' (every V_b with >= 1 column)."""
    entries, objective = [], []
    Ab = p.block_matrices()
    C = p.objective_matrices()
    for blk, (A, Vb, Cb) in enumerate(zip(Ab, V, C)):
        r = Vb.shape[1]
        iu, scale = _tri(r)
        E = smat(np.eye(len(scale)), r)
        # <A_k, V W V'> in terms of the upper triangle of W
        Mk = np.asarray(A @ svec(Vb @ E @ Vb.T).T) / scale
        rows, cols = np.nonzero(np.abs(Mk) > 1e-14 * max(1.0, float(np.abs(Mk).max(initial=0))))
        entries += [(int(k), blk, int(iu[0][c]), int(iu[1][c]), float(Mk[k, c]))
                    for k, c in zip(rows, cols)]
        Cr = Vb.T @ Cb @ Vb
        objective += [(blk, int(i), int(j), float(Cr[i, j])) for i, j in zip(*iu) if Cr[i, j]]
    return SdpProblem([Vb.shape[1] for Vb in V], entries, p.b.copy(), objective)


def _face_retry(p: SdpProblem, X: Sequence[np.ndarray], st: SolverSettings,
                cuts=(1e-6,), max_iter: int = 40, max_work: float = 2e8) -> SdpSolution | None:
    """Re-solve on the face spanned by the non-negligible eigenvectors of X.

    Close to a face of the feasible set the Schur systems degrade before the
    residuals converge.  The face is read off the spectrum of a near-optimal
    iterate; a feasible point of the restricted problem is feasible for p.
    """
    if sum(n ** 4 for n in p.sizes) > max_work:
        return None
    eig = [np.linalg.eigh(_sym(np.asarray(Xb, dtype=float))) for Xb in X]
    top = max(max(float(w[-1]) for w, _ in eig), 1e-300)
    tried = set()
    for cut in cuts:
        V = [Vb[:, w > cut * top] for w, Vb in eig]
        ranks = tuple(v.shape[1] for v in V)
        if ranks in tried or ranks == tuple(p.sizes) or min(ranks) == 0:
            continue
        tried.add(ranks)
        sub = face_problem(p, V)
        sol = _solve(sub, replace(st, max_iter=min(st.max_iter, max_iter)), face_retry=False)
        if sol.status != "feasible":
            continue
        Xf = [_sym(Vb @ W @ Vb.T) for Vb, W in zip(V, sol.X)]
        C = p.objective_matrices()
        S = [Cb - Ab for Cb, Ab in zip(C, p.apply_adjoint(sol.y))]
        meas = measure(p, Xf, sol.y, S)
        if meas["pres"] > st.tol or meas["min_eig_X"] < -st.tol * max(1.0, top):
            continue
        return SdpSolution("feasible", Xf, sol.y, S, meas["pres"], meas["dres"], meas["gap"],
                           meas["pobj"], meas["dobj"], sol.iterations,
                           f"re-solved on a face of ranks {list(ranks)} of {p.sizes}",
                           meas["min_eig_X"], meas["min_eig_S"], sol.history)
    return None


def polish_primal(p: SdpProblem, X: Sequence[np.ndarray], steps: int = 12,
                  max_entries: float = 2e7) -> list[np.ndarray] | None:
    """Reduce |A(X) - b| while keeping X PSD (affine-scaling projection).

    With X = L L', write the update as L (I + a H) L' where H is the
    minimum-norm solution of A(L H L') = b - A(X).  Directions in which X
    is nearly singular are barely moved, so near a face the step follows it.
    The step a is cut so that I + a H keeps eigenvalues >= 0.1.
    Returns None if the data are too large for the dense maps.
    """
    if any(p.m * n * n > max_entries for n in p.sizes):
        return None
    Ad = [smat(A.toarray(), n) for A, n in zip(p.block_matrices(), p.sizes)]   # (m, n, n)
    X = [_sym(np.asarray(Xb, dtype=float)) for Xb in X]
    bn = 1 + float(np.linalg.norm(p.b))
    res = float(np.linalg.norm(p.apply(X) - p.b)) / bn
    for _ in range(steps):
        Ls, cols = [], []
        for Xb, Ak in zip(X, Ad):
            w, V = np.linalg.eigh(Xb)
            L = V * np.sqrt(np.maximum(w, 0.0))
            Ls.append(L)
            cols.append(svec(L.T @ Ak @ L))                    # <A_k, L E L'> = <L' A_k L, E>
        M = np.hstack(cols)
        h = np.linalg.lstsq(M, p.b - p.apply(X), rcond=1e-12)[0]
        Hs, k = [], 0
        for L in Ls:
            r = L.shape[1]
            R = r * (r + 1) // 2
            Hs.append(smat(h[k:k + R], r))
            k += R
        low = min(float(np.linalg.eigvalsh(H)[0]) for H in Hs)
        a = 1.0 if low >= -0.9 else 0.9 / -low
        Xn = [_sym(L @ (np.eye(L.shape[1]) + a * H) @ L.T) for L, H in zip(Ls, Hs)]
        rn = float(np.linalg.norm(p.apply(Xn) - p.b)) / bn
        if rn >= res:
            break
        improved = rn < 0.9 * res
        X, res = Xn, rn
        if not improved:
            break
    return X


def _cond_estimate(X) -> float:
    out = 1.0
    for Xb in X:
        ev = np.linalg.eigvalsh(Xb)
        if ev[0] > 0:
            out = max(out, ev[-1] / ev[0])
        else:
            return math.inf
    return out


# --------------------------------------------------------------------------
# SDPA sparse format
#
# Our primal (min <C,X>, <A_k,X> = b_k) is the dual side of SDPA's pair, so
# the file carries c = b, F_0 = -C and F_k = A_k.


def _num(v: float) -> str:
    return "%.17g" % float(v)


def write_sdpa(p: SdpProblem, path, comment: str = "pie2d") -> None:
    lines = [f'"{comment}"', str(p.m), str(len(p.sizes)), " ".join(str(s) for s in p.sizes),
             " ".join(_num(v) for v in p.b)]
    for blk, i, j, v in p.canonical_objective():
        lines.append(f"0 {blk + 1} {i + 1} {j + 1} {_num(-v)}")
    for k, blk, i, j, v in p.canonical_entries():
        lines.append(f"{k + 1} {blk + 1} {i + 1} {j + 1} {_num(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _tokens(text: str) -> list[str]:
    out = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln[0] in '"*':
            continue
        out.extend(ln.replace(",", " ").replace("{", " ").replace("}", " ")
                   .replace("(", " ").replace(")", " ").split())
    return out


def read_sdpa(path) -> SdpProblem:
    toks = _tokens(Path(path).read_text())
    try:
        m = int(toks[0])
        nb = int(toks[1])
        raw_sizes = [int(t) for t in toks[2:2 + nb]]
        pos = 2 + nb
        b = np.array([float(t) for t in toks[pos:pos + m]])
        pos += m
        rest = toks[pos:]
    except (IndexError, ValueError) as exc:
        raise SdpError(f"malformed SDPA header: {exc}") from exc
    if len(rest) % 5:
        raise SdpError("SDPA entry lines must have 5 fields")
    sizes = [abs(s) for s in raw_sizes]
    entries, objective = [], []
    for t in range(0, len(rest), 5):
        k, blk, i, j = (int(v) for v in rest[t:t + 4])
        v = float(rest[t + 4])
        i, j = min(i, j) - 1, max(i, j) - 1
        if raw_sizes[blk - 1] < 0 and i != j:
            raise SdpError("off-diagonal entry in a diagonal block")
        if k == 0:
            objective.append((blk - 1, i, j, -v))
        else:
            entries.append((k - 1, blk - 1, i, j, v))
    return SdpProblem(sizes, entries, b, objective)


def write_sdpa_solution(sol: SdpSolution, path) -> None:
    """Solution in the sparse SDPA/CSDP layout: y, then Z (matno 1) and X (matno 2)."""
    lines = [" ".join(_num(v) for v in sol.y)]
    for matno, mats in ((1, sol.S), (2, sol.X)):
        for blk, M in enumerate(mats):
            n = M.shape[0]
            for i in range(n):
                for j in range(i, n):
                    if M[i, j] != 0.0:
                        lines.append(f"{matno} {blk + 1} {i + 1} {j + 1} {_num(M[i, j])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_sdpa_solution(path, sizes: Sequence[int]) -> SdpSolution:
    text = Path(path).read_text().splitlines()
    if not text:
        raise SdpError("empty solution file")
    y = np.array([float(t) for t in text[0].split()])
    S = [np.zeros((n, n)) for n in sizes]
    X = [np.zeros((n, n)) for n in sizes]
    for ln in text[1:]:
        if not ln.strip():
            continue
        parts = ln.split()
        if len(parts) != 5:
            raise SdpError(f"bad solution line {ln!r}")
        matno, blk, i, j = (int(v) for v in parts[:4])
        v = float(parts[4])
        M = (S, X)[matno - 1][blk - 1]
        M[i - 1, j - 1] = v
        M[j - 1, i - 1] = v
    return SdpSolution("feasible", X, y, S, message=f"read from {path}")
