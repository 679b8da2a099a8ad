"""Numerical oracles: Gauss-Legendre quadrature application of PI operators.

Everything here is independent of the symbolic composition code: kernels
are only ever evaluated pointwise, and integrals with variable limits are
computed by remapping the fixed Gauss nodes onto [a, x] or [x, b] for each
output point.

An intermediate result (a function tabulated at grid nodes) is made
callable again by tensor Legendre interpolation, which reproduces
polynomials of degree < order in each variable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping

import numpy as np
from numpy.polynomial import legendre as npleg

from .pi_algebra import COMPS, PIOp, has_dim
from .poly_core import Q, PolyMatrix, Rect, monomial_exps

FnLike = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadratureGrid:
    rect: Rect
    order: int = 12

    def __post_init__(self):
        t, w = npleg.leggauss(self.order)
        object.__setattr__(self, "_t", (t + 1) / 2)
        object.__setattr__(self, "_w", w / 2)

    @property
    def ref_nodes(self) -> np.ndarray:
        return self._t

    @property
    def ref_weights(self) -> np.ndarray:
        return self._w

    def nodes(self, k: int) -> np.ndarray:
        lo, hi = float(self.rect.lo(k)), float(self.rect.hi(k))
        return lo + (hi - lo) * self._t

    def weights(self, k: int) -> np.ndarray:
        lo, hi = float(self.rect.lo(k)), float(self.rect.hi(k))
        return (hi - lo) * self._w

    def points(self, comp: str) -> tuple[np.ndarray, np.ndarray]:
        """Flattened output nodes (xs, ys) for a component."""
        if comp == "xy":
            X, Y = np.meshgrid(self.nodes(0), self.nodes(1), indexing="ij")
            return X.ravel(), Y.ravel()
        if comp == "x":
            return self.nodes(0), np.zeros(self.order)
        if comp == "y":
            return np.zeros(self.order), self.nodes(1)
        return np.zeros(1), np.zeros(1)

    def point_weights(self, comp: str) -> np.ndarray:
        if comp == "xy":
            return np.outer(self.weights(0), self.weights(1)).ravel()
        if comp == "x":
            return self.weights(0)
        if comp == "y":
            return self.weights(1)
        return np.ones(1)


class SampledFn:
    """Vector-valued function on R^n0 x L2[x] x L2[y] x L2[x,y].

    Each component is either a callable f(xs, ys) -> (n, *xs.shape) or a
    table of values at the grid points (n, npoints), which is interpolated.
    """

    def __init__(self, sizes, parts: Mapping[str, FnLike | np.ndarray], grid: QuadratureGrid | None = None):
        self.sizes = tuple(sizes)
        self.parts = dict(parts)
        self.grid = grid
        self._coef: dict[str, np.ndarray] = {}

    def size(self, comp: str) -> int:
        return self.sizes[COMPS.index(comp)]

    @classmethod
    def from_polys(cls, sizes, polys: Mapping[str, PolyMatrix]) -> "SampledFn":
        parts = {}
        for comp, p in polys.items():
            pf = p.to_float()

            def fn(xs, ys, pf=pf):
                xs, ys = np.broadcast_arrays(np.asarray(xs, float), np.asarray(ys, float))
                return pf.eval_numeric(x=xs, y=ys)[:, 0]

            parts[comp] = fn
        return cls(sizes, parts)

    def at(self, comp: str, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        n = self.size(comp)
        xs, ys = np.broadcast_arrays(np.asarray(xs, float), np.asarray(ys, float))
        if n == 0 or comp not in self.parts:
            return np.zeros((n,) + xs.shape)
        part = self.parts[comp]
        if callable(part):
            out = np.asarray(part(xs, ys), dtype=float)
            if out.ndim == 1:
                out = out.reshape((n,) + (1,) * xs.ndim)
            return np.broadcast_to(out, (n,) + xs.shape)
        return self._interp(comp, xs, ys)

    def _interp(self, comp: str, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        tab = np.asarray(self.parts[comp], dtype=float)
        n = tab.shape[0]
        g = self.grid
        q = g.order
        if comp == "0":
            return np.broadcast_to(tab.reshape(n, *([1] * xs.ndim)), (n,) + xs.shape)
        if comp not in self._coef:
            t = 2 * g.ref_nodes - 1
            V = npleg.legvander(t, q - 1)
            Vi = np.linalg.inv(V)
            if comp == "xy":
                T = tab.reshape(n, q, q)
                self._coef[comp] = np.einsum("ij,njk,lk->nil", Vi, T, Vi)
            else:
                self._coef[comp] = tab @ Vi.T
        c = self._coef[comp]

        def ref(v, k):
            lo, hi = float(g.rect.lo(k)), float(g.rect.hi(k))
            return 2 * (v - lo) / (hi - lo) - 1

        if comp == "xy":
            Px = npleg.legvander(ref(xs, 0), q - 1)
            Py = npleg.legvander(ref(ys, 1), q - 1)
            return np.einsum("nij,...i,...j->n...", c, Px, Py)
        k = 0 if comp == "x" else 1
        P = npleg.legvander(ref(xs if k == 0 else ys, k), q - 1)
        return np.einsum("ni,...i->n...", c, P)

    def on_grid(self, comp: str, grid: QuadratureGrid) -> np.ndarray:
        xs, ys = grid.points(comp)
        return self.at(comp, xs, ys)

    def __sub__(self, other: "SampledFn") -> "SampledFn":
        parts = {}
        for comp in COMPS:
            if self.size(comp):
                parts[comp] = (lambda xs, ys, c=comp: self.at(c, xs, ys) - other.at(c, xs, ys))
        return SampledFn(self.sizes, parts)


def _dim_nodes(tag, k: int, out_pts: np.ndarray, grid: QuadratureGrid):
    """Integration nodes/weights (P, q') for one dimension of one term."""
    t, w = grid.ref_nodes, grid.ref_weights
    lo, hi = float(grid.rect.lo(k)), float(grid.rect.hi(k))
    P = out_pts.shape[0]
    if tag == 0:
        return out_pts[:, None], np.ones((P, 1))
    if tag == 1:
        L = (out_pts - lo)[:, None]
        return lo + L * t[None, :], L * w[None, :]
    if tag == 2:
        L = (hi - out_pts)[:, None]
        return out_pts[:, None] + L * t[None, :], L * w[None, :]
    if tag == "i":
        return np.broadcast_to(lo + (hi - lo) * t, (P, len(t))), np.broadcast_to((hi - lo) * w, (P, len(t)))
    return np.zeros((P, 1)), np.ones((P, 1))


def apply_at(op: PIOp, f: SampledFn, comp: str, xs: np.ndarray, ys: np.ndarray,
             grid: QuadratureGrid) -> np.ndarray:
    """(P[op] f) on output component comp at points (xs, ys); shape (n, P)."""
    xs = np.atleast_1d(np.asarray(xs, float))
    ys = np.atleast_1d(np.asarray(ys, float))
    n = op.osz(comp)
    P = xs.shape[0]
    out = np.zeros((n, P))
    for (oc, ic), terms in op.blocks.items():
        if oc != comp:
            continue
        for key, mat in terms.items():
            th, wx = _dim_nodes(key[0], 0, xs, grid)
            nu, wy = _dim_nodes(key[1], 1, ys, grid)
            TH = th[:, :, None]
            NU = nu[:, None, :]
            K = mat.to_float().eval_numeric(x=xs[:, None, None], y=ys[:, None, None], theta=TH, nu=NU)
            K = np.broadcast_to(K, K.shape[:2] + (P, th.shape[1], nu.shape[1]))
            u = f.at(ic, TH, NU)
            u = np.broadcast_to(u, (u.shape[0], P, th.shape[1], nu.shape[1]))
            W = wx[:, :, None] * wy[:, None, :]
            out += np.einsum("rcpab,cpab,pab->rp", K, u, W)
    return out


def apply_numeric(op: PIOp, f: SampledFn, grid: QuadratureGrid) -> SampledFn:
    """Tabulate P[op] f at the grid nodes; the result is interpolable."""
    parts = {}
    for comp in COMPS:
        if op.osz(comp):
            xs, ys = grid.points(comp)
            parts[comp] = apply_at(op, f, comp, xs, ys, grid)
    return SampledFn(op.out_sizes, parts, grid)


def inner_product(f: SampledFn, g: SampledFn, grid: QuadratureGrid, comp: str = "xy") -> float:
    fv = f.on_grid(comp, grid)
    gv = g.on_grid(comp, grid)
    return float(np.sum(fv * gv * grid.point_weights(comp)[None, :]))


def rll_inner_product(f: SampledFn, g: SampledFn, grid: QuadratureGrid) -> float:
    """Inner product on R x L2[x] x L2[y] x L2[x,y]."""
    return sum(inner_product(f, g, grid, c) for c in COMPS if f.size(c))


def grid_values(f: SampledFn, grid: QuadratureGrid) -> np.ndarray:
    """All component values on the grid, concatenated (for sup-norm checks)."""
    parts = [f.on_grid(c, grid).ravel() for c in COMPS if f.size(c)]
    return np.concatenate(parts) if parts else np.zeros(0)


def fd_derivative_check(N: PIOp, direction: str, f: SampledFn, grid: QuadratureGrid,
                        h: float = 1e-4) -> float:
    """Sup over interior nodes of |central FD of P[N]f - P[diff(N)]f|."""
    from .pi_calculus import diff_x, diff_y

    k = 0 if direction == "x" else 1
    M = diff_x(N) if k == 0 else diff_y(N)
    xs, ys = grid.points("xy")
    shift = [np.zeros_like(xs), np.zeros_like(ys)]
    shift[k] = np.full_like(xs, h)
    plus = apply_at(N, f, "xy", xs + shift[0], ys + shift[1], grid)
    minus = apply_at(N, f, "xy", xs - shift[0], ys - shift[1], grid)
    fd = (plus - minus) / (2 * h)
    exact = apply_at(M, f, "xy", xs, ys, grid)
    return float(np.max(np.abs(fd - exact))) if fd.size else 0.0


# --------------------------------------------------------------------------
# random test objects


def random_polymatrix(rows: int, cols: int, variables, degree: int, rng: np.random.Generator,
                      density: float = 0.6, denom: int = 4) -> PolyMatrix:
    """Random rational polynomial matrix with small numerators over `denom`."""
    terms = {}
    for e in monomial_exps(degree, variables):
        if rng.random() > density:
            continue
        arr = np.empty((rows, cols), dtype=object)
        for i in range(rows):
            for j in range(cols):
                arr[i, j] = Q(int(rng.integers(-4, 5)), denom)
        terms[e] = arr
    return PolyMatrix(rows, cols, terms)


def random_op(out_sizes, in_sizes, degree: int, rng: np.random.Generator,
              rect: Rect | None = None, density: float = 0.6) -> PIOp:
    from .pi_algebra import block_keys, key_vars
    from .poly_core import VARS

    op = PIOp(out_sizes, in_sizes, None, rect)
    for oc, r in zip(COMPS, op.out_sizes):
        for ic, c in zip(COMPS, op.in_sizes):
            if not r or not c:
                continue
            for key in block_keys(oc, ic):
                names = [VARS[v] for v in sorted(key_vars(key))]
                op._put(oc, ic, key, random_polymatrix(r, c, names, degree, rng, density))
    return op


def random_state(sizes, degree: int, rng: np.random.Generator) -> tuple[SampledFn, dict]:
    """Random polynomial element of R x L2[x] x L2[y] x L2[x,y] (float coefficients)."""
    polys = {}
    for comp, n in zip(COMPS, sizes):
        if not n:
            continue
        names = [v for v, k in (("x", 0), ("y", 1)) if has_dim(comp, k)]
        polys[comp] = random_polymatrix(n, 1, names, degree, rng, density=0.8)
    return SampledFn.from_polys(sizes, polys), polys


# --------------------------------------------------------------------------
# composition and adjoint trials (shared by tests and the CLI selftest)

_B = (1, 1, 1, 0)      # R^1 x L2[x] x L2[y]
_D2 = (0, 0, 0, 1)     # L2[x, y]
_F = (1, 1, 1, 1)      # all four components
COMPOSITION_MAPS = {
    "L_1D": ((0, 1, 0, 0), (0, 1, 0, 0), (0, 1, 0, 0)),
    "L_011": (_B, _B, _B),
    "L_2D": (_D2, _D2, _D2),
    "L1_2D->011": (_B, _B, _D2),
    "L2_2D->011": (_B, _D2, _D2),
    "L1_011->2D": (_D2, _B, _B),
    "L2_011->2D": (_D2, _D2, _B),
    "L_011->011": (_B, _D2, _B),
    "L_2D->2D": (_D2, _B, _D2),
    "L_0112": (_F, _F, _F),
}


def composition_trial(name: str, rng: np.random.Generator, grid: QuadratureGrid,
                      degree: int = 2) -> float:
    """Relative sup-norm gap between P[L(N,M)]u and P[N](P[M]u) on the grid."""
    from .pi_algebra import compose

    out, mid, inn = COMPOSITION_MAPS[name]
    N = random_op(out, mid, degree, rng, grid.rect)
    M = random_op(mid, inn, degree, rng, grid.rect)
    f, _ = random_state(inn, degree, rng)
    lhs = grid_values(apply_numeric(compose(N, M), f, grid), grid)
    rhs = grid_values(apply_numeric(N, apply_numeric(M, f, grid), grid), grid)
    return float(np.max(np.abs(lhs - rhs)) / max(1.0, float(np.max(np.abs(rhs)))))


def adjoint_trial(sizes_out, sizes_in, rng: np.random.Generator, grid: QuadratureGrid,
                  degree: int = 2) -> float:
    """|<v, P[N]u> - <P[N*]v, u>| for random N, u, v."""
    from .pi_algebra import adjoint

    N = random_op(sizes_out, sizes_in, degree, rng, grid.rect)
    u, _ = random_state(sizes_in, degree, rng)
    v, _ = random_state(sizes_out, degree, rng)
    lhs = rll_inner_product(v, apply_numeric(N, u, grid), grid)
    rhs = rll_inner_product(apply_numeric(adjoint(N), v, grid), u, grid)
    return abs(lhs - rhs)


_SEP_SLOTS = {
    (0, 1): ("theta",), (0, 2): ("nu",), (1, 0): ("x",), (2, 0): ("y",),
    (1, 2): ("x", "nu"), (2, 1): ("y", "theta"),
}


def random_separable_011(n0: int, n1: int, rng: np.random.Generator, degree: int = 0,
                         scale=Q(1, 10), rect: Rect | None = None):
    """Identity plus `scale` times random kernels; the 1D diagonal blocks use
    equal lower/upper kernels so the bundle is separable."""
    from .pi_algebra import N011

    def rnd(r, c, names):
        return random_polymatrix(r, c, names, degree, rng, density=1.0).scale(scale)

    eye = lambda n: PolyMatrix.eye(n)
    slots = {}
    if n0:
        slots[(0, 0)] = eye(n0) + rnd(n0, n0, ())
    for r in (1, 2):
        slots[(r, r, 0)] = eye(n1) + rnd(n1, n1, ())
        k = rnd(n1, n1, ("x", "theta") if r == 1 else ("y", "nu"))
        slots[(r, r, 1)] = k
        slots[(r, r, 2)] = k
    for (r, c), names in _SEP_SLOTS.items():
        rows = n0 if r == 0 else n1
        cols = n0 if c == 0 else n1
        if rows and cols:
            slots[(r, c)] = rnd(rows, cols, names)
    return N011.make(n0, n1, n0, n1, slots, rect)
