"""Positive 2D-PI operators as Gram forms Z* (g P) Z with P >= 0.

Z stacks monomial blocks, one per term structure of an operator into
L2[x,y].  For an input on L2[x,y] these are the nine blocks

    block   tags (x, y)   variables
    Z1      (0, 0)        x, y
    Z2/Z3   (1/2, 0)      x, y, theta
    Z4/Z5   (0, 1/2)      x, y, nu
    Z6..Z9  (1,1) (2,1) (1,2) (2,2)   x, y, theta, nu

An R^n0 input (coupled ODE-PDE systems) adds a block Z0 that broadcasts
constants over the rectangle, with monomials in (x, y).

The weight g >= 0 multiplies the output of Z, so Z* g P Z equals
(sqrt(g) Z)* P (sqrt(g) Z) without forming sqrt(g).  Kernels come from the
composition engine.  For a symbolic P the kernels are affine in the upper
triangle of P; `gram_affine` materializes that map in one pass of the
composition loop with the middle index left uncontracted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .pi_algebra import (
    COMPS, PIError, PIOp, _ADJ_TAG, _L_PERM, _R_PERM, _adj_map, _apply_ops, _dim_rules,
    adjoint, block_keys, compose, has_dim, key_vars,
)
from .poly_core import (
    VARS, Poly, PolyMatrix, Q, Rect, make_perm, mono_mul, mono_rename, monomial_exps,
)

BLOCK_TAGS = ((0, 0), (1, 0), (2, 0), (0, 1), (0, 2), (1, 1), (2, 1), (1, 2), (2, 2))


def bump(rect: Rect) -> Poly:
    """(x - a)(b - x)(y - c)(d - y), nonnegative on the rectangle."""
    x, y = Poly.var("x"), Poly.var("y")
    return (x - rect.a) * (Poly.const(rect.b) - x) * (y - rect.c) * (Poly.const(rect.d) - y)


@dataclass(frozen=True)
class GramBlock:
    comp: str            # input component the block reads
    key: tuple           # term tags (x, y)
    variables: tuple     # kernel variables
    monomials: tuple
    width: int           # size of the input component

    @property
    def size(self) -> int:
        return len(self.monomials) * self.width


def _blocks_for(comp: str, d: int, width: int) -> list[GramBlock]:
    keys = BLOCK_TAGS if comp == "xy" else tuple(block_keys("xy", comp))
    out = []
    for key in keys:
        vs = tuple(VARS[v] for v in sorted(key_vars(key)))
        out.append(GramBlock(comp, key, vs, tuple(monomial_exps(d, vs)), width))
    return out


@dataclass(frozen=True)
class PositivityBasis:
    """Monomial blocks of degree <= d for an operator on R^n0 x L2[x,y]^n.

    `active` optionally keeps a subset of the blocks (indices into
    `all_blocks`); any subset parameterizes a sub-cone, so certificates
    built from it stay valid.
    """

    n: int
    d: int
    rect: Rect = field(default_factory=Rect.unit)
    g: Poly = field(default_factory=lambda: Poly.const(1))
    n0: int = 0
    active: tuple[int, ...] | None = None
    degrees: tuple[int, ...] | None = None   # per entry of all_blocks; default d

    def __post_init__(self):
        if self.n < 0 or self.n0 < 0 or self.n + self.n0 == 0 or self.d < 0:
            raise PIError("positivity basis needs n + n0 >= 1 and d >= 0")
        if self.degrees is not None and (len(self.degrees) != self.n_all
                                         or min(self.degrees) < 0):
            raise PIError(f"need {self.n_all} block degrees >= 0, got {self.degrees}")
        if not self.g.varset() <= {"x", "y"}:
            raise PIError("the weight g must depend on (x, y) only")

    @property
    def in_sizes(self) -> tuple[int, int, int, int]:
        return (self.n0, 0, 0, self.n)

    @property
    def n_all(self) -> int:
        return (1 if self.n0 else 0) + (len(BLOCK_TAGS) if self.n else 0)

    @cached_property
    def all_blocks(self) -> tuple[GramBlock, ...]:
        degs = self.degrees or (self.d,) * self.n_all
        out = []
        if self.n0:
            out += _blocks_for("0", degs[0], self.n0)
        if self.n:
            k = len(out)
            out += [_blocks_for("xy", dg, self.n)[i] for i, dg in enumerate(degs[k:])]
        return tuple(out)

    @cached_property
    def blocks(self) -> tuple[GramBlock, ...]:
        if self.active is None:
            return self.all_blocks
        return tuple(self.all_blocks[i] for i in self.active)

    @property
    def scalar_sizes(self) -> tuple[int, ...]:
        return tuple(len(b.monomials) for b in self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        """q_i = n |basis_i|."""
        return tuple(b.size for b in self.blocks)

    @property
    def Q(self) -> int:
        return sum(self.sizes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out = [0]
        for s in self.sizes:
            out.append(out[-1] + s)
        return tuple(out)

    def block_range(self, i: int) -> range:
        """Rows of P for block i; row (monomial b, component k) = offset + b * width + k."""
        return range(self.offsets[i], self.offsets[i + 1])

    @cached_property
    def row_info(self) -> tuple[tuple[int, int, int], ...]:
        """(block, monomial index, component index) for every row of Z."""
        out = []
        for bi, blk in enumerate(self.blocks):
            for m in range(len(blk.monomials)):
                for k in range(blk.width):
                    out.append((bi, m, k))
        return tuple(out)

    def row_op(self, r: int, exact: bool = True) -> PIOp:
        """Row r of Z as an operator into L2[x,y]^1."""
        bi, m, k = self.row_info[r]
        blk = self.blocks[bi]
        arr = np.zeros((1, blk.width), dtype=object if exact else float)
        arr[0, k] = Q(1) if exact else 1.0
        op = PIOp((0, 0, 0, 1), self.in_sizes, None, self.rect)
        op._put("xy", blk.comp, blk.key, PolyMatrix(1, blk.width, {blk.monomials[m]: arr}, exact=exact))
        return op

    def Z_op(self, exact: bool = True) -> PIOp:
        """Z : R^n0 x L2^n -> L2[x,y]^Q."""
        op = PIOp((0, 0, 0, self.Q), self.in_sizes, None, self.rect)
        dtype = object if exact else float
        for bi, blk in enumerate(self.blocks):
            terms = {}
            for m, e in enumerate(blk.monomials):
                arr = np.zeros((self.Q, blk.width), dtype=dtype)
                for k in range(blk.width):
                    arr[self.offsets[bi] + m * blk.width + k, k] = 1
                terms[e] = arr
            op._put("xy", blk.comp, blk.key, PolyMatrix(self.Q, blk.width, terms, exact=exact),
                    accumulate=True)
        return op

    def weight_op(self, exact: bool = True, size: int = 1) -> PIOp:
        """Multiplication by g on L2[x,y]^size."""
        eye = np.eye(size, dtype=int).astype(object)
        pm = PolyMatrix(size, size, {e: eye * c for e, c in self.g.terms.items()})
        op = PIOp((0, 0, 0, size), (0, 0, 0, size), None, self.rect)
        op._put("xy", "xy", (0, 0), pm if exact else pm.to_float())
        return op

    def with_weight(self, g: Poly) -> "PositivityBasis":
        return PositivityBasis(self.n, self.d, self.rect, g, self.n0, self.active, self.degrees)


# --------------------------------------------------------------------------
# decision handles and affine kernels


@dataclass(frozen=True)
class PsdVarHandle:
    """A symbolic Q x Q PSD matrix; variables are its upper triangle."""

    name: str
    basis: PositivityBasis

    @property
    def size(self) -> int:
        return self.basis.Q

    @property
    def nvars(self) -> int:
        q = self.size
        return q * (q + 1) // 2

    def index(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return i * self.size - i * (i - 1) // 2 + (j - i)

    def block(self, i: int) -> range:
        return self.basis.block_range(i)

    def svec(self, P) -> np.ndarray:
        """Upper triangle of P in variable order."""
        P = np.asarray(P)
        iu = np.triu_indices(self.size)
        return P[iu]

    def unsvec(self, v) -> np.ndarray:
        v = np.asarray(v)
        P = np.zeros((self.size, self.size), dtype=v.dtype)
        iu = np.triu_indices(self.size)
        P[iu] = v
        P.T[iu] = v
        return P


Label = tuple  # (oc, ic, key, p, q, exps)


class AffineN:
    """PI operator whose kernel coefficients are affine in PSD handles.

    Coefficient `labels[r]` equals const[r] + sum_c A[r, c] * vars[c], where
    vars concatenates the upper triangles of `handles` in order.
    """

    def __init__(self, out_sizes, in_sizes, rect: Rect, handles: Sequence[PsdVarHandle],
                 labels: Sequence[Label], rows, cols, vals, const=None, exact: bool = True):
        self.out_sizes = tuple(out_sizes)
        self.in_sizes = tuple(in_sizes)
        self.rect = rect
        self.handles = tuple(handles)
        self.labels = list(labels)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=object if exact else float)
        self.exact = exact
        n = len(self.labels)
        if const is None:
            const = np.zeros(n, dtype=object if exact else float)
            if exact:
                const[:] = Q(0)
        self.const = np.asarray(const, dtype=object if exact else float)

    @property
    def col_offsets(self) -> tuple[int, ...]:
        out = [0]
        for h in self.handles:
            out.append(out[-1] + h.nvars)
        return tuple(out)

    @property
    def nvars(self) -> int:
        return self.col_offsets[-1]

    def matrix(self, dtype=float) -> sparse.csr_matrix:
        vals = self.vals.astype(float) if dtype is float else self.vals
        return sparse.csr_matrix((vals, (self.rows, self.cols)),
                                 shape=(len(self.labels), self.nvars), dtype=dtype)

    def values(self, *mats) -> np.ndarray:
        """Coefficient values at concrete matrices, one per handle."""
        if len(mats) != len(self.handles):
            raise PIError(f"expected {len(self.handles)} matrices, got {len(mats)}")
        parts = []
        for h, P in zip(self.handles, mats):
            P = np.asarray(P)
            if P.shape != (h.size, h.size):
                raise PIError(f"{h.name} has shape {P.shape}, expected {(h.size, h.size)}")
            parts.append(h.svec(P))
        x = np.concatenate(parts) if parts else np.zeros(0)
        exact = self.exact and x.dtype == object
        out = self.const.copy() if exact else self.const.astype(float)
        contrib = self.vals * x[self.cols] if exact else self.vals.astype(float) * x[self.cols].astype(float)
        np.add.at(out, self.rows, contrib)
        return out

    def evaluate(self, *mats) -> PIOp:
        return labels_to_op(self.labels, self.values(*mats), self.out_sizes, self.in_sizes, self.rect)

    def constant_op(self) -> PIOp:
        return labels_to_op(self.labels, self.const, self.out_sizes, self.in_sizes, self.rect)


def op_to_labels(op: PIOp) -> dict[Label, object]:
    """Flatten kernels to {(oc, ic, key, p, q, exps): coefficient}."""
    out = {}
    for oc, ic, key, mat in op.iter_terms():
        for e, arr in mat.terms.items():
            for p, q in zip(*np.nonzero(arr != 0)):
                out[(oc, ic, key, int(p), int(q), e)] = arr[p, q]
    return out


def labels_to_op(labels: Sequence[Label], values, out_sizes, in_sizes, rect: Rect) -> PIOp:
    values = np.asarray(values)
    exact = values.dtype == object
    grouped: dict[tuple, dict] = {}
    for lab, v in zip(labels, values):
        if v == 0:
            continue
        oc, ic, key, p, q, e = lab
        terms = grouped.setdefault((oc, ic, key), {})
        if e not in terms:
            r, c = out_sizes[COMPS.index(oc)], in_sizes[COMPS.index(ic)]
            arr = np.zeros((r, c), dtype=object if exact else float)
            if exact:
                arr[:] = Q(0)
            terms[e] = arr
        terms[e][p, q] += v
    op = PIOp(out_sizes, in_sizes, None, rect)
    for (oc, ic, key), terms in grouped.items():
        r, c = op.osz(oc), op.isz(ic)
        op._put(oc, ic, key, PolyMatrix(r, c, terms, exact=exact), check=False, accumulate=True)
    return op


class _Collector:
    """Sparse accumulator for kernel coefficients that are linear in P.

    Entries arrive in vectorized chunks (group, p, q, column, value), where a
    group is (oc, ic, key, exps); `build` interns (group, p, q) as labels and
    merges duplicate (label, column) pairs.
    """

    def __init__(self, exact: bool):
        self.exact = exact
        self.groups: dict[tuple, int] = {}
        self.chunks: list[tuple] = []

    def gid(self, group: tuple) -> int:
        return self.groups.setdefault(group, len(self.groups))

    def add_chunk(self, group, p, q, col, val):
        g = self.gid(group)
        p = np.asarray(p, dtype=np.int64).ravel()
        self.chunks.append((np.full(p.shape, g, dtype=np.int64), p,
                            np.asarray(q, dtype=np.int64).ravel(),
                            np.asarray(col, dtype=np.int64).ravel(),
                            np.asarray(val, dtype=object if self.exact else float).ravel()))

    def add_op(self, op: PIOp, col: int, scale=1):
        for oc, ic, key, mat in op.iter_terms():
            for e, arr in mat.terms.items():
                p, q = np.nonzero(arr != 0)
                v = arr[p, q]
                self.add_chunk((oc, ic, key, e), p, q, np.full(p.shape, col),
                               v * scale if scale != 1 else v)

    def build(self, op_like: PIOp, handles, const_op: PIOp | None = None) -> AffineN:
        dtype = object if self.exact else float
        const_labels = op_to_labels(const_op) if const_op is not None else {}
        for lab in const_labels:
            self.gid(lab[:3] + lab[5:])
        if self.chunks:
            g, p, q, c, v = (np.concatenate(x) for x in zip(*self.chunks))
        else:
            g = p = q = c = np.zeros(0, dtype=np.int64)
            v = np.zeros(0, dtype=dtype)
        W = int(max(max(op_like.out_sizes), max(op_like.in_sizes))) + 1
        lab_code = (g * W + p) * W + q
        const_codes = {}
        for lab, val in const_labels.items():
            code = (self.groups[lab[:3] + lab[5:]] * W + lab[3]) * W + lab[4]
            const_codes[code] = val
        ncols = int(c.max()) + 1 if c.size else 1
        pair = lab_code * ncols + c
        upair, inv = np.unique(pair, return_inverse=True)
        vals = np.zeros(upair.shape, dtype=dtype)
        if self.exact:
            vals[:] = Q(0)
        np.add.at(vals, inv, v)
        keep = vals != 0
        upair, vals = upair[keep], vals[keep]
        codes = np.union1d(upair // ncols, np.fromiter(const_codes, dtype=np.int64,
                                                       count=len(const_codes)))
        rows = np.searchsorted(codes, upair // ncols)
        cols = upair % ncols
        inv_groups = [None] * len(self.groups)
        for grp, k in self.groups.items():
            inv_groups[k] = grp
        labels = []
        for code in codes.tolist():
            gq, qq = divmod(code, W)
            gg, pp = divmod(gq, W)
            oc, ic, key, e = inv_groups[gg]
            labels.append((oc, ic, key, pp, qq, e))
        const = np.zeros(len(codes), dtype=dtype)
        if self.exact:
            const[:] = Q(0)
        for code, val in const_codes.items():
            const[np.searchsorted(codes, code)] = val
        return AffineN(op_like.out_sizes, op_like.in_sizes, op_like.rect, handles, labels,
                       rows, cols, vals, const, self.exact)


def _sparse_side(op: PIOp, mid_is_in: bool, perm, exact: bool) -> dict:
    """{mid comp: [(other comp, key, [(renamed exps, idx_a, idx_b, vals)])]}."""
    out: dict = {}
    for (oc, ic), terms in op.blocks.items():
        mid, other = (ic, oc) if mid_is_in else (oc, ic)
        for key, mat in terms.items():
            src = mat if exact or not mat.exact else mat.to_float()
            ren = []
            for e, arr in src.terms.items():
                a, b = np.nonzero(arr != 0)
                if a.size:
                    ren.append((mono_rename(e, perm), a, b, arr[a, b]))
            out.setdefault(mid, []).append((other, key, ren))
    return out


def _outer_compose(L: PIOp, R: PIOp, handle: PsdVarHandle, col_offset: int,
                   col: _Collector, scale, with_adjoint: bool):
    """Coefficients of sum_rs P_rs L[:, r] R[s, :] (plus the adjoint).

    Same loop as `compose`, except that the middle index is not contracted:
    the product of column r of L and row s of R is credited to variable
    P_rs.  L maps L2[x,y]^Q to the input space and R the reverse.
    """
    rect = L.rect
    lo, hi = (rect.a, rect.c), (rect.b, rect.d)
    exact = col.exact
    Qn = handle.size
    lterms = _sparse_side(L, True, _L_PERM, exact)
    rterms = _sparse_side(R, False, _R_PERM, exact)
    for mc, lefts in lterms.items():
        for oc, lkey, lren in lefts:
            for ic, rkey, rren in rterms.get(mc, ()):
                rules = [_dim_rules(has_dim(oc, k), has_dim(mc, k), has_dim(ic, k),
                                    lkey[k], rkey[k], k, lo[k], hi[k]) for k in (0, 1)]
                for e1, o, r, v1 in lren:
                    for e2, s, i, v2 in rren:
                        e = mono_mul(e1, e2)
                        rr, ss = np.minimum.outer(r, s), np.maximum.outer(r, s)
                        cols = col_offset + rr * Qn - rr * (rr - 1) // 2 + (ss - rr)
                        pp = np.broadcast_to(o[:, None], cols.shape)
                        qq = np.broadcast_to(i[None, :], cols.shape)
                        prod = np.multiply.outer(v1, v2)
                        if scale != 1:
                            prod = prod * scale
                        for tx, opx in rules[0]:
                            for ty, opy in rules[1]:
                                key = (tx, ty)
                                for e3, f in _apply_ops(e, opx, opy):
                                    v = prod * (f if exact else float(f))
                                    col.add_chunk((oc, ic, key, e3), pp, qq, cols, v)
                                    if with_adjoint:
                                        m = _adj_map(tx, 0) | _adj_map(ty, 1)
                                        e4 = mono_rename(e3, make_perm(m)) if m else e3
                                        col.add_chunk((ic, oc, (_ADJ_TAG[tx], _ADJ_TAG[ty]), e4),
                                                      qq, pp, cols, v)


def gram_affine(basis: PositivityBasis, handle: PsdVarHandle, left: PIOp | None = None,
                right: PIOp | None = None, col_offset: int = 0, exact: bool = True,
                collector: _Collector | None = None, scale=1) -> _Collector:
    """Affine kernels of L* Z* (g P) Z R + (its adjoint when L != R).

    With left = right = None this is Z* g P Z itself.  Otherwise the result is
    (Z L)* gP (Z R) + (Z R)* gP (Z L), the symmetric product needed for
    A* P T + T* P A.  Entries (i, j) and (j, i) of P share one variable.
    """
    col = collector or _Collector(exact)
    G = basis.weight_op(exact, basis.Q)
    Z = basis.Z_op(exact)
    if left is None and right is None:
        _outer_compose(adjoint(Z), compose(G, Z), handle, col_offset, col, scale, False)
        return col
    ZL = compose(Z, left if exact else left.to_float())
    ZR = compose(Z, right if exact else right.to_float())
    _outer_compose(adjoint(ZL), compose(G, ZR), handle, col_offset, col, scale, True)
    return col


# --------------------------------------------------------------------------
# public maps


def lpi_param_map(basis: PositivityBasis, P) -> PIOp | AffineN:
    """Kernels of Z* (g P) Z.

    P is a concrete symmetric Q x Q matrix (exact object array or float) or a
    PsdVarHandle, in which case the affine map is returned.
    """
    if isinstance(P, PsdVarHandle):
        if P.basis != basis:
            raise PIError("handle belongs to a different basis")
        like = PIOp(basis.in_sizes, basis.in_sizes, None, basis.rect)
        return gram_affine(basis, P).build(like, (P,))
    P = np.asarray(P)
    if P.shape != (basis.Q, basis.Q):
        raise PIError(f"P has shape {P.shape}, expected {(basis.Q, basis.Q)}")
    exact = P.dtype == object
    Z = basis.Z_op(exact)
    gpoly = PolyMatrix.from_polys([[basis.g]])
    gP = {e: P * (c[0, 0] if exact else float(c[0, 0])) for e, c in gpoly.terms.items()}
    Pop = PIOp((0, 0, 0, basis.Q), (0, 0, 0, basis.Q), None, basis.rect)
    Pop._put("xy", "xy", (0, 0), PolyMatrix(basis.Q, basis.Q, gP, exact=exact))
    return compose(adjoint(Z), compose(Pop, Z))


@dataclass(frozen=True)
class Omega:
    """Omega_d: Gram forms with weights 1 and the boundary bump, P1, P2 >= 0."""

    plain: PositivityBasis
    weighted: PositivityBasis

    @property
    def handles(self) -> tuple[PsdVarHandle, PsdVarHandle]:
        return (PsdVarHandle("P1", self.plain), PsdVarHandle("P2", self.weighted))

    def affine(self, exact: bool = True) -> AffineN:
        h1, h2 = self.handles
        col = gram_affine(self.plain, h1, exact=exact)
        gram_affine(self.weighted, h2, col_offset=h1.nvars, exact=exact, collector=col)
        like = PIOp(self.plain.in_sizes, self.plain.in_sizes, None, self.plain.rect)
        return col.build(like, (h1, h2))

    def concrete(self, P1, P2) -> PIOp:
        return lpi_param_map(self.plain, P1) + lpi_param_map(self.weighted, P2)


def omega_d(n: int, d: int, rect: Rect | None = None, n0: int = 0,
            active: Iterable[int] | None = None,
            degrees: Sequence[int] | None = None) -> Omega:
    """Omega_d; `degrees` optionally sets the monomial degree of each block."""
    rect = rect or Rect.unit()
    act = tuple(active) if active is not None else None
    degs = tuple(degrees) if degrees is not None else None
    plain = PositivityBasis(n, d, rect, Poly.const(1), n0, act, degs)
    return Omega(plain, plain.with_weight(bump(rect)))


def embed_gram(P, small: PositivityBasis, large: PositivityBasis) -> np.ndarray:
    """Zero-pad a Gram matrix of `small` into the basis of `large`.

    Needs every (block, monomial) of `small` to exist in `large`; then
    Z_large* g P' Z_large equals Z_small* g P Z_small.
    """
    P = np.asarray(P)
    where = {}
    for bi, blk in enumerate(large.blocks):
        for m, e in enumerate(blk.monomials):
            where[(blk.comp, blk.key, e)] = (bi, m)
    rows = []
    for bi, m, k in small.row_info:
        blk = small.blocks[bi]
        try:
            bj, mj = where[(blk.comp, blk.key, blk.monomials[m])]
        except KeyError:
            raise PIError(f"monomial {blk.monomials[m]} of block {blk.key} missing") from None
        rows.append(large.offsets[bj] + mj * large.blocks[bj].width + k)
    out = np.zeros((large.Q, large.Q), dtype=P.dtype)
    if P.dtype == object:
        out[:] = Q(0)
    out[np.ix_(rows, rows)] = P
    return out


def selfadjoint_check(N: PIOp) -> bool:
    return adjoint(N) == N


def gram_value(basis: PositivityBasis, P, u, grid) -> float:
    """<Zu, gP Zu> by quadrature; the oracle side of the positivity identity."""
    from .verify import apply_numeric

    Zu = apply_numeric(basis.Z_op(False), u, grid).on_grid("xy", grid)    # (Q, points)
    xs, ys = grid.points("xy")
    gvals = np.zeros_like(xs)
    for e, c in basis.g.terms.items():
        gvals += float(c) * xs ** e[0] * ys ** e[1]
    w = grid.point_weights("xy") * gvals
    P = np.asarray(P, dtype=float)
    return float(np.einsum("ip,ij,jp,p->", Zu, P, Zu, w))
