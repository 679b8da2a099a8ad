"""PI-operator parameter bundles and their composition algebra.

Every bundle is a block operator between products of the four components

    '0'  : R^n          (no spatial argument)
    'x'  : L2[x]
    'y'  : L2[y]
    'xy' : L2[x, y]

A block (out <- in) is a sum of terms.  Each term carries one tag per
spatial dimension:

    0    multiplier              (dimension in both out and in)
    1    int_a^x  . d theta      (dimension in both out and in)
    2    int_x^b  . d theta      (dimension in both out and in)
    'o'  broadcast in x          (dimension only in out)
    'i'  full integral over a..b (dimension only in in)
    '-'  dimension absent from both

Kernels use fixed variables: output point (x, y), integration point
(theta, nu).  A kernel tagged 'i' in x is a function of theta, 'o' of x.
The y dimension mirrors this with (y, nu) and bounds c, d.

All composition maps (1D, 011, 2D, the cross maps between 2D and 011, and
0112) run through the one rule table in `_dim_rules`.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .poly_core import (
    NV, Q, X, Y, THETA, NU, ETA, MU, Exps, PolyMatrix, PolyError, Rect,
    make_perm, mono_diff, mono_integrate, mono_mul, mono_rename, mono_subst,
    to_fraction,
)

COMPS = ("0", "x", "y", "xy")
_CI = {c: i for i, c in enumerate(COMPS)}
SHARED_TAGS = (0, 1, 2)


class PIError(ValueError):
    """Signature mismatch, ill-typed bundle, or unsupported operation."""


def has_dim(comp: str, k: int) -> bool:
    return ("x", "y")[k] in comp


def tag_options(oc: str, ic: str, k: int) -> tuple:
    o, i = has_dim(oc, k), has_dim(ic, k)
    if o and i:
        return SHARED_TAGS
    if o:
        return ("o",)
    if i:
        return ("i",)
    return ("-",)


def block_keys(oc: str, ic: str) -> list[tuple]:
    return [(tx, ty) for tx in tag_options(oc, ic, 0) for ty in tag_options(oc, ic, 1)]


def multiplier_key(comp: str) -> tuple:
    return tuple(0 if has_dim(comp, k) else "-" for k in (0, 1))


_OUT_VAR = (X, Y)
_INT_VAR = (THETA, NU)
_DUM_VAR = (ETA, MU)


def allowed_vars(tag, k: int) -> frozenset[int]:
    if tag == 0 or tag == "o":
        return frozenset({_OUT_VAR[k]})
    if tag in (1, 2):
        return frozenset({_OUT_VAR[k], _INT_VAR[k]})
    if tag == "i":
        return frozenset({_INT_VAR[k]})
    return frozenset()


def key_vars(key: tuple) -> frozenset[int]:
    return allowed_vars(key[0], 0) | allowed_vars(key[1], 1)


# --------------------------------------------------------------------------
# the composition rule table
#
# L o R with the middle variable renamed to the dummy (eta for x, mu for y):
# L's integration variable becomes eta, R's output variable becomes eta.
# For each dimension the product kernel is then reduced to a new tag by a
# substitution eta := x / eta := theta or an integral over eta.


def _S(k: int, target: int):
    return ("s", _DUM_VAR[k], target)


def _I(k: int, lo, hi):
    return ("i", _DUM_VAR[k], lo, hi)


@lru_cache(maxsize=None)
def _dim_rules(o: bool, m: bool, i: bool, s, t, k: int, lo: Fraction, hi: Fraction):
    """List of (result tag, eta-operation) for one dimension."""
    vx, vt, clo, chi = ("v", _OUT_VAR[k]), ("v", _INT_VAR[k]), ("c", lo), ("c", hi)
    if m:
        if o and i:
            table = {
                (0, 0): [(0, _S(k, _OUT_VAR[k]))],
                (0, 1): [(1, _S(k, _OUT_VAR[k]))],
                (0, 2): [(2, _S(k, _OUT_VAR[k]))],
                (1, 0): [(1, _S(k, _INT_VAR[k]))],
                (2, 0): [(2, _S(k, _INT_VAR[k]))],
                (1, 1): [(1, _I(k, vt, vx))],
                (2, 2): [(2, _I(k, vx, vt))],
                (1, 2): [(1, _I(k, clo, vt)), (2, _I(k, clo, vx))],
                (2, 1): [(1, _I(k, vx, chi)), (2, _I(k, vt, chi))],
            }
            return tuple(table[(s, t)])
        if o:
            return (("o", {0: _S(k, _OUT_VAR[k]), 1: _I(k, clo, vx), 2: _I(k, vx, chi)}[s]),)
        if i:
            return (("i", {0: _S(k, _INT_VAR[k]), 1: _I(k, vt, chi), 2: _I(k, clo, vt)}[t]),)
        return (("-", _I(k, clo, chi)),)
    if o and i:
        return ((1, None), (2, None))
    if o:
        return (("o", None),)
    if i:
        return (("i", None),)
    return (("-", None),)


@lru_cache(maxsize=None)
def _apply_dim_op(e: Exps, op) -> tuple[tuple[Exps, Fraction], ...]:
    if op is None:
        return ((e, Q(1)),)
    if op[0] == "s":
        return (mono_subst(e, op[1], "v", op[2]),)
    return mono_integrate(e, op[1], op[2], op[3])


@lru_cache(maxsize=None)
def _apply_ops(e: Exps, opx, opy) -> tuple[tuple[Exps, Fraction], ...]:
    acc: dict[Exps, Fraction] = {}
    for e1, f1 in _apply_dim_op(e, opx):
        for e2, f2 in _apply_dim_op(e1, opy):
            acc[e2] = acc.get(e2, 0) + f1 * f2
    return tuple((k, v) for k, v in acc.items() if v != 0)


_L_PERM = make_perm({THETA: ETA, NU: MU})
_R_PERM = make_perm({X: ETA, Y: MU})


# --------------------------------------------------------------------------
# generic operator


class PIOp:
    """Generic PI operator between R^n0 x L2[x]^nx x L2[y]^ny x L2[x,y]^nxy.

    ``blocks[(oc, ic)][(tx, ty)]`` is the kernel PolyMatrix of one term.
    Missing blocks and terms are zero.  Components of size zero carry no
    blocks.
    """

    __slots__ = ("out_sizes", "in_sizes", "blocks", "rect")

    def __init__(self, out_sizes: Sequence[int], in_sizes: Sequence[int],
                 blocks: Mapping | None = None, rect: Rect | None = None, check: bool = True):
        self.out_sizes = tuple(int(v) for v in out_sizes)
        self.in_sizes = tuple(int(v) for v in in_sizes)
        if len(self.out_sizes) != 4 or len(self.in_sizes) != 4:
            raise PIError("sizes are 4-tuples over ('0','x','y','xy')")
        self.rect = rect if rect is not None else Rect.unit()
        self.blocks: dict[tuple[str, str], dict[tuple, PolyMatrix]] = {}
        for (oc, ic), terms in (blocks or {}).items():
            for key, mat in terms.items():
                self._put(oc, ic, key, mat, check)

    # sizes -------------------------------------------------------------
    def osz(self, comp: str) -> int:
        return self.out_sizes[_CI[comp]]

    def isz(self, comp: str) -> int:
        return self.in_sizes[_CI[comp]]

    @property
    def signature(self):
        return (self.out_sizes, self.in_sizes)

    def _put(self, oc, ic, key, mat: PolyMatrix, check=True, accumulate=False):
        key = tuple(key)
        r, c = self.osz(oc), self.isz(ic)
        if mat.shape != (r, c):
            raise PIError(f"block {oc}<-{ic} {key}: shape {mat.shape}, expected {(r, c)}")
        if check:
            if key not in block_keys(oc, ic):
                raise PIError(f"tag {key} invalid for block {oc}<-{ic}")
            allowed = key_vars(key)
            for e in mat.terms:
                bad = {v for v, p in enumerate(e) if p} - allowed
                if bad:
                    from .poly_core import VARS
                    raise PIError(f"block {oc}<-{ic} {key} kernel depends on "
                                  f"{sorted(VARS[v] for v in bad)}")
        if r == 0 or c == 0 or mat.is_zero():
            if not accumulate:
                self.blocks.get((oc, ic), {}).pop(key, None)
            return
        terms = self.blocks.setdefault((oc, ic), {})
        if accumulate and key in terms:
            s = terms[key] + mat
            if s.is_zero():
                del terms[key]
            else:
                terms[key] = s
        else:
            terms[key] = mat
        if not terms:
            del self.blocks[(oc, ic)]

    def get(self, oc: str, ic: str, key) -> PolyMatrix:
        key = tuple(key)
        t = self.blocks.get((oc, ic), {})
        if key in t:
            return t[key]
        exact = all(m.exact for m in self.iter_mats())
        return PolyMatrix.zeros(self.osz(oc), self.isz(ic), exact=exact)

    def iter_terms(self):
        for (oc, ic), terms in self.blocks.items():
            for key, mat in terms.items():
                yield oc, ic, key, mat

    def iter_mats(self):
        for terms in self.blocks.values():
            yield from terms.values()

    @property
    def exact(self) -> bool:
        return all(m.exact for m in self.iter_mats())

    def copy(self) -> "PIOp":
        out = PIOp(self.out_sizes, self.in_sizes, None, self.rect)
        out.blocks = {k: dict(v) for k, v in self.blocks.items()}
        return out

    # arithmetic -----------------------------------------------------------
    def is_zero(self) -> bool:
        return all(m.is_zero() for m in self.iter_mats())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PIOp) or self.signature != other.signature:
            return False
        return (self - other).is_zero()

    __hash__ = None

    def _check_compatible(self, other: "PIOp"):
        if self.signature != other.signature:
            raise PIError(f"signature mismatch {self.signature} vs {other.signature}")
        if self.rect != other.rect:
            raise PIError("operators live on different rectangles")

    def __add__(self, other: "PIOp") -> "PIOp":
        self._check_compatible(other)
        out = self.copy()
        for oc, ic, key, mat in other.iter_terms():
            out._put(oc, ic, key, mat, check=False, accumulate=True)
        return out

    def __neg__(self) -> "PIOp":
        return self.scale(-1)

    def __sub__(self, other: "PIOp") -> "PIOp":
        return self + (-other)

    def scale(self, s) -> "PIOp":
        out = PIOp(self.out_sizes, self.in_sizes, None, self.rect)
        for oc, ic, key, mat in self.iter_terms():
            out._put(oc, ic, key, mat.scale(s), check=False)
        return out

    def __matmul__(self, other: "PIOp") -> "PIOp":
        return compose(self, other)

    def to_float(self) -> "PIOp":
        out = PIOp(self.out_sizes, self.in_sizes, None, self.rect)
        for oc, ic, key, mat in self.iter_terms():
            out._put(oc, ic, key, mat.to_float(), check=False)
        return out

    def max_degree(self) -> int:
        return max((m.degree for m in self.iter_mats()), default=0)

    def restrict(self, out_comps: Iterable[str] | None = None,
                 in_comps: Iterable[str] | None = None) -> "PIOp":
        """Zero out every component not listed (sizes kept)."""
        oks = set(out_comps) if out_comps is not None else set(COMPS)
        iks = set(in_comps) if in_comps is not None else set(COMPS)
        out = PIOp(self.out_sizes, self.in_sizes, None, self.rect)
        for oc, ic, key, mat in self.iter_terms():
            if oc in oks and ic in iks:
                out._put(oc, ic, key, mat, check=False)
        return out

    def __repr__(self):
        nterms = sum(len(t) for t in self.blocks.values())
        return f"PIOp(out={self.out_sizes}, in={self.in_sizes}, {nterms} terms)"

    def pretty(self) -> str:
        lines = []
        for (oc, ic) in sorted(self.blocks, key=lambda p: (_CI[p[0]], _CI[p[1]])):
            for key, mat in sorted(self.blocks[(oc, ic)].items(), key=lambda kv: str(kv[0])):
                lines.append(f"[{oc} <- {ic}] tags={key}")
                lines.extend("    " + ln for ln in mat.pretty().splitlines())
        return "\n".join(lines) if lines else "(zero operator)"


# --------------------------------------------------------------------------
# core maps


def compose(L: PIOp, R: PIOp) -> PIOp:
    """Kernels of P[L] o P[R]."""
    if L.in_sizes != R.out_sizes:
        raise PIError(f"cannot compose: left input {L.in_sizes} vs right output {R.out_sizes}")
    if L.rect != R.rect:
        raise PIError("operators live on different rectangles")
    rect = L.rect
    lo = (rect.a, rect.c)
    hi = (rect.b, rect.d)
    exact = L.exact and R.exact
    acc: dict[tuple, dict[Exps, np.ndarray]] = {}

    lterms = {}
    for (oc, mc), terms in L.blocks.items():
        for key, mat in terms.items():
            src = mat if exact or not mat.exact else mat.to_float()
            ren = [(mono_rename(e, _L_PERM), a) for e, a in src.terms.items()]
            lterms.setdefault(mc, []).append((oc, key, ren))
    rterms = {}
    for (mc, ic), terms in R.blocks.items():
        for key, mat in terms.items():
            src = mat if exact or not mat.exact else mat.to_float()
            ren = [(mono_rename(e, _R_PERM), a) for e, a in src.terms.items()]
            rterms.setdefault(mc, []).append((ic, key, ren))

    for mc, lefts in lterms.items():
        for oc, lkey, lren in lefts:
            for ic, rkey, rren in rterms.get(mc, ()):
                rules = []
                for k in (0, 1):
                    rules.append(_dim_rules(has_dim(oc, k), has_dim(mc, k), has_dim(ic, k),
                                            lkey[k], rkey[k], k, lo[k], hi[k]))
                for tx, opx in rules[0]:
                    for ty, opy in rules[1]:
                        bucket = acc.setdefault((oc, ic, (tx, ty)), {})
                        for e1, a1 in lren:
                            for e2, a2 in rren:
                                prod = a1 @ a2
                                e = mono_mul(e1, e2)
                                for e3, f in _apply_ops(e, opx, opy):
                                    v = prod * f
                                    if e3 in bucket:
                                        bucket[e3] = bucket[e3] + v
                                    else:
                                        bucket[e3] = v
    out = PIOp(L.out_sizes, R.in_sizes, None, rect)
    for (oc, ic, key), terms in acc.items():
        mat = PolyMatrix(L.osz(oc), R.isz(ic), terms, exact=exact)
        out._put(oc, ic, key, mat, check=False, accumulate=True)
    return out


_ADJ_TAG = {0: 0, 1: 2, 2: 1, "o": "i", "i": "o", "-": "-"}


def _adj_map(tag, k: int) -> dict:
    if tag in (1, 2):
        return {_OUT_VAR[k]: _INT_VAR[k], _INT_VAR[k]: _OUT_VAR[k]}
    if tag == "o":
        return {_OUT_VAR[k]: _INT_VAR[k]}
    if tag == "i":
        return {_INT_VAR[k]: _OUT_VAR[k]}
    return {}


def adjoint(N: PIOp) -> PIOp:
    """Kernels of the L2-adjoint: <v, P[N]u> = <P[N*]v, u>."""
    out = PIOp(N.in_sizes, N.out_sizes, None, N.rect)
    for oc, ic, key, mat in N.iter_terms():
        mapping = _adj_map(key[0], 0) | _adj_map(key[1], 1)
        perm = make_perm(mapping)
        newkey = (_ADJ_TAG[key[0]], _ADJ_TAG[key[1]])
        m2 = mat.T.map_monomials(lambda e: ((mono_rename(e, perm), 1),)) if mapping else mat.T
        out._put(ic, oc, newkey, m2, check=False, accumulate=True)
    return out


def differentiate(N: PIOp, k: int) -> PIOp:
    """Kernels of d/dx (k=0) or d/dy (k=1) applied after P[N].

    Every nonzero output component must contain the dimension, and no term
    may be a multiplier in that dimension.
    """
    out = PIOp(N.out_sizes, N.in_sizes, None, N.rect)
    ov, iv = _OUT_VAR[k], _INT_VAR[k]
    for oc, ic, key, mat in N.iter_terms():
        if not has_dim(oc, k):
            raise PIError(f"cannot differentiate component {oc!r} in {'xy'[k]}")
        tag = key[k]
        dmat = mat.diff(ov)
        if tag == 0:
            raise PIError(f"block {oc}<-{ic} has a multiplier term {key} in {'xy'[k]}; "
                          "its derivative is not a PI operator")
        if tag in (1, 2):
            trace = mat.substitute(iv, ("x", "y")[k])
            if tag == 2:
                trace = -trace
            tkey = list(key)
            tkey[k] = 0
            out._put(oc, ic, tuple(tkey), trace, check=False, accumulate=True)
        out._put(oc, ic, key, dmat, check=False, accumulate=True)
    return out


def identity(sizes: Sequence[int], rect: Rect | None = None) -> PIOp:
    out = PIOp(sizes, sizes, None, rect)
    for comp, n in zip(COMPS, out.out_sizes):
        if n:
            out._put(comp, comp, multiplier_key(comp), PolyMatrix.eye(n), check=False)
    return out


def zero(out_sizes: Sequence[int], in_sizes: Sequence[int], rect: Rect | None = None) -> PIOp:
    return PIOp(out_sizes, in_sizes, None, rect)


def multiplier(comp_mats: Mapping[tuple[str, str], PolyMatrix], out_sizes, in_sizes,
               rect: Rect | None = None) -> PIOp:
    """Operator whose (oc <- ic) blocks are multipliers / broadcasts / full integrals.

    For oc == ic the matrix acts as a multiplier; for differing components
    the natural single tag is used (e.g. '0' <- 'x' integrates over a..b).
    """
    out = PIOp(out_sizes, in_sizes, None, rect)
    for (oc, ic), mat in comp_mats.items():
        key = tuple(0 if tag_options(oc, ic, k) == SHARED_TAGS else tag_options(oc, ic, k)[0]
                    for k in (0, 1))
        out._put(oc, ic, key, mat)
    return out


def pi_add(A: PIOp, B: PIOp) -> PIOp:
    out = A + B
    return _recast(A, out)


def pi_scale(s, A: PIOp) -> PIOp:
    return _recast(A, A.scale(s))


def _recast(like: PIOp, op: PIOp) -> PIOp:
    cls = type(like)
    if cls is PIOp:
        return op
    return cls.from_op(op)


# --------------------------------------------------------------------------
# named parameter spaces


class _Named(PIOp):
    """PIOp restricted to a fixed component layout."""

    OUT: tuple[str, ...] = ()
    IN: tuple[str, ...] = ()

    @classmethod
    def from_op(cls, op: PIOp) -> "_Named":
        for comp, n in zip(COMPS, op.out_sizes):
            if n and comp not in cls.OUT:
                raise PIError(f"{cls.__name__} has no output component {comp!r}")
        for comp, n in zip(COMPS, op.in_sizes):
            if n and comp not in cls.IN:
                raise PIError(f"{cls.__name__} has no input component {comp!r}")
        out = cls.__new__(cls)
        PIOp.__init__(out, op.out_sizes, op.in_sizes, None, op.rect)
        out.blocks = {k: dict(v) for k, v in op.blocks.items()}
        return out

    def as_op(self) -> PIOp:
        out = PIOp(self.out_sizes, self.in_sizes, None, self.rect)
        out.blocks = {k: dict(v) for k, v in self.blocks.items()}
        return out


def _sizes(**kw) -> tuple[int, int, int, int]:
    return tuple(kw.get(c if c != "0" else "r", 0) for c in COMPS)


def _pm(m, r: int, c: int) -> PolyMatrix:
    if m is None:
        return PolyMatrix.zeros(r, c)
    if isinstance(m, PolyMatrix):
        return m
    return PolyMatrix.const(m, r, c)


class N1d(_Named):
    """3-PI operator on L2[x] (dim='x') or L2[y] (dim='y').

    Kernels: N0(s), N1(s, t), N2(s, t) with (s, t) = (x, theta) or (y, nu).
    """

    OUT = IN = ("x", "y")

    @classmethod
    def make(cls, N0=None, N1=None, N2=None, n: int | None = None, m: int | None = None,
             dim: str = "x", rect: Rect | None = None) -> "N1d":
        mats = [x for x in (N0, N1, N2) if isinstance(x, PolyMatrix)]
        if n is None or m is None:
            if not mats:
                raise PIError("need dimensions for an all-zero N1d")
            n, m = mats[0].shape
        comp = dim
        sz = _sizes(**{comp: n})
        isz = _sizes(**{comp: m})
        op = PIOp(sz, isz, None, rect)
        for s, mat in enumerate((N0, N1, N2)):
            key = (s, "-") if dim == "x" else ("-", s)
            op._put(comp, comp, key, _pm(mat, n, m))
        return cls.from_op(op)

    @property
    def dim(self) -> str:
        return "x" if self.out_sizes[1] or self.in_sizes[1] else "y"

    def part(self, s: int) -> PolyMatrix:
        c = self.dim
        return self.get(c, c, (s, "-") if c == "x" else ("-", s))


class N2d(_Named):
    """9-PI operator on L2[x,y]; kernel N[i][j] has x-tag i and y-tag j."""

    OUT = IN = ("xy",)

    @classmethod
    def make(cls, grid: Sequence[Sequence[PolyMatrix | None]] | None = None,
             n: int | None = None, m: int | None = None, rect: Rect | None = None) -> "N2d":
        grid = grid or [[None] * 3 for _ in range(3)]
        if n is None or m is None:
            for row in grid:
                for mat in row:
                    if isinstance(mat, PolyMatrix):
                        n, m = mat.shape
                        break
                if n is not None:
                    break
        if n is None:
            raise PIError("need dimensions for an all-zero N2d")
        op = PIOp(_sizes(xy=n), _sizes(xy=m), None, rect)
        for i in range(3):
            for j in range(3):
                op._put("xy", "xy", (i, j), _pm(grid[i][j], n, m))
        return cls.from_op(op)

    def k(self, i: int, j: int) -> PolyMatrix:
        return self.get("xy", "xy", (i, j))

    @property
    def n(self) -> int:
        return self.out_sizes[3]

    @property
    def m(self) -> int:
        return self.in_sizes[3]


class N011(_Named):
    """Operator on R^m0 x L2[x]^m1 x L2[y]^m1.

    Slots (row, col) over ('0','x','y'):
      (0,0) const, (0,1) f(theta), (0,2) f(nu),
      (1,0) f(x),  (1,1) 1D in x,  (1,2) f(x, nu),
      (2,0) f(y),  (2,1) f(y, theta), (2,2) 1D in y.
    """

    OUT = IN = ("0", "x", "y")

    @classmethod
    def make(cls, n0: int, n1: int, m0: int, m1: int, slots: Mapping | None = None,
             rect: Rect | None = None) -> "N011":
        """slots maps (r, c) -> PolyMatrix, or (r, c, s) for the 1D parts."""
        op = PIOp(_sizes(r=n0, x=n1, y=n1), _sizes(r=m0, x=m1, y=m1), None, rect)
        comps = ("0", "x", "y")
        for key, mat in (slots or {}).items():
            r, c = key[0], key[1]
            oc, ic = comps[r], comps[c]
            if len(key) == 3:
                s = key[2]
                tag = (s, "-") if oc == "x" else ("-", s)
            else:
                tag = block_keys(oc, ic)[0] if (r, c) not in ((1, 1), (2, 2)) else multiplier_key(oc)
            op._put(oc, ic, tag, _pm(mat, op.osz(oc), op.isz(ic)))
        return cls.from_op(op)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.out_sizes[0], self.out_sizes[1], self.in_sizes[0], self.in_sizes[1])

    def slot(self, r: int, c: int, s: int | None = None) -> PolyMatrix:
        comps = ("0", "x", "y")
        oc, ic = comps[r], comps[c]
        if s is not None:
            tag = (s, "-") if oc == "x" else ("-", s)
        else:
            tag = block_keys(oc, ic)[0]
        return self.get(oc, ic, tag)


class N2dTo1d(_Named):
    """L2[x,y] -> L2[x] (or L2[y]); D_s has shared tag s and full integral in the other dim."""

    OUT = ("x", "y")
    IN = ("xy",)


class N1dTo2d(_Named):
    """L2[x] (or L2[y]) -> L2[x,y]; E_s has shared tag s and broadcast in the other dim."""

    OUT = ("xy",)
    IN = ("x", "y")


class N2dTo011(_Named):
    """L2[x,y] -> R^n0 x L2[x]^n1 x L2[y]^n1."""

    OUT = ("0", "x", "y")
    IN = ("xy",)


class N011To2d(_Named):
    """R^m0 x L2[x]^m1 x L2[y]^m1 -> L2[x,y]."""

    OUT = ("xy",)
    IN = ("0", "x", "y")


class N0112(_Named):
    """Operator on R^m0 x L2[x]^m1 x L2[y]^m1 x L2[x,y]^m2."""

    OUT = IN = COMPS

    @classmethod
    def from_blocks(cls, B11: PIOp | None, B12: PIOp | None, B21: PIOp | None, B22: PIOp | None,
                    out_sizes, in_sizes, rect: Rect | None = None) -> "N0112":
        op = PIOp(out_sizes, in_sizes, None, rect)
        for part in (B11, B12, B21, B22):
            if part is None:
                continue
            for oc, ic, key, mat in part.iter_terms():
                op._put(oc, ic, key, mat, check=False, accumulate=True)
        return cls.from_op(op)

    def part(self, which: str) -> PIOp:
        """'11', '12', '21' or '22' sub-operator (boundary/interior split)."""
        bnd = ("0", "x", "y")
        oc = bnd if which[0] == "1" else ("xy",)
        ic = bnd if which[1] == "1" else ("xy",)
        osz = tuple(n if c in oc else 0 for c, n in zip(COMPS, self.out_sizes))
        isz = tuple(n if c in ic else 0 for c, n in zip(COMPS, self.in_sizes))
        sub = PIOp(osz, isz, None, self.rect)
        for o, i, key, mat in self.iter_terms():
            if o in oc and i in ic:
                sub._put(o, i, key, mat, check=False)
        cls = {"11": N011, "12": N2dTo011, "21": N011To2d, "22": N2d}[which]
        return cls.from_op(sub)


def _typed(cls, op: PIOp):
    return cls.from_op(op)


def _need(obj, cls, name):
    if not isinstance(obj, PIOp):
        raise PIError(f"{name}: expected a PI bundle")
    try:
        cls.from_op(obj)
    except PIError as exc:
        raise PIError(f"{name}: {exc}") from None


def compose_1d(N: N1d, M: N1d) -> N1d:
    _need(N, N1d, "left"), _need(M, N1d, "right")
    return _typed(N1d, compose(N, M))


def compose_011(B: N011, D: N011) -> N011:
    _need(B, N011, "left"), _need(D, N011, "right")
    return _typed(N011, compose(B, D))


def compose_2d(N: N2d, M: N2d) -> N2d:
    _need(N, N2d, "left"), _need(M, N2d, "right")
    return _typed(N2d, compose(N, M))


def compose_011_with_2dto011(B: N011, D: N2dTo011) -> N2dTo011:
    _need(B, N011, "left"), _need(D, N2dTo011, "right")
    return _typed(N2dTo011, compose(B, D))


def compose_2dto011_with_2d(D: N2dTo011, N: N2d) -> N2dTo011:
    _need(D, N2dTo011, "left"), _need(N, N2d, "right")
    return _typed(N2dTo011, compose(D, N))


def compose_011to2d_with_011(E: N011To2d, B: N011) -> N011To2d:
    _need(E, N011To2d, "left"), _need(B, N011, "right")
    return _typed(N011To2d, compose(E, B))


def compose_2d_with_011to2d(N: N2d, E: N011To2d) -> N011To2d:
    _need(N, N2d, "left"), _need(E, N011To2d, "right")
    return _typed(N011To2d, compose(N, E))


def compose_2dto011_with_011to2d(D: N2dTo011, E: N011To2d) -> N011:
    _need(D, N2dTo011, "left"), _need(E, N011To2d, "right")
    return _typed(N011, compose(D, E))


def compose_011to2d_with_2dto011(E: N011To2d, D: N2dTo011) -> N2d:
    _need(E, N011To2d, "left"), _need(D, N2dTo011, "right")
    return _typed(N2d, compose(E, D))


def compose_0112(B: N0112, D: N0112) -> N0112:
    _need(B, N0112, "left"), _need(D, N0112, "right")
    return _typed(N0112, compose(B, D))


def adjoint_2d(N: N2d) -> N2d:
    return _typed(N2d, adjoint(N))


def adjoint_0112(N: N0112) -> N0112:
    return _typed(N0112, adjoint(N))


def identity_2d(n: int, rect: Rect | None = None) -> N2d:
    return _typed(N2d, identity(_sizes(xy=n), rect))


def identity_011(n0: int, n1: int, rect: Rect | None = None) -> N011:
    return _typed(N011, identity(_sizes(r=n0, x=n1, y=n1), rect))


def identity_0112(n0: int, n1: int, n2: int, rect: Rect | None = None) -> N0112:
    return _typed(N0112, identity(_sizes(r=n0, x=n1, y=n1, xy=n2), rect))


def embed(matrix, target: str, split: Sequence[int] | None = None,
          col_split: Sequence[int] | None = None, rect: Rect | None = None) -> PIOp:
    """Represent a matrix as a multiplier-only bundle.

    target '2d': an (n x m) matrix becomes N00 of an N2d.
    target '011': rows split as (n0, n1, n1), columns as (m0, m1, m1); the
    diagonal blocks become multipliers and off-diagonal blocks must vanish.
    Otherwise the embedding would be ill-typed (a constant cannot map L2[x]
    into R without integrating).
    """
    mat = matrix if isinstance(matrix, PolyMatrix) else PolyMatrix.const(matrix)
    if target == "2d":
        return N2d.make([[mat, None, None], [None] * 3, [None] * 3], *mat.shape, rect=rect)
    if target == "011":
        if split is None or col_split is None:
            raise PIError("011 embedding needs row split (n0, n1) and column split (m0, m1)")
        n0, n1 = split
        m0, m1 = col_split
        if mat.shape != (n0 + 2 * n1, m0 + 2 * m1):
            raise PIError(f"matrix {mat.shape} does not fit split {(n0, n1)} x {(m0, m1)}")
        rs = [0, n0, n0 + n1, n0 + 2 * n1]
        cs = [0, m0, m0 + m1, m0 + 2 * m1]
        slots = {}
        for r in range(3):
            for c in range(3):
                sub = mat.sub(slice(rs[r], rs[r + 1]), slice(cs[c], cs[c + 1]))
                if r == c:
                    slots[(r, c, 0) if r else (0, 0)] = sub
                elif c == 0:
                    # constant broadcast of the R part along the edge
                    slots[(r, 0)] = sub
                elif not sub.is_zero():
                    raise PIError(f"constant block ({r},{c}) has no pointwise meaning in an 011 operator")
        return N011.make(n0, n1, m0, m1, slots, rect)
    raise PIError(f"unknown embedding target {target!r}")


# --------------------------------------------------------------------------
# exact action on polynomial functions


def apply_exact(op: PIOp, f: Mapping[str, PolyMatrix]) -> dict[str, PolyMatrix]:
    """P[op] f for polynomial f, exactly.

    f maps components to column PolyMatrices in their own variables
    ('x' -> x, 'y' -> y, 'xy' -> x, y, '0' -> constant).
    """
    rect = op.rect
    out = {c: PolyMatrix.zeros(n, 1) for c, n in zip(COMPS, op.out_sizes) if n}
    for oc, ic, key, mat in op.iter_terms():
        g = f.get(ic)
        if g is None or g.is_zero():
            continue
        ren = {}
        for k in (0, 1):
            if key[k] in (1, 2, "i"):
                ren[_OUT_VAR[k]] = _INT_VAR[k]
        h = mat @ (g.rename(ren) if ren else g)
        for k in (0, 1):
            iv, ov = ("theta", "nu")[k], ("x", "y")[k]
            lo, hi = ("a", "b") if k == 0 else ("c", "d")
            tag = key[k]
            if tag == 1:
                h = h.integrate(iv, lo, ov, rect)
            elif tag == 2:
                h = h.integrate(iv, ov, hi, rect)
            elif tag == "i":
                h = h.integrate(iv, lo, hi, rect)
        out[oc] = out[oc] + h
    return out
