"""Exact multivariate polynomials and polynomial matrices.

Six variables are known: the spatial variables x, y, the integration dummies
theta, nu, and the auxiliary dummies eta, mu that only live inside a
composition before being integrated out.  Coefficients are exact rationals
(gmpy2 ``mpq``) by default; a matrix can be converted to float64 for numerical work, which is
the only place rounding enters.

Monomial order everywhere is graded-lex: total degree first, then lex with
x > y > theta > nu > eta > mu.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement
from numbers import Rational
from typing import Callable, Iterable, Iterator, Mapping, Sequence, Union

import gmpy2
import numpy as np

Q = gmpy2.mpq
_MPQ = type(Q(0))

VARS = ("x", "y", "theta", "nu", "eta", "mu")
NV = len(VARS)
X, Y, THETA, NU, ETA, MU = range(NV)

_ALIASES = {"θ": THETA, "ν": NU, "η": ETA, "μ": MU}
_INDEX = {name: i for i, name in enumerate(VARS)} | _ALIASES

Exps = tuple[int, ...]
Scalar = Union[int, Fraction, float]
# A bound is a constant, a variable name, or one of the rectangle symbols a..d.
Bound = Union[int, Fraction, float, str]

ZERO_EXPS: Exps = (0,) * NV


class PolyError(ValueError):
    """Raised on dimension mismatches and malformed polynomial requests."""


def var_index(v: Union[str, int]) -> int:
    if isinstance(v, int):
        if not 0 <= v < NV:
            raise PolyError(f"variable index {v} out of range")
        return v
    try:
        return _INDEX[v]
    except KeyError:
        raise PolyError(f"unknown variable {v!r}") from None


def to_fraction(v) -> Q:
    """Exact rational from int, Fraction, mpq, decimal string or float."""
    if type(v) is _MPQ:
        return v
    if isinstance(v, (int, Rational)):
        return Q(v)
    if isinstance(v, str):
        return Q(Fraction(v.strip()))
    if isinstance(v, (float, np.floating)):
        return Q(float(v))
    if isinstance(v, np.integer):
        return Q(int(v))
    raise PolyError(f"cannot convert {v!r} to a rational")


@dataclass(frozen=True)
class Rect:
    """Domain [a,b] x [c,d] with exact rational bounds."""

    a: Fraction
    b: Fraction
    c: Fraction
    d: Fraction

    def __post_init__(self):
        for name in "abcd":
            object.__setattr__(self, name, to_fraction(getattr(self, name)))
        if not self.a < self.b:
            raise PolyError(f"need a < b, got a={self.a}, b={self.b}")
        if not self.c < self.d:
            raise PolyError(f"need c < d, got c={self.c}, d={self.d}")

    @classmethod
    def unit(cls) -> "Rect":
        return cls(0, 1, 0, 1)

    @property
    def area(self) -> Fraction:
        return (self.b - self.a) * (self.d - self.c)

    def lo(self, dim: int) -> Fraction:
        return self.a if dim == 0 else self.c

    def hi(self, dim: int) -> Fraction:
        return self.b if dim == 0 else self.d

    def resolve(self, bound: Bound):
        """Map a rectangle symbol a..d to its value, leave others alone."""
        if isinstance(bound, str) and bound in ("a", "b", "c", "d"):
            return getattr(self, bound)
        return bound


# --------------------------------------------------------------------------
# monomial-level primitives (pure, cached)


def _norm_bound(bound: Bound, rect: Rect | None):
    """Return ('v', index) for a variable bound or ('c', Fraction)."""
    if isinstance(bound, str) and bound in ("a", "b", "c", "d"):
        if rect is None:
            raise PolyError(f"bound {bound!r} needs a Rect")
        return ("c", getattr(rect, bound))
    if isinstance(bound, str):
        return ("v", var_index(bound))
    return ("c", to_fraction(bound))


@lru_cache(maxsize=None)
def mono_mul(e1: Exps, e2: Exps) -> Exps:
    return tuple(p + q for p, q in zip(e1, e2))


@lru_cache(maxsize=None)
def mono_subst(e: Exps, v: int, kind: str, val) -> tuple[Exps, Fraction]:
    k = e[v]
    if k == 0:
        return e, Q(1)
    out = list(e)
    out[v] = 0
    if kind == "v":
        out[val] += k
        return tuple(out), Q(1)
    return tuple(out), Q(val) ** k


@lru_cache(maxsize=None)
def mono_integrate(e: Exps, v: int, lo: tuple, hi: tuple) -> tuple[tuple[Exps, Fraction], ...]:
    """Integral of the monomial over v from lo to hi, as (exps, factor) pairs."""
    k1 = e[v] + 1
    base = list(e)
    base[v] = 0
    acc: dict[Exps, Fraction] = {}
    for (kind, val), sign in ((hi, 1), (lo, -1)):
        out = list(base)
        if kind == "v":
            if val == v:
                raise PolyError("bound equals the integration variable")
            out[val] += k1
            f = Q(sign, k1)
        else:
            f = Q(sign, k1) * Q(val) ** k1
        t = tuple(out)
        acc[t] = acc.get(t, 0) + f
    return tuple((t, f) for t, f in acc.items() if f != 0)


@lru_cache(maxsize=None)
def mono_diff(e: Exps, v: int) -> tuple[Exps, int] | None:
    k = e[v]
    if k == 0:
        return None
    out = list(e)
    out[v] = k - 1
    return tuple(out), k


@lru_cache(maxsize=None)
def mono_rename(e: Exps, perm: tuple[int, ...]) -> Exps:
    """perm[i] is the new slot of old variable i."""
    out = [0] * NV
    for i, k in enumerate(e):
        if k:
            out[perm[i]] += k
    return tuple(out)


def mono_key(e: Exps):
    """Graded-lex sort key."""
    return (sum(e), tuple(-k for k in e))


def make_perm(mapping: Mapping[Union[str, int], Union[str, int]]) -> tuple[int, ...]:
    """Permutation tuple from a (partial) variable mapping; unmapped stay put."""
    perm = list(range(NV))
    for src, dst in mapping.items():
        perm[var_index(src)] = var_index(dst)
    return tuple(perm)


def _vars_in(e: Exps) -> frozenset[int]:
    return frozenset(i for i, k in enumerate(e) if k)


# --------------------------------------------------------------------------
# scalar polynomials


class Poly:
    """Scalar polynomial: {exponent 6-tuple: coefficient}, no stored zeros."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Exps, Scalar] | None = None):
        clean = {}
        if terms:
            for e, c in terms.items():
                if c != 0:
                    e = tuple(e) + (0,) * (NV - len(e))
                    clean[e] = clean.get(e, 0) + c
            clean = {e: c for e, c in clean.items() if c != 0}
        self.terms: dict[Exps, Scalar] = clean

    # construction -----------------------------------------------------
    @classmethod
    def const(cls, c: Scalar) -> "Poly":
        return cls({ZERO_EXPS: to_fraction(c) if not isinstance(c, float) else c})

    @classmethod
    def var(cls, name: Union[str, int], power: int = 1) -> "Poly":
        e = [0] * NV
        e[var_index(name)] = power
        return cls({tuple(e): Q(1)})

    @classmethod
    def monomial(cls, exps: Sequence[int], coeff: Scalar = 1) -> "Poly":
        return cls({tuple(exps): to_fraction(coeff)})

    @classmethod
    def linear(cls, **coeffs) -> "Poly":
        """Poly.linear(x=1, theta=-1, const=0) -> x - theta."""
        p = Poly.const(coeffs.pop("const", 0))
        for name, c in coeffs.items():
            p = p + Poly.var(name) * to_fraction(c)
        return p

    # arithmetic --------------------------------------------------------
    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            return other
        if isinstance(other, (int, Fraction, float, Rational, np.integer, np.floating, _MPQ)):
            return Poly.const(other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly({e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction, float, Rational, np.integer, np.floating, _MPQ)):
            return Poly({e: c * other for e, c in self.terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Exps, Scalar] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = mono_mul(e1, e2)
                out[e] = out.get(e, 0) + c1 * c2
        return Poly(out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise PolyError("negative power")
        out = Poly.const(1)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return False
        return self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __bool__(self):
        return bool(self.terms)

    # queries -------------------------------------------------------------
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def varset(self) -> frozenset[str]:
        out: set[int] = set()
        for e in self.terms:
            out |= _vars_in(e)
        return frozenset(VARS[i] for i in out)

    def sorted_terms(self) -> list[tuple[Exps, Scalar]]:
        return sorted(self.terms.items(), key=lambda t: mono_key(t[0]))

    # calculus ------------------------------------------------------------
    def map_monomials(self, fn: Callable[[Exps], Iterable[tuple[Exps, Scalar]]]) -> "Poly":
        out: dict[Exps, Scalar] = {}
        for e, c in self.terms.items():
            for e2, f in fn(e):
                out[e2] = out.get(e2, 0) + c * f
        return Poly(out)

    def integrate(self, var, lower: Bound, upper: Bound, rect: Rect | None = None) -> "Poly":
        v = var_index(var)
        lo, hi = _norm_bound(lower, rect), _norm_bound(upper, rect)
        return self.map_monomials(lambda e: mono_integrate(e, v, lo, hi))

    def substitute(self, var, value: Bound, rect: Rect | None = None) -> "Poly":
        v = var_index(var)
        kind, val = _norm_bound(value, rect)
        return self.map_monomials(lambda e: (mono_subst(e, v, kind, val),))

    def diff(self, var) -> "Poly":
        v = var_index(var)

        def fn(e):
            r = mono_diff(e, v)
            return () if r is None else (r,)

        return self.map_monomials(fn)

    def rename(self, mapping: Mapping) -> "Poly":
        perm = make_perm(mapping)
        return self.map_monomials(lambda e: ((mono_rename(e, perm), 1),))

    def eval(self, point: Mapping[str, Scalar]) -> Scalar:
        """Exact evaluation; point maps variable names to values."""
        vals = {var_index(k): to_fraction(v) if not isinstance(v, float) else v for k, v in point.items()}
        total: Scalar = 0
        for e, c in self.terms.items():
            term = c
            for i, k in enumerate(e):
                if k:
                    if i not in vals:
                        raise PolyError(f"missing value for {VARS[i]}")
                    term = term * vals[i] ** k
            total = total + term
        return total

    def to_float(self) -> "Poly":
        return Poly({e: float(c) for e, c in self.terms.items()})

    def __repr__(self):
        return f"Poly({format_poly(self)})"

    def __str__(self):
        return format_poly(self)


_PRETTY = ("x", "y", "θ", "ν", "η", "μ")


def format_poly(p: Poly, names: Sequence[str] = _PRETTY) -> str:
    if p.is_zero():
        return "0"
    parts = []
    for e, c in p.sorted_terms():
        mono = "*".join(f"{names[i]}^{k}" if k > 1 else names[i] for i, k in enumerate(e) if k)
        if not mono:
            parts.append(str(c))
        elif c == 1:
            parts.append(mono)
        elif c == -1:
            parts.append("-" + mono)
        else:
            parts.append(f"{c}*{mono}")
    return " + ".join(parts).replace("+ -", "- ")


def monomial_basis(max_degree: int, variables: Iterable[str]) -> list[Poly]:
    """All monomials of total degree <= d in the given variables, graded-lex."""
    if max_degree < 0:
        raise PolyError("degree must be non-negative")
    return [Poly.monomial(e) for e in monomial_exps(max_degree, variables)]


def monomial_exps(max_degree: int, variables: Iterable[str]) -> list[Exps]:
    idx = sorted({var_index(v) for v in variables})
    out = []
    for deg in range(max_degree + 1):
        for combo in combinations_with_replacement(idx, deg):
            e = [0] * NV
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return sorted(out, key=mono_key)


# --------------------------------------------------------------------------
# polynomial matrices


def _is_zero_arr(a: np.ndarray) -> bool:
    if a.size == 0:
        return True
    if a.dtype == object:
        return all(v == 0 for v in a.flat)
    return not np.any(a)


def _exact_array(m, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.empty((len(m), len(m[0]) if len(m) else (cols or 0)), dtype=object)
    for i, row in enumerate(m):
        for j, v in enumerate(row):
            arr[i, j] = to_fraction(v)
    return arr


class PolyMatrix:
    """Matrix-valued polynomial stored as {monomial: coefficient matrix}.

    Coefficient arrays are dtype=object holding Fractions (exact) or float64.
    """

    __slots__ = ("rows", "cols", "terms", "exact")

    def __init__(self, rows: int, cols: int, terms: Mapping[Exps, np.ndarray] | None = None,
                 exact: bool = True, _trusted: bool = False):
        if rows < 0 or cols < 0:
            raise PolyError("negative dimension")
        self.rows = rows
        self.cols = cols
        self.exact = exact
        if _trusted:
            self.terms = dict(terms or {})
            return
        clean: dict[Exps, np.ndarray] = {}
        for e, arr in (terms or {}).items():
            arr = np.asarray(arr, dtype=object if exact else float)
            if arr.shape != (rows, cols):
                raise PolyError(f"coefficient shape {arr.shape} != {(rows, cols)}")
            e = tuple(e) + (0,) * (NV - len(e))
            if e in clean:
                arr = clean[e] + arr
            clean[e] = arr
        self.terms = {e: a for e, a in clean.items() if not _is_zero_arr(a)}

    # construction --------------------------------------------------------
    @classmethod
    def zeros(cls, rows: int, cols: int, exact: bool = True) -> "PolyMatrix":
        return cls(rows, cols, {}, exact)

    @classmethod
    def eye(cls, n: int, scale: Scalar = 1) -> "PolyMatrix":
        arr = np.empty((n, n), dtype=object)
        arr.fill(Q(0))
        for i in range(n):
            arr[i, i] = to_fraction(scale)
        return cls(n, n, {ZERO_EXPS: arr})

    @classmethod
    def const(cls, m, rows: int | None = None, cols: int | None = None) -> "PolyMatrix":
        """Constant matrix from nested lists / ndarray of rationals."""
        if isinstance(m, np.ndarray) and m.ndim == 2:
            r, c = m.shape
            arr = np.empty((r, c), dtype=object)
            for i in range(r):
                for j in range(c):
                    arr[i, j] = to_fraction(m[i, j])
            return cls(r, c, {ZERO_EXPS: arr})
        m = [list(row) for row in m]
        r = len(m) if rows is None else rows
        c = (len(m[0]) if m else 0) if cols is None else cols
        if r == 0 or c == 0:
            return cls.zeros(r, c)
        return cls(r, c, {ZERO_EXPS: _exact_array(m)})

    @classmethod
    def scalar(cls, p: Union[Poly, Scalar]) -> "PolyMatrix":
        if not isinstance(p, Poly):
            p = Poly.const(p)
        return cls.from_polys([[p]])

    @classmethod
    def from_polys(cls, grid: Sequence[Sequence[Union[Poly, Scalar]]]) -> "PolyMatrix":
        r = len(grid)
        c = len(grid[0]) if r else 0
        terms: dict[Exps, np.ndarray] = {}
        exact = True
        for i, row in enumerate(grid):
            if len(row) != c:
                raise PolyError("ragged grid")
            for j, p in enumerate(row):
                if not isinstance(p, Poly):
                    p = Poly.const(p)
                for e, coef in p.terms.items():
                    if isinstance(coef, float):
                        exact = False
                    if e not in terms:
                        z = np.empty((r, c), dtype=object)
                        z.fill(Q(0))
                        terms[e] = z
                    terms[e][i, j] = coef
        out = cls(r, c, terms, exact=True)
        return out if exact else out.to_float()

    @classmethod
    def monomial(cls, exps: Sequence[int], coeff: np.ndarray | Sequence) -> "PolyMatrix":
        arr = coeff if isinstance(coeff, np.ndarray) else _exact_array(coeff)
        return cls(arr.shape[0], arr.shape[1], {tuple(exps): arr})

    # conversion ------------------------------------------------------------
    def to_float(self) -> "PolyMatrix":
        return PolyMatrix(self.rows, self.cols,
                          {e: np.asarray(a, dtype=float) for e, a in self.terms.items()},
                          exact=False, _trusted=True)

    def entry(self, i: int, j: int) -> Poly:
        return Poly({e: a[i, j] for e, a in self.terms.items()})

    def to_polys(self) -> list[list[Poly]]:
        return [[self.entry(i, j) for j in range(self.cols)] for i in range(self.rows)]

    def coeff(self, exps: Sequence[int]) -> np.ndarray:
        e = tuple(exps) + (0,) * (NV - len(exps))
        if e in self.terms:
            return self.terms[e]
        return self._zero_arr()

    def _zero_arr(self) -> np.ndarray:
        if self.exact:
            z = np.empty((self.rows, self.cols), dtype=object)
            z.fill(Q(0))
            return z
        return np.zeros((self.rows, self.cols))

    # arithmetic --------------------------------------------------------------
    def _check_same(self, other: "PolyMatrix"):
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise PolyError(f"dimension mismatch {self.shape} vs {other.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def _coerce_pair(self, other: "PolyMatrix"):
        if self.exact and not other.exact:
            return self.to_float(), other
        if other.exact and not self.exact:
            return self, other.to_float()
        return self, other

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        self._check_same(other)
        a, b = self._coerce_pair(other)
        out = dict(a.terms)
        for e, arr in b.terms.items():
            out[e] = out[e] + arr if e in out else arr
        return PolyMatrix(a.rows, a.cols, {e: v for e, v in out.items() if not _is_zero_arr(v)},
                          exact=a.exact, _trusted=True)

    def __neg__(self) -> "PolyMatrix":
        return PolyMatrix(self.rows, self.cols, {e: -a for e, a in self.terms.items()},
                          exact=self.exact, _trusted=True)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-other)

    def scale(self, s: Scalar) -> "PolyMatrix":
        if s == 0:
            return PolyMatrix.zeros(self.rows, self.cols, self.exact)
        if self.exact and not isinstance(s, float):
            s = to_fraction(s)
        elif self.exact:
            return self.to_float().scale(s)
        return PolyMatrix(self.rows, self.cols, {e: a * s for e, a in self.terms.items()},
                          exact=self.exact, _trusted=True)

    def __mul__(self, other):
        """Scalar or scalar-polynomial multiplication (entrywise)."""
        if isinstance(other, Poly):
            return self.mul_poly(other)
        if isinstance(other, PolyMatrix):
            raise PolyError("use @ for matrix products")
        return self.scale(other)

    __rmul__ = __mul__

    def mul_poly(self, p: Poly) -> "PolyMatrix":
        out: dict[Exps, np.ndarray] = {}
        exact = self.exact and all(not isinstance(c, float) for c in p.terms.values())
        src = self if exact or not self.exact else self.to_float()
        for e1, a in src.terms.items():
            for e2, c in p.terms.items():
                e = mono_mul(e1, e2)
                v = a * c
                out[e] = out[e] + v if e in out else v
        return PolyMatrix(self.rows, self.cols, out, exact=exact)

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise PolyError(f"inner dimension mismatch {self.shape} @ {other.shape}")
        a, b = self._coerce_pair(other)
        out: dict[Exps, np.ndarray] = {}
        if a.rows and b.cols and a.cols:
            for e1, m1 in a.terms.items():
                for e2, m2 in b.terms.items():
                    e = mono_mul(e1, e2)
                    v = m1 @ m2
                    out[e] = out[e] + v if e in out else v
        return PolyMatrix(a.rows, b.cols, out, exact=a.exact)

    @property
    def T(self) -> "PolyMatrix":
        return PolyMatrix(self.cols, self.rows, {e: a.T.copy() for e, a in self.terms.items()},
                          exact=self.exact, _trusted=True)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyMatrix) or self.shape != other.shape:
            return False
        return (self - other).is_zero()

    __hash__ = None

    # structure -----------------------------------------------------------------
    def is_zero(self) -> bool:
        return all(_is_zero_arr(a) for a in self.terms.values())

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def varset(self) -> frozenset[str]:
        out: set[int] = set()
        for e in self.terms:
            out |= _vars_in(e)
        return frozenset(VARS[i] for i in out)

    def check_vars(self, allowed: Iterable[str], what: str = "kernel") -> None:
        allowed_i = {var_index(v) for v in allowed}
        for e in self.terms:
            bad = _vars_in(e) - allowed_i
            if bad:
                names = ", ".join(VARS[i] for i in sorted(bad))
                raise PolyError(f"{what} depends on {names}, allowed {sorted(allowed)}")

    def max_abs_coeff(self) -> float:
        return max((float(np.max(np.abs(np.asarray(a, dtype=float)))) for a in self.terms.values()
                    if a.size), default=0.0)

    def sub(self, rows: slice | Sequence[int], cols: slice | Sequence[int]) -> "PolyMatrix":
        ridx = range(self.rows)[rows] if isinstance(rows, slice) else list(rows)
        cidx = range(self.cols)[cols] if isinstance(cols, slice) else list(cols)
        ridx, cidx = list(ridx), list(cidx)
        terms = {e: a[np.ix_(ridx, cidx)] for e, a in self.terms.items()} if ridx and cidx else {}
        return PolyMatrix(len(ridx), len(cidx), terms, exact=self.exact)

    @staticmethod
    def block(grid: Sequence[Sequence["PolyMatrix"]]) -> "PolyMatrix":
        """Assemble from a grid of blocks with consistent row/column sizes."""
        rsz = [row[0].rows for row in grid]
        csz = [blk.cols for blk in grid[0]] if grid else []
        for i, row in enumerate(grid):
            for j, blk in enumerate(row):
                if blk.shape != (rsz[i], csz[j]):
                    raise PolyError(f"block ({i},{j}) has shape {blk.shape}, expected {(rsz[i], csz[j])}")
        exact = all(blk.exact for row in grid for blk in row)
        R, C = sum(rsz), sum(csz)
        terms: dict[Exps, np.ndarray] = {}
        r0 = 0
        for i, row in enumerate(grid):
            c0 = 0
            for j, blk in enumerate(row):
                src = blk if exact or not blk.exact else blk.to_float()
                for e, a in src.terms.items():
                    if e not in terms:
                        if exact:
                            z = np.empty((R, C), dtype=object)
                            z.fill(Q(0))
                        else:
                            z = np.zeros((R, C))
                        terms[e] = z
                    terms[e][r0:r0 + rsz[i], c0:c0 + csz[j]] = a
                c0 += csz[j]
            r0 += rsz[i]
        return PolyMatrix(R, C, terms, exact=exact)

    @staticmethod
    def hstack(blocks: Sequence["PolyMatrix"]) -> "PolyMatrix":
        return PolyMatrix.block([list(blocks)])

    @staticmethod
    def vstack(blocks: Sequence["PolyMatrix"]) -> "PolyMatrix":
        return PolyMatrix.block([[b] for b in blocks])

    @staticmethod
    def blkdiag(blocks: Sequence["PolyMatrix"]) -> "PolyMatrix":
        grid = []
        for i, bi in enumerate(blocks):
            grid.append([bi if i == j else PolyMatrix.zeros(bi.rows, bj.cols) for j, bj in enumerate(blocks)])
        return PolyMatrix.block(grid)

    # calculus -------------------------------------------------------------------
    def map_monomials(self, fn: Callable[[Exps], Iterable[tuple[Exps, Scalar]]]) -> "PolyMatrix":
        out: dict[Exps, np.ndarray] = {}
        for e, a in self.terms.items():
            for e2, f in fn(e):
                v = a * f if f != 1 else a
                out[e2] = out[e2] + v if e2 in out else v
        return PolyMatrix(self.rows, self.cols, out, exact=self.exact)

    def integrate(self, var, lower: Bound, upper: Bound, rect: Rect | None = None) -> "PolyMatrix":
        v = var_index(var)
        lo, hi = _norm_bound(lower, rect), _norm_bound(upper, rect)
        return self.map_monomials(lambda e: mono_integrate(e, v, lo, hi))

    def substitute(self, var, value: Bound, rect: Rect | None = None) -> "PolyMatrix":
        v = var_index(var)
        kind, val = _norm_bound(value, rect)
        return self.map_monomials(lambda e: (mono_subst(e, v, kind, val),))

    def diff(self, var) -> "PolyMatrix":
        v = var_index(var)

        def fn(e):
            r = mono_diff(e, v)
            return () if r is None else (r,)

        return self.map_monomials(fn)

    def rename(self, mapping: Mapping) -> "PolyMatrix":
        perm = make_perm(mapping)
        return self.map_monomials(lambda e: ((mono_rename(e, perm), 1),))

    # evaluation -----------------------------------------------------------------------
    def eval(self, point: Mapping[str, Scalar]) -> np.ndarray:
        out = self._zero_arr()
        for j in range(self.cols):
            for i in range(self.rows):
                out[i, j] = self.entry(i, j).eval(point)
        return out

    def eval_numeric(self, **arrays: np.ndarray) -> np.ndarray:
        """Evaluate at broadcastable float arrays; returns (rows, cols, *shape)."""
        idx = {var_index(k): np.asarray(v, dtype=float) for k, v in arrays.items()}
        shape = np.broadcast_shapes(*(v.shape for v in idx.values())) if idx else ()
        out = np.zeros((self.rows, self.cols) + shape)
        if not self.terms:
            return out
        exps = list(self.terms)
        coefs = np.stack([np.asarray(self.terms[e], dtype=float) for e in exps])
        vals = np.empty((len(exps),) + shape)
        pow_cache: dict[tuple[int, int], np.ndarray] = {}
        for t, e in enumerate(exps):
            # multiply the low-dimensional factors first, broadcast once
            m = 1.0
            for i, k in enumerate(e):
                if k:
                    if i not in idx:
                        raise PolyError(f"missing value for {VARS[i]}")
                    key = (i, k)
                    if key not in pow_cache:
                        pow_cache[key] = idx[i] ** k
                    m = m * pow_cache[key]
            vals[t] = m
        return np.tensordot(coefs, vals, axes=(0, 0))

    def __repr__(self):
        return f"PolyMatrix({self.rows}x{self.cols}, {len(self.terms)} monomials)"

    def pretty(self) -> str:
        lines = []
        for i in range(self.rows):
            lines.append("[" + ", ".join(format_poly(self.entry(i, j)) for j in range(self.cols)) + "]")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# free-function forms of the PolyMatrix operations


def add(p: PolyMatrix, q: PolyMatrix) -> PolyMatrix:
    return p + q


def mul(p: PolyMatrix, q: PolyMatrix) -> PolyMatrix:
    return p @ q


def integrate(p: Union[Poly, PolyMatrix], var, lower: Bound, upper: Bound, rect: Rect | None = None):
    return p.integrate(var, lower, upper, rect)


def substitute(p: Union[Poly, PolyMatrix], var, value: Bound, rect: Rect | None = None):
    return p.substitute(var, value, rect)


def diff(p: Union[Poly, PolyMatrix], var):
    return p.diff(var)


def evaluate(p: Poly, point: Mapping[str, Scalar]) -> Scalar:
    return p.eval(point)


def iter_nonzero(p: PolyMatrix) -> Iterator[tuple[int, int, Poly]]:
    for i in range(p.rows):
        for j in range(p.cols):
            q = p.entry(i, j)
            if not q.is_zero():
                yield i, j, q
