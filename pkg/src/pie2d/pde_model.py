"""Standardized linear 2D PDE: states, dynamics A_ij, boundary operator B.

State u = (u0, u1, u2) with u0 in L2, u1 differentiable once in x and y,
u2 twice.  Dynamics

    u_t = sum_ij A_ij d_x^i d_y^j (N_max(i,j) u),

with N0 = I, N1 = [0, I], N2 = [0, 0, I].  Boundary conditions are
B Lambda_bf u = 0 where Lambda_bf lists every admissible boundary value
(see BoundaryOrdering).
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .pi_algebra import N011, PIError, embed
from .poly_core import PolyMatrix, Q, Rect, to_fraction

CORNERS = (("a", "c"), ("b", "c"), ("a", "d"), ("b", "d"))


class PdeFormatError(ValueError):
    """Malformed PDE file; message carries the line number."""


# --------------------------------------------------------------------------
# boundary layouts


@dataclass(frozen=True)
class BoundaryOrdering:
    """Row labels of Lambda_bf and Lambda_bc for state sizes (n1, n2).

    Each label is (quantity, where, state_block); quantity is a derivative
    multi-index (i, j) applied to u1 or u2.
    """

    n1: int
    n2: int

    # quantities per part, as (state, (dx, dy))
    @property
    def corner_quantities(self):
        return (("u1", (0, 0)), ("u2", (0, 0)), ("u2", (1, 0)), ("u2", (0, 1)), ("u2", (1, 1)))

    @property
    def xedge_quantities(self):
        return (("u1", (1, 0)), ("u2", (2, 0)), ("u2", (2, 1)))

    @property
    def yedge_quantities(self):
        return (("u1", (0, 1)), ("u2", (0, 2)), ("u2", (1, 2)))

    def size(self, state: str) -> int:
        return self.n1 if state == "u1" else self.n2

    @property
    def bf_sizes(self) -> tuple[int, int]:
        """(R part, per-edge-direction part) of Lambda_bf."""
        return 4 * self.n1 + 16 * self.n2, 2 * self.n1 + 4 * self.n2

    @property
    def bc_sizes(self) -> tuple[int, int]:
        return self.n1 + 4 * self.n2, self.n1 + 2 * self.n2

    def bf_labels(self) -> list[tuple]:
        out = []
        for st, der in self.corner_quantities:
            for corner in CORNERS:
                out.extend((st, der, corner, i) for i in range(self.size(st)))
        for st, der in self.xedge_quantities:
            for edge in ("c", "d"):
                out.extend((st, der, ("x", edge), i) for i in range(self.size(st)))
        for st, der in self.yedge_quantities:
            for edge in ("a", "b"):
                out.extend((st, der, (edge, "y"), i) for i in range(self.size(st)))
        return out

    def bc_labels(self) -> list[tuple]:
        out = []
        for st, der in self.corner_quantities:
            out.extend((st, der, ("a", "c"), i) for i in range(self.size(st)))
        for st, der in self.xedge_quantities:
            out.extend((st, der, ("x", "c"), i) for i in range(self.size(st)))
        for st, der in self.yedge_quantities:
            out.extend((st, der, ("a", "y"), i) for i in range(self.size(st)))
        return out


# --------------------------------------------------------------------------
# the PDE


@dataclass
class OdeCoupling:
    """Finite-dimensional state X coupled to the PDE.

    X' = A X + C (Lambda_bf u)[corners]; the PDE is not driven by X.
    """

    A: np.ndarray
    C: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass
class PdeSpec:
    rect: Rect
    n0: int
    n1: int
    n2: int
    A: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    B: np.ndarray | None = None
    ode: OdeCoupling | None = None
    name: str = ""

    def __post_init__(self):
        for k in (self.n0, self.n1, self.n2):
            if k < 0:
                raise PIError("state sizes must be non-negative")
        if self.n_state == 0:
            raise PIError("PDE has no states")
        A = {}
        for (i, j), m in self.A.items():
            if not (0 <= i <= 2 and 0 <= j <= 2):
                raise PIError(f"A{i}{j}: derivative orders must be 0..2")
            m = _exact(m)
            want = (self.n_state, self.ncols(max(i, j)))
            if m.shape != want:
                raise PIError(f"A{i}{j} has shape {m.shape}, expected {want}")
            if any(v != 0 for v in m.ravel()):
                A[(i, j)] = m
        self.A = A
        rows = self.bc_rows
        cols = self.bf_cols
        if self.B is None:
            self.B = _exact(np.zeros((rows, cols), dtype=object))
        self.B = _exact(self.B)
        if self.B.size == 0:
            self.B = self.B.reshape(rows, cols)
        if self.B.shape != (rows, cols):
            raise PIError(f"B has shape {self.B.shape}, expected {(rows, cols)}")
        if self.ode is not None:
            self.ode = OdeCoupling(_exact(self.ode.A), _exact(self.ode.C))
            no = self.ode.n
            if self.ode.A.shape != (no, no) or self.ode.C.shape != (no, self.ordering.bf_sizes[0]):
                raise PIError("ODE matrices: A must be square and C must have one column per corner value")

    @property
    def n_state(self) -> int:
        return self.n0 + self.n1 + self.n2

    def ncols(self, k: int) -> int:
        return (self.n_state, self.n1 + self.n2, self.n2)[k]

    @property
    def ordering(self) -> BoundaryOrdering:
        return BoundaryOrdering(self.n1, self.n2)

    @property
    def bc_rows(self) -> int:
        r0, r1 = self.ordering.bc_sizes
        return r0 + 2 * r1

    @property
    def bf_cols(self) -> int:
        c0, c1 = self.ordering.bf_sizes
        return c0 + 2 * c1

    def B_op(self) -> N011:
        """B as a multiplier-type 011 operator."""
        r0, r1 = self.ordering.bc_sizes
        c0, c1 = self.ordering.bf_sizes
        return N011.from_op(embed(PolyMatrix.const(self.B), "011", (r0, r1), (c0, c1), self.rect))

    def with_params(self, **kw) -> "PdeSpec":
        return PdeSpec(**{**self.__dict__, **kw})


def _exact(m) -> np.ndarray:
    a = np.array(m, dtype=object)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    out = np.empty(a.shape, dtype=object)
    for idx, v in np.ndenumerate(a):
        out[idx] = to_fraction(v)
    return out


# --------------------------------------------------------------------------
# boundary values of polynomial states


def _deriv(p: PolyMatrix, der) -> PolyMatrix:
    for _ in range(der[0]):
        p = p.diff("x")
    for _ in range(der[1]):
        p = p.diff("y")
    return p


def _at(p: PolyMatrix, where, rect: Rect) -> PolyMatrix:
    wx, wy = where
    if wx != "x":
        p = p.substitute("x", wx, rect)
    if wy != "y":
        p = p.substitute("y", wy, rect)
    return p


def _split(spec_sizes, u: PolyMatrix) -> dict[str, PolyMatrix]:
    n0, n1, n2 = spec_sizes
    if u.shape != (n0 + n1 + n2, 1):
        raise PIError(f"state has shape {u.shape}, expected {(n0 + n1 + n2, 1)}")
    return {"u0": u.sub(slice(0, n0), slice(0, 1)),
            "u1": u.sub(slice(n0, n0 + n1), slice(0, 1)),
            "u2": u.sub(slice(n0 + n1, n0 + n1 + n2), slice(0, 1))}


def _collect(parts: dict, groups, rect) -> list[PolyMatrix]:
    out = []
    for quantities, places in groups:
        blocks = []
        for st, der in quantities:
            for where in places:
                if parts[st].rows:
                    blocks.append(_at(_deriv(parts[st], der), where, rect))
        out.append(PolyMatrix.vstack(blocks) if blocks else PolyMatrix.zeros(0, 1))
    return out


def apply_lambda_bf(spec: PdeSpec, u: PolyMatrix) -> dict[str, PolyMatrix]:
    """Lambda_bf u as an element of R x L2[x] x L2[y] (keys '0', 'x', 'y')."""
    o = spec.ordering
    parts = _split((spec.n0, spec.n1, spec.n2), u)
    r, x, y = _collect(parts, [(o.corner_quantities, CORNERS),
                               (o.xedge_quantities, (("x", "c"), ("x", "d"))),
                               (o.yedge_quantities, (("a", "y"), ("b", "y")))], spec.rect)
    return {"0": r, "x": x, "y": y}


def apply_lambda_bc(spec: PdeSpec, u: PolyMatrix) -> dict[str, PolyMatrix]:
    """Core boundary values: corner data at (a,c), edge data along y=c and x=a."""
    o = spec.ordering
    parts = _split((spec.n0, spec.n1, spec.n2), u)
    r, x, y = _collect(parts, [(o.corner_quantities, (("a", "c"),)),
                               (o.xedge_quantities, (("x", "c"),)),
                               (o.yedge_quantities, (("a", "y"),))], spec.rect)
    return {"0": r, "x": x, "y": y}


def apply_D(spec: PdeSpec, u: PolyMatrix) -> PolyMatrix:
    """Fundamental state (u0, d_x d_y u1, d_x^2 d_y^2 u2)."""
    parts = _split((spec.n0, spec.n1, spec.n2), u)
    blocks = [parts["u0"], _deriv(parts["u1"], (1, 1)), _deriv(parts["u2"], (2, 2))]
    return PolyMatrix.vstack([b for b in blocks if b.rows])


def apply_B(spec: PdeSpec, bf: dict[str, PolyMatrix]) -> dict[str, PolyMatrix]:
    from .pi_algebra import apply_exact
    return apply_exact(spec.B_op(), bf)


# --------------------------------------------------------------------------
# well-posedness


@dataclass
class WellPosednessReport:
    wellposed: bool
    factor: str | None = None
    message: str = ""


def check_wellposed(spec: PdeSpec) -> WellPosednessReport:
    from .pi_calculus import NotInvertibleError
    from .pie_converter import build_E_Ehat

    try:
        build_E_Ehat(spec)
    except NotInvertibleError as exc:
        return WellPosednessReport(False, exc.factor, str(exc))
    return WellPosednessReport(True, None, "E = B o H1 is invertible")


# --------------------------------------------------------------------------
# file format

_SECTIONS = ("domain", "states", "dynamics", "bc", "ode")
_TEMPLATE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def template_names(text: str) -> list[str]:
    return sorted(set(_TEMPLATE.findall(text)))


def _fill(text: str, params: Mapping[str, object]) -> str:
    def sub(m):
        name = m.group(1)
        if name not in params:
            raise PdeFormatError(f"template parameter {{{name}}} has no value")
        return str(params[name])

    return _TEMPLATE.sub(sub, text)


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return Fraction(str(node.value))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left), _eval(node.right))
    raise ValueError("unsupported expression")


_BINOPS = {ast.Add: lambda p, q: p + q, ast.Sub: lambda p, q: p - q,
           ast.Mult: lambda p, q: p * q, ast.Div: lambda p, q: p / q}


def _num(tok: str, ln: int):
    """Rational from a number or a +-*/ expression of numbers (no spaces)."""
    try:
        return to_fraction(tok)
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return to_fraction(_eval(ast.parse(tok, mode="eval")))
    except (ValueError, SyntaxError, ZeroDivisionError):
        raise PdeFormatError(f"line {ln}: bad number {tok!r}") from None


def _matrix(val: str, ln: int) -> np.ndarray:
    rows = [r.split() for r in val.split(";")]
    if any(len(r) != len(rows[0]) for r in rows) or not rows[0]:
        raise PdeFormatError(f"line {ln}: ragged or empty matrix")
    return np.array([[_num(t, ln) for t in r] for r in rows], dtype=object)


def parse_pde(text: str | bytes, params: Mapping[str, object] | None = None, name: str = "") -> PdeSpec:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    text = _fill(text, params or {})
    sec = None
    dom, states, dyn, bc_rows, ode = {}, {}, {}, [], {}
    seen = set()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[(\w+)\]", line)
        if m:
            sec = m.group(1)
            if sec not in _SECTIONS:
                raise PdeFormatError(f"line {ln}: unknown section [{sec}]")
            seen.add(sec)
            continue
        if sec is None:
            raise PdeFormatError(f"line {ln}: content before first section")
        if "=" not in line:
            raise PdeFormatError(f"line {ln}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if sec == "domain":
            toks = val.split()
            if key not in ("x", "y") or len(toks) != 2:
                raise PdeFormatError(f"line {ln}: domain lines are 'x = lo hi' / 'y = lo hi'")
            dom[key] = (_num(toks[0], ln), _num(toks[1], ln))
        elif sec == "states":
            if key not in ("n0", "n1", "n2") or not val.isdigit():
                raise PdeFormatError(f"line {ln}: states lines are n0/n1/n2 = integer")
            states[key] = int(val)
        elif sec == "dynamics":
            m = re.fullmatch(r"A([0-2])([0-2])", key)
            if not m:
                raise PdeFormatError(f"line {ln}: dynamics keys are A00..A22")
            dyn[(int(m.group(1)), int(m.group(2)))] = (_matrix(val, ln), ln)
        elif sec == "bc":
            if key != "row":
                raise PdeFormatError(f"line {ln}: bc lines are 'row = ...'")
            bc_rows.append(([_num(t, ln) for t in val.split()], ln))
        elif sec == "ode":
            if key not in ("A", "C"):
                raise PdeFormatError(f"line {ln}: ode keys are A and C")
            ode[key] = _matrix(val, ln)
    for need in ("domain", "states", "bc"):
        if need not in seen:
            raise PdeFormatError(f"missing section [{need}]")
    if set(dom) != {"x", "y"}:
        raise PdeFormatError("[domain] needs both x and y")
    try:
        rect = Rect(dom["x"][0], dom["x"][1], dom["y"][0], dom["y"][1])
    except ValueError as exc:
        raise PdeFormatError(f"[domain]: {exc}") from None
    n0, n1, n2 = (states.get(k, 0) for k in ("n0", "n1", "n2"))
    if n0 + n1 + n2 == 0:
        raise PdeFormatError("[states]: no states declared")
    n = n0 + n1 + n2
    A = {}
    for (i, j), (mat, ln) in dyn.items():
        want = (n, (n, n1 + n2, n2)[max(i, j)])
        if mat.shape == (1, 1) and want != (1, 1):
            raise PdeFormatError(f"line {ln}: scalar A{i}{j} needs shape {want}")
        if mat.shape != want:
            raise PdeFormatError(f"line {ln}: A{i}{j} has shape {mat.shape}, expected {want}")
        A[(i, j)] = mat
    o = BoundaryOrdering(n1, n2)
    ncol = o.bf_sizes[0] + 2 * o.bf_sizes[1]
    nrow = o.bc_sizes[0] + 2 * o.bc_sizes[1]
    for row, ln in bc_rows:
        if len(row) != ncol:
            raise PdeFormatError(f"line {ln}: bc row has {len(row)} entries, expected {ncol}")
    if len(bc_rows) != nrow:
        raise PdeFormatError(f"[bc]: {len(bc_rows)} rows, expected {nrow}")
    B = np.array([r for r, _ in bc_rows], dtype=object)
    coupling = None
    if ode:
        if set(ode) != {"A", "C"}:
            raise PdeFormatError("[ode] needs both A and C")
        coupling = OdeCoupling(ode["A"], ode["C"])
    try:
        return PdeSpec(rect, n0, n1, n2, A, B, coupling, name)
    except PIError as exc:
        raise PdeFormatError(str(exc)) from None


def _fmt(v) -> str:
    v = to_fraction(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _fmt_matrix(m: np.ndarray) -> str:
    return "; ".join(" ".join(_fmt(v) for v in row) for row in m)


def serialize(spec: PdeSpec) -> str:
    r = spec.rect
    lines = ["[domain]", f"x = {_fmt(r.a)} {_fmt(r.b)}", f"y = {_fmt(r.c)} {_fmt(r.d)}",
             "[states]", f"n0 = {spec.n0}", f"n1 = {spec.n1}", f"n2 = {spec.n2}", "[dynamics]"]
    for (i, j) in sorted(spec.A):
        lines.append(f"A{i}{j} = {_fmt_matrix(spec.A[(i, j)])}")
    lines.append("[bc]")
    lines.extend("row = " + " ".join(_fmt(v) for v in row) for row in spec.B)
    if spec.ode is not None:
        lines += ["[ode]", f"A = {_fmt_matrix(spec.ode.A)}", f"C = {_fmt_matrix(spec.ode.C)}"]
    return "\n".join(lines) + "\n"


def specs_equal(p: PdeSpec, q: PdeSpec) -> bool:
    if (p.rect, p.n0, p.n1, p.n2) != (q.rect, q.n0, q.n1, q.n2):
        return False
    if set(p.A) != set(q.A) or any((p.A[k] != q.A[k]).any() for k in p.A):
        return False
    if (p.B != q.B).any():
        return False
    if (p.ode is None) != (q.ode is None):
        return False
    return p.ode is None or ((p.ode.A == q.ode.A).all() and (p.ode.C == q.ode.C).all())
