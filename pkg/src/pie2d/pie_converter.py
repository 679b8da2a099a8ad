"""PDE -> PIE conversion.

The PDE state is rebuilt from its fundamental state uh = D u and the core
boundary values Lambda_bc u:

    u          = K1 Lambda_bc u + K2 uh
    Lambda_bf u = H1 Lambda_bc u + H2 uh

With E = B H1 and F = B H2, the boundary condition B Lambda_bf u = 0 gives
Lambda_bc u = -Ehat F uh (Ehat = E^-1), hence u = T uh with
T = K2 - K1 G, G = Ehat F.  The generator is

    A = sum_ij A_ij d_x^i d_y^j (N_max(i,j) T).

E, F, G and T are each computed twice: through the generic composition
engine and through hand-expanded kernel formulas.  The two must agree
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pde_model import CORNERS, PdeSpec
from .pi_algebra import (
    N011, N011To2d, N0112, N2d, N2dTo011, PIError, PIOp, compose, embed, _sizes,
)
from .pi_calculus import decompose_separable, diff_power, invert_011
from .poly_core import Poly, PolyMatrix, Q, Rect


class ConversionError(PIError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.cause = exc


# --------------------------------------------------------------------------
# reconstruction tables
#
# Every boundary quantity is written through the core values
#   c = (u1, u2, u2_x, u2_y, u2_xy) at (a, c)
#   e = (u1_x, u2_xx, u2_xxy) along y = c        (functions of x)
#   f = (u1_y, u2_yy, u2_xyy) along x = a        (functions of y)
# and the fundamental state uh = (u0, u1_xy, u2_xxyy).
# Entries are scalars s meaning s * I.


def _polys(rect: Rect):
    x, y = Poly.var("x"), Poly.var("y")
    th, nu = Poly.var("theta"), Poly.var("nu")
    return x, y, th, nu, rect.a, rect.c


def _point_table(rect: Rect) -> dict:
    """Value at (x, y): R(x,y) c + int_a^x EX e + int_c^y EY f + int int IN uh."""
    x, y, th, nu, a, c = _polys(rect)
    return {
        ("u1", (0, 0)): ([1, 0, 0, 0, 0], [1, 0, 0], [1, 0, 0], [0, 1, 0]),
        ("u2", (0, 0)): ([0, 1, x - a, y - c, (x - a) * (y - c)],
                         [0, x - th, (y - c) * (x - th)],
                         [0, y - nu, (x - a) * (y - nu)],
                         [0, 0, (x - th) * (y - nu)]),
        ("u2", (1, 0)): ([0, 0, 1, 0, y - c], [0, 1, y - c], [0, 0, y - nu], [0, 0, y - nu]),
        ("u2", (0, 1)): ([0, 0, 0, 1, x - a], [0, 0, x - th], [0, 1, x - a], [0, 0, x - th]),
        ("u2", (1, 1)): ([0, 0, 0, 0, 1], [0, 0, 1], [0, 0, 1], [0, 0, 1]),
    }


def _xedge_table(rect: Rect) -> dict:
    """Along fixed y: M(y) e(x) + int_c^y J(y, nu) uh(x, nu) dnu."""
    x, y, th, nu, a, c = _polys(rect)
    return {
        ("u1", (1, 0)): ([1, 0, 0], [0, 1, 0]),
        ("u2", (2, 0)): ([0, 1, y - c], [0, 0, y - nu]),
        ("u2", (2, 1)): ([0, 0, 1], [0, 0, 1]),
    }


def _yedge_table(rect: Rect) -> dict:
    """Along fixed x: M(x) f(y) + int_a^x J(x, theta) uh(theta, y) dtheta."""
    x, y, th, nu, a, c = _polys(rect)
    return {
        ("u1", (0, 1)): ([1, 0, 0], [0, 1, 0]),
        ("u2", (0, 2)): ([0, 1, x - a], [0, 0, x - th]),
        ("u2", (1, 2)): ([0, 0, 1], [0, 0, 1]),
    }


def _row(entries, k: int, col_sizes) -> PolyMatrix:
    """k x sum(col_sizes) matrix; entry s becomes s * I_k (or zero)."""
    blocks = []
    for s, m in zip(entries, col_sizes):
        if isinstance(s, (int, Q)) and s == 0 or m == 0 or k == 0:
            blocks.append(PolyMatrix.zeros(k, m))
            continue
        if k != m:
            raise PIError("reconstruction entry couples blocks of different size")
        blocks.append(PolyMatrix.eye(k).mul_poly(s if isinstance(s, Poly) else Poly.const(s)))
    return PolyMatrix.hstack(blocks)


# --------------------------------------------------------------------------
# H and K


def build_HK(n1: int, n2: int, rect: Rect, n0: int = 0):
    """(H1, H2, K1, K2) for state sizes (n0, n1, n2) on rect."""
    n = n0 + n1 + n2
    c_sz = (n1, n2, n2, n2, n2)
    e_sz = (n1, n2, n2)
    u_sz = (n0, n1, n2)
    size = {"u1": n1, "u2": n2}
    bc0, bc1 = n1 + 4 * n2, n1 + 2 * n2
    bf0, bf1 = 4 * n1 + 16 * n2, 2 * n1 + 4 * n2
    pt, xt, yt = _point_table(rect), _xedge_table(rect), _yedge_table(rect)

    def pt_rows(q):
        R, EX, EY, IN = pt[q]
        k = size[q[0]]
        return _row(R, k, c_sz), _row(EX, k, e_sz), _row(EY, k, e_sz), _row(IN, k, u_sz)

    # corners
    h00, h01, h02, h03 = [], [], [], []
    for q in pt:
        R, EX, EY, IN = pt_rows(q)
        for cx, cy in CORNERS:
            at = lambda m: m.substitute("x", cx, rect).substitute("y", cy, rect)
            h00.append(at(R))
            h01.append(at(EX) if cx == "b" else PolyMatrix.zeros(*EX.shape))
            h02.append(at(EY) if cy == "d" else PolyMatrix.zeros(*EY.shape))
            h03.append(at(IN) if (cx, cy) == ("b", "d") else PolyMatrix.zeros(*IN.shape))
    H00, H01, H02, H03 = (PolyMatrix.vstack(v) for v in (h00, h01, h02, h03))

    def edge(table, var, hi, ivar):
        mult, kern = [], []
        for q, (M, J) in table.items():
            k = size[q[0]]
            Mr, Jr = _row(M, k, e_sz), _row(J, k, u_sz)
            for lo_hi in ("lo", "hi"):
                val = ("c" if var == "y" else "a") if lo_hi == "lo" else hi
                mult.append(Mr.substitute(var, val, rect))
                kern.append(Jr.substitute(var, hi, rect) if lo_hi == "hi" else PolyMatrix.zeros(*Jr.shape))
        return PolyMatrix.vstack(mult), PolyMatrix.vstack(kern)

    H11, H13 = edge(xt, "y", "d", "nu")
    H22, H23 = edge(yt, "x", "b", "theta")

    H1 = N011.make(bf0, bf1, bc0, bc1, {(0, 0): H00, (0, 1): H01, (0, 2): H02,
                                         (1, 1, 0): H11, (2, 2, 0): H22}, rect)
    H2op = PIOp(_sizes(r=bf0, x=bf1, y=bf1), _sizes(xy=n), None, rect)
    H2op._put("0", "xy", ("i", "i"), H03)
    H2op._put("x", "xy", (0, "i"), H13)
    H2op._put("y", "xy", ("i", 0), H23)
    H2 = N2dTo011.from_op(H2op)

    # the state itself: rows (u0, u1, u2)
    K30, K31, K32, K33 = [], [], [], []
    if n0:
        K30.append(PolyMatrix.zeros(n0, bc0))
        K31.append(PolyMatrix.zeros(n0, bc1))
        K32.append(PolyMatrix.zeros(n0, bc1))
        K33.append(PolyMatrix.zeros(n0, n))
    for q in (("u1", (0, 0)), ("u2", (0, 0))):
        if size[q[0]]:
            R, EX, EY, IN = pt_rows(q)
            K30.append(R)
            K31.append(EX)
            K32.append(EY)
            K33.append(IN)
    K1op = PIOp(_sizes(xy=n), _sizes(r=bc0, x=bc1, y=bc1), None, rect)
    K1op._put("xy", "0", ("o", "o"), PolyMatrix.vstack(K30))
    K1op._put("xy", "x", (1, "o"), PolyMatrix.vstack(K31))
    K1op._put("xy", "y", ("o", 1), PolyMatrix.vstack(K32))
    K1 = N011To2d.from_op(K1op)
    T00 = PolyMatrix.zeros(n, n)
    if n0:
        T00 = PolyMatrix.blkdiag([PolyMatrix.eye(n0), PolyMatrix.zeros(n1 + n2, n1 + n2)])
    K2 = N2d.make([[T00, None, None], [None, PolyMatrix.vstack(K33), None], [None] * 3], n, n, rect)
    return H1, H2, K1, K2


# --------------------------------------------------------------------------
# hand-expanded E, F, G, T
#
# Variables are canonical: 'i' kernels in theta / nu, outputs in x / y.


def _ren(m: PolyMatrix, **mp) -> PolyMatrix:
    return m.rename(mp) if mp else m


def _int(m: PolyMatrix, var: str, lo, hi, rect) -> PolyMatrix:
    return m.integrate(var, lo, hi, rect)


def explicit_E(B: N011, H1: N011) -> N011:
    s, h = B.slot, H1.slot
    H00, H01, H02, H11, H22 = h(0, 0), h(0, 1), h(0, 2), h(1, 1, 0), h(2, 2, 0)
    slots = {
        (0, 0): s(0, 0) @ H00,
        (0, 1): s(0, 0) @ H01 + s(0, 1) @ H11,
        (0, 2): s(0, 0) @ H02 + s(0, 2) @ H22,
        (1, 0): s(1, 0) @ H00,
        (2, 0): s(2, 0) @ H00,
        (1, 1, 0): s(1, 1, 0) @ H11,
        (2, 2, 0): s(2, 2, 0) @ H22,
        (1, 1, 1): s(1, 0) @ H01 + s(1, 1, 1) @ H11,
        (1, 1, 2): s(1, 0) @ H01 + s(1, 1, 2) @ H11,
        (2, 2, 1): s(2, 0) @ H02 + s(2, 2, 1) @ H22,
        (2, 2, 2): s(2, 0) @ H02 + s(2, 2, 2) @ H22,
        (1, 2): s(1, 0) @ H02 + s(1, 2) @ H22,
        (2, 1): s(2, 0) @ H01 + s(2, 1) @ H11,
    }
    n0, n1, _, _ = B.dims
    _, _, m0, m1 = H1.dims
    return N011.make(n0, n1, m0, m1, slots, B.rect)


def _f_parts(F: PIOp):
    g = F.get
    return {"F0": g("0", "xy", ("i", "i")),
            "F10": g("x", "xy", (0, "i")), "F11": g("x", "xy", (1, "i")), "F12": g("x", "xy", (2, "i")),
            "F20": g("y", "xy", ("i", 0)), "F21": g("y", "xy", ("i", 1)), "F22": g("y", "xy", ("i", 2))}


def explicit_F(B: N011, H2: N2dTo011) -> N2dTo011:
    s = B.slot
    H03 = H2.get("0", "xy", ("i", "i"))
    H13 = H2.get("x", "xy", (0, "i"))
    H23 = H2.get("y", "xy", ("i", 0))
    H13t = _ren(H13, x="theta")      # H13(theta, nu)
    H23n = _ren(H23, y="nu")         # H23(theta, nu)
    out = PIOp(B.out_sizes, H2.in_sizes, None, B.rect)
    out._put("0", "xy", ("i", "i"), s(0, 0) @ H03 + s(0, 1) @ H13t + s(0, 2) @ H23n)
    out._put("x", "xy", (0, "i"), s(1, 1, 0) @ H13)
    for t in (1, 2):
        out._put("x", "xy", (t, "i"), s(1, 0) @ H03 + s(1, 1, t) @ H13t + s(1, 2) @ H23n)
    out._put("y", "xy", ("i", 0), s(2, 2, 0) @ H23)
    for t in (1, 2):
        out._put("y", "xy", ("i", t), s(2, 0) @ H03 + s(2, 2, t) @ H23n + s(2, 1) @ H13t)
    return N2dTo011.from_op(out)


def explicit_G(Eh: N011, F: N2dTo011) -> N2dTo011:
    """G = Ehat F for separable Ehat and F (lower = upper kernels)."""
    rect = Eh.rect
    s = Eh.slot
    f = _f_parts(F)
    if s(1, 1, 1) != s(1, 1, 2) or s(2, 2, 1) != s(2, 2, 2):
        raise PIError("explicit G formulas need a separable Ehat")
    if f["F11"] != f["F12"] or f["F21"] != f["F22"]:
        raise PIError("explicit G formulas need F with equal lower and upper kernels")
    F0, F10, F11, F20, F21 = f["F0"], f["F10"], f["F11"], f["F20"], f["F21"]
    F10t = _ren(F10, x="theta")                # F1^0(theta, nu)
    F20n = _ren(F20, y="nu")                   # F2^0(theta, nu)
    F11eta = _ren(F11, x="eta")                # F1^1(eta, theta, nu)
    F21mu = _ren(F21, y="mu")                  # F2^1(theta, mu, nu)
    a, b, c, d = "a", "b", "c", "d"

    G0 = (s(0, 0) @ F0 + s(0, 1) @ F10t
          + _int(_ren(s(0, 1), theta="eta") @ F11eta, "eta", a, b, rect)
          + s(0, 2) @ F20n
          + _int(_ren(s(0, 2), nu="mu") @ F21mu, "mu", c, d, rect))
    G10 = s(1, 1, 0) @ F10
    G11 = (s(1, 0) @ F0 + s(1, 1, 0) @ F11 + s(1, 1, 1) @ F10t
           + _int(_ren(s(1, 1, 1), theta="eta") @ F11eta, "eta", a, b, rect)
           + s(1, 2) @ F20n
           + _int(_ren(s(1, 2), nu="mu") @ F21mu, "mu", c, d, rect))
    G20 = s(2, 2, 0) @ F20
    G21 = (s(2, 0) @ F0 + s(2, 2, 0) @ F21 + s(2, 2, 1) @ F20n
           + _int(_ren(s(2, 2, 1), nu="mu") @ F21mu, "mu", c, d, rect)
           + s(2, 1) @ F10t
           + _int(_ren(s(2, 1), theta="eta") @ F11eta, "eta", a, b, rect))
    out = PIOp(Eh.out_sizes, F.in_sizes, None, rect)
    out._put("0", "xy", ("i", "i"), G0)
    out._put("x", "xy", (0, "i"), G10)
    out._put("x", "xy", (1, "i"), G11)
    out._put("x", "xy", (2, "i"), G11)
    out._put("y", "xy", ("i", 0), G20)
    out._put("y", "xy", ("i", 1), G21)
    out._put("y", "xy", ("i", 2), G21)
    return N2dTo011.from_op(out)


def explicit_T(K1: N011To2d, K2: N2d, G: N2dTo011) -> N2d:
    rect = K1.rect
    g = _f_parts(G)
    K30 = K1.get("xy", "0", ("o", "o"))
    K31 = K1.get("xy", "x", (1, "o"))
    K32 = K1.get("xy", "y", ("o", 1))
    G0, G10, G11, G20, G21 = g["F0"], g["F10"], g["F11"], g["F20"], g["F21"]
    T22 = -(K30 @ G0
            + _int(_ren(K31, theta="eta") @ _ren(G11, x="eta"), "eta", "a", "x", rect)
            + _int(_ren(K32, nu="mu") @ _ren(G21, y="mu"), "mu", "c", "y", rect))
    T12 = T22 - K31 @ _ren(G10, x="theta")
    T21 = T22 - K32 @ _ren(G20, y="nu")
    T11 = K2.k(1, 1) + T21 + T12 - T22
    n = K2.n
    return N2d.make([[K2.k(0, 0), None, None], [None, T11, T12], [None, T21, T22]], n, n, rect)


# --------------------------------------------------------------------------
# pipeline


@dataclass
class PiePair:
    """PIE T uh' = A uh; T and A are N2d (or N0112 with an ODE)."""

    T: PIOp
    A: PIOp
    spec: PdeSpec
    intermediates: dict = field(default_factory=dict)

    @property
    def rect(self) -> Rect:
        return self.T.rect


def build_E_Ehat(spec: PdeSpec, H1: N011 | None = None):
    if H1 is None:
        H1 = build_HK(spec.n1, spec.n2, spec.rect, spec.n0)[0]
    B = spec.B_op()
    E = N011.from_op(compose(B, H1))
    Ehat = invert_011(decompose_separable(E))
    return E, Ehat


def build_EFG(spec: PdeSpec, H1: N011, H2: N2dTo011):
    B = spec.B_op()
    E = N011.from_op(compose(B, H1))
    if E != explicit_E(B, H1):
        raise PIError("E: composition and explicit formulas disagree")
    F = N2dTo011.from_op(compose(B, H2))
    if F != explicit_F(B, H2):
        raise PIError("F: composition and explicit formulas disagree")
    Ehat = invert_011(decompose_separable(E))
    G = N2dTo011.from_op(compose(Ehat, F))
    if G != explicit_G(Ehat, F):
        raise PIError("G: composition and explicit formulas disagree")
    return E, F, G, Ehat


def build_T(spec: PdeSpec, parts: dict | None = None) -> N2d:
    parts = parts if parts is not None else {}
    H1, H2, K1, K2 = build_HK(spec.n1, spec.n2, spec.rect, spec.n0)
    E, F, G, Ehat = build_EFG(spec, H1, H2)
    T = N2d.from_op(K2 - compose(K1, G))
    if T != explicit_T(K1, K2, G):
        raise PIError("T: composition and explicit formulas disagree")
    parts.update(H1=H1, H2=H2, K1=K1, K2=K2, E=E, F=F, G=G, Ehat=Ehat)
    return T


def selector(spec: PdeSpec, k: int) -> PolyMatrix:
    """N_k: rows of the state that carry k derivatives."""
    n0, n1, n2 = spec.n0, spec.n1, spec.n2
    n = spec.n_state
    skip = (0, n0, n0 + n1)[k]
    m = np.empty((n - skip, n), dtype=object)
    m.fill(Q(0))
    for i in range(n - skip):
        m[i, skip + i] = Q(1)
    return PolyMatrix.const(m)


def build_A(spec: PdeSpec, T: N2d) -> N2d:
    rect = spec.rect
    n = spec.n_state
    A = N2d.make(None, n, n, rect)
    for (i, j), Aij in sorted(spec.A.items()):
        k = max(i, j)
        NT = compose(embed(selector(spec, k), "2d", rect=rect), T)
        try:
            D = diff_power(NT, i, j)
        except PIError as exc:
            raise PIError(f"A{i}{j}: {exc}") from None
        A = A + compose(embed(PolyMatrix.const(Aij), "2d", rect=rect), D)
    return N2d.from_op(A)


def convert(spec: PdeSpec) -> PiePair:
    parts: dict = {}
    try:
        T = build_T(spec, parts)
    except PIError as exc:
        raise ConversionError("T", exc) from exc
    try:
        A = build_A(spec, T)
    except PIError as exc:
        raise ConversionError("A", exc) from exc
    if spec.ode is not None:
        return _couple(spec, T, A, parts)
    return PiePair(T, A, spec, parts)


def boundary_map(parts: dict) -> N2dTo011:
    """Lambda_bf u = (H2 - H1 G) uh."""
    return N2dTo011.from_op(parts["H2"] - compose(parts["H1"], parts["G"]))


def _couple(spec: PdeSpec, T: N2d, A: N2d, parts: dict) -> PiePair:
    """ODE X' = A_ode X + C (corner values of u), written over R^nx x L2[x,y]."""
    ode = spec.ode
    rect = spec.rect
    nx, n = ode.n, spec.n_state
    readout = PolyMatrix.const(ode.C) @ boundary_map(parts).get("0", "xy", ("i", "i"))
    sizes = _sizes(r=nx, xy=n)
    Tf = PIOp(sizes, sizes, None, rect)
    Af = PIOp(sizes, sizes, None, rect)
    Tf._put("0", "0", ("-", "-"), PolyMatrix.eye(nx))
    Af._put("0", "0", ("-", "-"), PolyMatrix.const(ode.A))
    Af._put("0", "xy", ("i", "i"), readout)
    for oc, ic, key, mat in T.iter_terms():
        Tf._put(oc, ic, key, mat)
    for oc, ic, key, mat in A.iter_terms():
        Af._put(oc, ic, key, mat)
    parts.update(T_pde=T, A_pde=A, readout=readout)
    return PiePair(N0112.from_op(Tf), N0112.from_op(Af), spec, parts)


def convert_coupled(spec: PdeSpec) -> PiePair:
    if spec.ode is None:
        raise PIError("PDE has no ODE part")
    return convert(spec)


def derivative_of_T(spec: PdeSpec, T: N2d) -> N2d:
    """Kernels of D o T, with D u = (u0, d_x d_y u1, d_x^2 d_y^2 u2).

    Each state segment of T is differentiated by kernel rules alone; for a
    correct T the result is the identity.
    """
    rect = spec.rect
    n = spec.n_state
    out = N2d.make(None, n, n, rect)
    start = 0
    for k, size in enumerate((spec.n0, spec.n1, spec.n2)):
        if not size:
            continue
        rows = np.empty((size, n), dtype=object)
        rows.fill(Q(0))
        for i in range(size):
            rows[i, start + i] = Q(1)
        R = PolyMatrix.const(rows)
        seg = diff_power(compose(embed(R, "2d", rect=rect), T), k, k)
        out = out + compose(embed(R.T, "2d", rect=rect), seg)
        start += size
    return N2d.from_op(out)
