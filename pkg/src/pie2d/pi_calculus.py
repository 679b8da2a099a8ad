"""Differentiation of 2D PI operators and the closed-form separable 011 inverse."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pi_algebra import N011, N2d, PIError, PIOp, compose, differentiate, identity
from .poly_core import NV, Q, X, Y, THETA, NU, PolyMatrix, mono_integrate


class NotInvertibleError(PIError):
    """A matrix factor required by the inverse formula is singular."""

    def __init__(self, factor: str):
        super().__init__(f"not well-posed / not invertible: {factor} is singular")
        self.factor = factor


# --------------------------------------------------------------------------
# exact dense linear algebra on object arrays of mpq


def _zeros(r: int, c: int) -> np.ndarray:
    z = np.empty((r, c), dtype=object)
    z.fill(Q(0))
    return z


def _eye(n: int) -> np.ndarray:
    z = _zeros(n, n)
    for i in range(n):
        z[i, i] = Q(1)
    return z


def exact_inv(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Gauss-Jordan inverse in exact arithmetic; raises NotInvertibleError."""
    n = M.shape[0]
    if M.shape != (n, n):
        raise PIError(f"{name} is not square: {M.shape}")
    A = np.concatenate([M.astype(object), _eye(n)], axis=1)
    for col in range(n):
        piv = next((r for r in range(col, n) if A[r, col] != 0), None)
        if piv is None:
            raise NotInvertibleError(name)
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
        A[col] = A[col] / A[col, col]
        for r in range(n):
            if r != col and A[r, col] != 0:
                A[r] = A[r] - A[r, col] * A[col]
    return A[:, n:]


def exact_rank(M: np.ndarray) -> int:
    A = M.astype(object).copy()
    r, c = A.shape
    rank = 0
    for col in range(c):
        piv = next((i for i in range(rank, r) if A[i, col] != 0), None)
        if piv is None:
            continue
        A[[rank, piv]] = A[[piv, rank]]
        for i in range(rank + 1, r):
            if A[i, col] != 0:
                A[i] = A[i] - (A[i, col] / A[rank, col]) * A[rank]
        rank += 1
    return rank


# --------------------------------------------------------------------------
# derivatives


def diff_x(N: PIOp) -> PIOp:
    """Kernels M with d/dx (P[N]u) = P[M]u (Leibniz rule on each term)."""
    return _keep_type(N, differentiate(N, 0))


def diff_y(N: PIOp) -> PIOp:
    return _keep_type(N, differentiate(N, 1))


def _keep_type(like: PIOp, op: PIOp) -> PIOp:
    return type(like).from_op(op) if type(like) is not PIOp else op


def diff_power(N: PIOp, i: int, j: int) -> PIOp:
    """d^i/dx^i d^j/dy^j applied after P[N]; x first, then y."""
    if not (0 <= i <= 2 and 0 <= j <= 2):
        raise PIError("derivative orders must lie in 0..2")
    M = N
    stage = 0
    for k, count in ((0, i), (1, j)):
        for _ in range(count):
            stage += 1
            try:
                M = differentiate(M, k)
            except PIError as exc:
                raise PIError(f"diff_power stage {stage} (d/d{'xy'[k]}): {exc}") from None
    return _keep_type(N, M)


# --------------------------------------------------------------------------
# separable 011 operators


@dataclass
class SeparableN011:
    """An N011 written as Z^T(s) [H / Gamma] Z(t) with Z(s) = [I; sI; ...; s^p I].

    Q00, Qxx0, Qyy0 are the constant multiplier blocks; the coefficient
    matrices follow the row/column convention Q0x(t) = H0x Z(t),
    Qx0(s) = Z^T(s) Hx0 and so on.
    """

    source: N011
    p: int
    n0: int
    n1: int
    Q00: np.ndarray
    Qxx0: np.ndarray
    Qyy0: np.ndarray
    H0x: np.ndarray
    H0y: np.ndarray
    Hx0: np.ndarray
    Hy0: np.ndarray
    Gxx: np.ndarray
    Gxy: np.ndarray
    Gyx: np.ndarray
    Gyy: np.ndarray

    @property
    def q(self) -> int:
        return (self.p + 1) * self.n1

    def reassemble(self) -> N011:
        return _assemble(self.source.rect, self.n0, self.n1, self.p, self.Q00, self.Qxx0, self.Qyy0,
                         self.Qxx0, self.Qxx0, self.Qyy0, self.Qyy0,
                         self.H0x, self.H0y, self.Hx0, self.Hy0, self.Gxx, self.Gxy, self.Gyx, self.Gyy,
                         identity_scaling=True)


def _zmat(p: int, n1: int, var: int) -> PolyMatrix:
    """Z(s) = vstack(s^k I_n1), shape ((p+1) n1, n1)."""
    terms = {}
    for k in range(p + 1):
        e = [0] * NV
        e[var] = k
        arr = _zeros((p + 1) * n1, n1)
        for r in range(n1):
            arr[k * n1 + r, r] = Q(1)
        terms[tuple(e)] = arr
    return PolyMatrix((p + 1) * n1, n1, terms)


def _const(a: np.ndarray) -> PolyMatrix:
    return PolyMatrix(a.shape[0], a.shape[1], {(0,) * NV: a} if a.size else {})


def _assemble(rect, n0, n1, p, Q00, Lx, Ly, Rx, Ry, Lx2, Ly2, H0x, H0y, Hx0, Hy0, Gxx, Gxy, Gyx, Gyy,
              identity_scaling=False) -> N011:
    """Build an N011 from separable data.

    Lx/Ly are the diagonal multipliers; Rx, Ry right factors (Zhat_0 = Z R),
    Lx2, Ly2 left factors (Zhat_0^T = L Z^T).  For reassembly all factors are
    the identity and the multiplier is Q0.
    """
    if identity_scaling:
        Rx = Ry = Lx2 = Ly2 = _eye(n1)
    Zx, Zt = _zmat(p, n1, X), _zmat(p, n1, THETA)
    Zy, Zn = _zmat(p, n1, Y), _zmat(p, n1, NU)
    Rxm, Rym, Lxm, Lym = _const(Rx), _const(Ry), _const(Lx2), _const(Ly2)
    slots = {
        (0, 0): _const(Q00),
        (0, 1): _const(H0x) @ Zt @ Rxm,
        (0, 2): _const(H0y) @ Zn @ Rym,
        (1, 0): Lxm @ Zx.T @ _const(Hx0),
        (2, 0): Lym @ Zy.T @ _const(Hy0),
        (1, 1, 0): _const(Lx),
        (2, 2, 0): _const(Ly),
        (1, 2): Lxm @ Zx.T @ _const(Gxy) @ Zn @ Rym,
        (2, 1): Lym @ Zy.T @ _const(Gyx) @ Zt @ Rxm,
    }
    kxx = Lxm @ Zx.T @ _const(Gxx) @ Zt @ Rxm
    kyy = Lym @ Zy.T @ _const(Gyy) @ Zn @ Rym
    slots[(1, 1, 1)] = kxx
    slots[(1, 1, 2)] = kxx
    slots[(2, 2, 1)] = kyy
    slots[(2, 2, 2)] = kyy
    return N011.make(n0, n1, n0, n1, slots, rect)


def _coeff_table(mat: PolyMatrix, vars_: tuple[int, ...], p: int, what: str) -> dict:
    """Split a kernel into {exponents in vars_: coefficient matrix}."""
    out = {}
    for e, a in mat.terms.items():
        if any(e[v] for v in range(NV) if v not in vars_):
            raise PIError(f"{what} depends on unexpected variables")
        key = tuple(e[v] for v in vars_)
        if max(key, default=0) > p:
            raise PIError(f"{what} exceeds degree {p}")
        out[key] = a
    return out


def _row_stack(mat: PolyMatrix, var: int, p: int, n1: int, what: str) -> np.ndarray:
    """Coefficients of Z^T(s) H: vertical stack of s^k blocks -> (q, cols)."""
    tab = _coeff_table(mat, (var,), p, what)
    out = _zeros((p + 1) * n1, mat.cols)
    for (k,), a in tab.items():
        out[k * n1:(k + 1) * n1, :] = a
    return out


def _col_stack(mat: PolyMatrix, var: int, p: int, n1: int, what: str) -> np.ndarray:
    """Coefficients of H Z(t) -> (rows, q)."""
    tab = _coeff_table(mat, (var,), p, what)
    out = _zeros(mat.rows, (p + 1) * n1)
    for (k,), a in tab.items():
        out[:, k * n1:(k + 1) * n1] = a
    return out


def _gram_coeffs(mat: PolyMatrix, v1: int, v2: int, p: int, n1: int, what: str) -> np.ndarray:
    tab = _coeff_table(mat, (v1, v2), p, what)
    out = _zeros((p + 1) * n1, (p + 1) * n1)
    for (i, j), a in tab.items():
        out[i * n1:(i + 1) * n1, j * n1:(j + 1) * n1] = a
    return out


def _single_var_degree(mat: PolyMatrix) -> int:
    return max((max(e) for e in mat.terms), default=0)


def decompose_separable(Qop: N011) -> SeparableN011:
    """Write Q in Z/H/Gamma form with Z the monomial basis of minimal degree."""
    n0, n1, m0, m1 = Qop.dims
    if (n0, n1) != (m0, m1):
        raise PIError(f"separable decomposition needs a square 011 operator, got {(n0, n1)}x{(m0, m1)}")
    sl = Qop.slot
    for r in (1, 2):
        if sl(r, r, 1) != sl(r, r, 2):
            raise PIError(f"1D block ({r},{r}) is not separable: lower and upper kernels differ")
    Q00 = sl(0, 0)
    Qxx0, Qyy0 = sl(1, 1, 0), sl(2, 2, 0)
    for name, m in (("Q_xx^0", Qxx0), ("Q_yy^0", Qyy0)):
        if m.degree > 0:
            raise PIError(f"unsupported: non-constant diagonal multiplier {name}")
    kern = [sl(0, 1), sl(0, 2), sl(1, 0), sl(2, 0), sl(1, 1, 1), sl(2, 2, 1), sl(1, 2), sl(2, 1)]
    p = max((_single_var_degree(m) for m in kern), default=0)
    c0 = lambda m: m.coeff((0,) * NV) if m.rows and m.cols else _zeros(m.rows, m.cols)
    return SeparableN011(
        source=Qop, p=p, n0=n0, n1=n1,
        Q00=c0(Q00), Qxx0=c0(Qxx0), Qyy0=c0(Qyy0),
        H0x=_col_stack(sl(0, 1), THETA, p, n1, "Q_0x"),
        H0y=_col_stack(sl(0, 2), NU, p, n1, "Q_0y"),
        Hx0=_row_stack(sl(1, 0), X, p, n1, "Q_x0"),
        Hy0=_row_stack(sl(2, 0), Y, p, n1, "Q_y0"),
        Gxx=_gram_coeffs(sl(1, 1, 1), X, THETA, p, n1, "Q_xx^1"),
        Gxy=_gram_coeffs(sl(1, 2), X, NU, p, n1, "Q_xy"),
        Gyx=_gram_coeffs(sl(2, 1), Y, THETA, p, n1, "Q_yx"),
        Gyy=_gram_coeffs(sl(2, 2, 1), Y, NU, p, n1, "Q_yy^1"),
    )


def _moment_matrix(p: int, n1: int, lo, hi, Qhat0: np.ndarray) -> np.ndarray:
    """int_lo^hi Z(s) Qhat0 Z^T(s) ds for constant Qhat0."""
    out = _zeros((p + 1) * n1, (p + 1) * n1)
    for i in range(p + 1):
        for j in range(p + 1):
            k = i + j + 1
            mom = (Q(hi) ** k - Q(lo) ** k) / k
            out[i * n1:(i + 1) * n1, j * n1:(j + 1) * n1] = Qhat0 * mom
    return out


def invert_011(Qs: SeparableN011 | N011) -> N011:
    """Parameters of P[Q]^{-1} by the closed-form separable formula.

    Every matrix inverse is exact; a singular factor raises
    NotInvertibleError naming it.
    """
    if not isinstance(Qs, SeparableN011):
        Qs = decompose_separable(Qs)
    rect = Qs.source.rect
    n0, n1, p = Qs.n0, Qs.n1, Qs.p
    q = Qs.q
    mm = lambda *ms: _chain(ms)
    Q00i = exact_inv(Qs.Q00, "Q_00") if n0 else _zeros(0, 0)
    Qxi = exact_inv(Qs.Qxx0, "Q_xx^0") if n1 else _zeros(0, 0)
    Qyi = exact_inv(Qs.Qyy0, "Q_yy^0") if n1 else _zeros(0, 0)
    Kxx = _moment_matrix(p, n1, rect.a, rect.b, Qxi)
    Kyy = _moment_matrix(p, n1, rect.c, rect.d, Qyi)
    H0x, H0y, Hx0, Hy0 = Qs.H0x, Qs.H0y, Qs.Hx0, Qs.Hy0
    Pxx = Qs.Gxx - mm(Hx0, Q00i, H0x)
    Pxy = Qs.Gxy - mm(Hx0, Q00i, H0y)
    Pyx = Qs.Gyx - mm(Hy0, Q00i, H0x)
    Pyy = Qs.Gyy - mm(Hy0, Q00i, H0y)
    Iq = _eye(q)
    Sx = Iq + mm(Kxx, Pxx)
    Sy = Iq + mm(Kyy, Pyy)
    Sxi = exact_inv(Sx, "Sigma_x") if q else _zeros(0, 0)
    Syi = exact_inv(Sy, "Sigma_y") if q else _zeros(0, 0)
    Exy = mm(Sxi, Kxx, Pxy)
    Eyx = mm(Syi, Kyy, Pyx)
    Fx = exact_inv(Sx - mm(Kxx, Pxy, Eyx), "Sigma_x - K_xx Pi_xy E_yx") if q else _zeros(0, 0)
    Fy = exact_inv(Sy - mm(Kyy, Pyx, Exy), "Sigma_y - K_yy Pi_yx E_xy") if q else _zeros(0, 0)
    Gyx_h = -mm(Pyx - mm(Pyy, Eyx), Fx)
    Gxy_h = -mm(Pxy - mm(Pxx, Exy), Fy)
    Gyy_h = -mm(Pyy + mm(Gyx_h, Kxx, Pxy), Syi)
    Gxx_h = -mm(Pxx + mm(Gxy_h, Kyy, Pyx), Sxi)
    Hy0_h = -mm(Hy0 + mm(Gyy_h, Kyy, Hy0) + mm(Gyx_h, Kxx, Hx0), Q00i)
    Hx0_h = -mm(Hx0 + mm(Gxx_h, Kxx, Hx0) + mm(Gxy_h, Kyy, Hy0), Q00i)
    H0y_h = -mm(mm(Q00i, H0y) - mm(Q00i, H0x, Exy), Fy)
    H0x_h = -mm(mm(Q00i, H0x) + mm(H0y_h, Kyy, Pyx), Sxi)
    Q00_h = mm(_eye(n0) - mm(H0x_h, Kxx, Hx0) - mm(H0y_h, Kyy, Hy0), Q00i)
    # Zhat_0x = Z Qhat_xx^0 (right factor), Zhat_x0^T = Qhat_xx^0 Z^T (left factor)
    return _assemble(rect, n0, n1, p, Q00_h, Qxi, Qyi, Qxi, Qyi, Qxi, Qyi,
                     H0x_h, H0y_h, Hx0_h, Hy0_h, Gxx_h, Gxy_h, Gyx_h, Gyy_h)


def _chain(ms) -> np.ndarray:
    out = ms[0]
    for m in ms[1:]:
        if out.shape[1] == 0 or m.shape[0] == 0:
            out = _zeros(out.shape[0], m.shape[1])
        else:
            out = out.dot(m)
    return out


def is_identity(op: PIOp) -> bool:
    if op.out_sizes != op.in_sizes:
        return False
    return (op - identity(op.out_sizes, op.rect)).is_zero()


def check_inverse(Qop: N011, Qhat: N011) -> bool:
    """Both composition orders give the identity bundle exactly."""
    return is_identity(compose(Qhat, Qop)) and is_identity(compose(Qop, Qhat))
