"""Gram-form positive operators: counting, exact small cases, self-adjointness,
affine maps against direct composition, and quadrature positivity."""
import numpy as np
import pytest

from pie2d.pi_algebra import PIOp, adjoint
from pie2d.poly_core import Poly, PolyMatrix, Q, Rect
from pie2d.positivity import (
    BLOCK_TAGS, PositivityBasis, PsdVarHandle, bump, gram_value, lpi_param_map, omega_d,
    selfadjoint_check,
)
from pie2d.verify import QuadratureGrid, apply_numeric, inner_product, random_op, random_state

RECT = Rect(Q(0), Q(1), Q(-1, 2), Q(1))


def rational_psd(n, rng, rank=None):
    G = rng.integers(-3, 4, size=(n, rank or n))
    M = G @ G.T
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            out[i, j] = Q(int(M[i, j]), 5)
    return out


def float_psd(n, rng):
    G = rng.normal(size=(n, n))
    return G @ G.T / n


def test_block_sizes_degree_one():
    b = PositivityBasis(1, 1)
    assert b.scalar_sizes == (3, 4, 4, 4, 4, 5, 5, 5, 5)
    assert b.Q == 3 + 2 * 4 + 2 * 4 + 4 * 5 == 39


def test_block_sizes_scale_with_width():
    b = PositivityBasis(2, 1)
    assert b.sizes == tuple(2 * q for q in PositivityBasis(1, 1).scalar_sizes)
    assert [blk.key for blk in b.blocks] == list(BLOCK_TAGS)


def test_coupled_basis_adds_constant_block():
    b = PositivityBasis(1, 1, n0=2)
    assert b.blocks[0].comp == "0" and b.blocks[0].key == ("o", "o")
    assert b.sizes[0] == 2 * 3 and b.Q == 39 + 6
    assert b.in_sizes == (2, 0, 0, 1)


def test_zero_P_gives_zero():
    b = PositivityBasis(1, 1, RECT)
    N = lpi_param_map(b, np.zeros((b.Q, b.Q), dtype=object))
    assert N.is_zero()


def test_first_entry_is_identity_multiplier():
    b = PositivityBasis(1, 0)
    P = np.zeros((b.Q, b.Q), dtype=object)
    P[0, 0] = Q(1)
    N = lpi_param_map(b, P)
    ident = PIOp((0, 0, 0, 1), (0, 0, 0, 1), None, b.rect)
    ident._put("xy", "xy", (0, 0), PolyMatrix.eye(1))
    assert N == ident


def test_multiplier_part_of_omega0():
    # with only the (x, y) block entries nonzero, Omega_0 is the multiplier P1 + g P2
    om = omega_d(1, 0, RECT)
    P1 = np.zeros((9, 9), dtype=object)
    P2 = np.zeros((9, 9), dtype=object)
    P1[:] = Q(0)
    P2[:] = Q(0)
    P1[0, 0], P2[0, 0] = Q(3), Q(2)
    N = om.concrete(P1, P2)
    assert list(N.iter_terms())[0][:3] == ("xy", "xy", (0, 0))
    assert len(list(N.iter_terms())) == 1
    want = PolyMatrix.from_polys([[Poly.const(3) + bump(RECT) * 2]])
    assert N.get("xy", "xy", (0, 0)) == want


def test_omega0_full_has_kernels():
    # the other degree-0 blocks contribute constant integral kernels
    om = omega_d(1, 0, RECT)
    P = np.zeros((9, 9), dtype=object)
    P[:] = Q(0)
    P[5, 5] = Q(1)                                   # block (1, 1)
    N = om.concrete(P, P * 0)
    keys = {key for _, _, key, _ in N.iter_terms()}
    assert keys and (0, 0) not in keys


@pytest.mark.parametrize("d,n,n0", [(0, 1, 0), (1, 1, 0), (1, 2, 0), (1, 1, 1), (0, 2, 2)])
def test_gram_is_selfadjoint(d, n, n0, rng):
    b = PositivityBasis(n, d, RECT, bump(RECT), n0)
    N = lpi_param_map(b, rational_psd(b.Q, rng))
    assert selfadjoint_check(N)
    assert N.in_sizes == N.out_sizes == (n0, 0, 0, n)


def test_asymmetric_operator_is_not_selfadjoint(rng):
    N = random_op((0, 0, 0, 1), (0, 0, 0, 1), 1, rng)
    assert not selfadjoint_check(N)


def test_omega_sample_selfadjoint(rng):
    om = omega_d(1, 1, RECT)
    assert selfadjoint_check(om.concrete(rational_psd(39, rng), rational_psd(39, rng)))


def test_size_mismatch_rejected():
    b = PositivityBasis(1, 0)
    with pytest.raises(ValueError):
        lpi_param_map(b, np.zeros((3, 3)))


@pytest.mark.parametrize("trial", range(20))
def test_affine_map_matches_direct_composition(trial):
    # one route builds coefficients per entry of P, the other composes with the full P
    rng = np.random.default_rng(1000 + trial)
    n0 = trial % 3 == 0
    d = 1 if trial % 2 else 0
    om = omega_d(1, d, RECT, n0=int(n0))
    aff = om.affine()
    P1 = rational_psd(om.plain.Q, rng, rank=3)
    P2 = rational_psd(om.weighted.Q, rng, rank=3)
    assert aff.evaluate(P1, P2) == om.concrete(P1, P2)


def test_affine_handle_route_single_basis(rng):
    b = PositivityBasis(1, 1, RECT, bump(RECT))
    aff = lpi_param_map(b, PsdVarHandle("P", b))
    P = rational_psd(b.Q, rng)
    assert aff.evaluate(P) == lpi_param_map(b, P)


def test_affine_float_route(rng):
    om = omega_d(1, 1, RECT)
    aff = om.affine(exact=False)
    P1 = float_psd(39, rng)
    P2 = float_psd(39, rng)
    got = aff.values(P1, P2)
    ex = om.affine()
    want = ex.values(P1, P2)
    lab = {l: i for i, l in enumerate(ex.labels)}
    for l, v in zip(aff.labels, got):
        assert abs(v - want[lab[l]]) <= 1e-12 * (1 + abs(v))


# --------------------------------------------------------------------------
# quadrature: <u, N u> = <Z u, g P Z u> >= 0


def _form(N, u, grid):
    Nu = apply_numeric(N, u, grid)
    total = 0.0
    for comp, n in zip(("0", "x", "y", "xy"), N.in_sizes):
        if n:
            total += inner_product(u, Nu, grid, comp)
    return total


def _positivity_trial(d, rng, grid, weighted, n0=0):
    b = PositivityBasis(1, d, RECT, bump(RECT) if weighted else Poly.const(1), n0)
    P = float_psd(b.Q, rng)
    N = lpi_param_map(b, P)
    u, _ = random_state(b.in_sizes, 3, rng)
    lhs = _form(N, u, grid)
    rhs = gram_value(b, P, u, grid)
    return lhs, rhs


@pytest.mark.parametrize("d", [0, 1, 2])
def test_oracle_positivity(d, rng):
    grid = QuadratureGrid(RECT, 12)
    for trial in range(34 if d < 2 else 32):
        lhs, rhs = _positivity_trial(d, rng, grid, weighted=trial % 2 == 1)
        assert lhs >= -1e-10
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))


def test_oracle_positivity_coupled(rng):
    grid = QuadratureGrid(RECT, 12)
    for trial in range(6):
        lhs, rhs = _positivity_trial(1, rng, grid, weighted=trial % 2 == 1, n0=1)
        assert lhs >= -1e-10
        assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(rhs))


def test_adjoint_partners_in_omega(rng):
    # N20 from N10, N22 from N11 and N12 from N21 through the adjoint rule
    om = omega_d(1, 1, RECT)
    N = om.concrete(rational_psd(39, rng), rational_psd(39, rng))
    A = adjoint(N)
    for pair in (((1, 0), (2, 0)), ((1, 1), (2, 2)), ((2, 1), (1, 2))):
        k1, k2 = pair
        assert A.get("xy", "xy", k2) == N.get("xy", "xy", k2)
        assert N.get("xy", "xy", k1).is_zero() is False
