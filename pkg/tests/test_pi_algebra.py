"""Composition, adjoint and embedding of PI operators.

Two independent routes: Gauss quadrature on sampled functions (verify.py)
and exact polynomial action (apply_exact).
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pie2d.pi_algebra import (
    N011, N0112, N2d, N011To2d, PIError, adjoint, compose, compose_011,
    compose_2d, compose_2d_with_011to2d, differentiate, embed, identity, apply_exact,
)
from pie2d.poly_core import PolyMatrix, Q, Rect
from pie2d.verify import (
    COMPOSITION_MAPS, QuadratureGrid, adjoint_trial, composition_trial, random_op,
    random_state,
)

GRID = QuadratureGrid(Rect.unit(), 12)
ODD = QuadratureGrid(Rect(Q(-1), Q(2), Q(1, 2), Q(3)), 12)


@pytest.mark.parametrize("name", sorted(COMPOSITION_MAPS))
def test_composition_matches_nested_quadrature(name, rng):
    errs = [composition_trial(name, rng, GRID) for _ in range(4)]
    assert max(errs) <= 1e-8


@pytest.mark.parametrize("name", ["L_011", "L_0112", "L_2D->2D"])
def test_composition_on_shifted_rectangle(name, rng):
    assert composition_trial(name, rng, ODD) <= 1e-8


@pytest.mark.parametrize("out,inn", [
    ((0, 0, 0, 2), (0, 0, 0, 1)),
    ((1, 1, 1, 1), (1, 1, 1, 1)),
    ((2, 1, 1, 0), (0, 0, 0, 2)),
])
def test_adjoint_inner_product(out, inn, rng):
    for grid in (GRID, ODD):
        assert adjoint_trial(out, inn, rng, grid) <= 1e-8


def _exact_state(sizes, rng):
    _, polys = random_state(sizes, 2, rng)
    return polys


def _same(f, g):
    keys = set(f) | set(g)
    return all((f.get(k, PolyMatrix.zeros(1, 1)) - g.get(k, PolyMatrix.zeros(1, 1))).is_zero()
               if k in f and k in g else (f.get(k) or g.get(k)).is_zero() for k in keys)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), name=st.sampled_from(sorted(COMPOSITION_MAPS)))
def test_composition_exact_action(seed, name):
    rng = np.random.default_rng(seed)
    out, mid, inn = COMPOSITION_MAPS[name]
    N = random_op(out, mid, 1, rng)
    M = random_op(mid, inn, 1, rng)
    f = _exact_state(inn, rng)
    assert _same(apply_exact(compose(N, M), f), apply_exact(N, apply_exact(M, f)))


def test_adjoint_is_involution(rng):
    N = random_op((1, 1, 1, 1), (2, 1, 1, 1), 2, rng)
    assert adjoint(adjoint(N)) == N


def test_composition_associative_and_bilinear(rng):
    s = (1, 1, 1, 0)
    A, B, C = (random_op(s, s, 1, rng) for _ in range(3))
    assert compose(compose(A, B), C) == compose(A, compose(B, C))
    assert compose(A, B + C) == compose(A, B) + compose(A, C)
    assert compose(A.scale(Q(3, 2)), B) == compose(A, B).scale(Q(3, 2))


def test_adjoint_reverses_composition(rng):
    s = (0, 0, 0, 1)
    A, B = random_op(s, s, 1, rng), random_op(s, s, 1, rng)
    assert adjoint(compose(A, B)) == compose(adjoint(B), adjoint(A))


def test_identity_is_neutral(rng):
    s = (1, 2, 2, 1)
    N = random_op(s, s, 2, rng)
    I = identity(s)
    assert compose(I, N) == N and compose(N, I) == N


def test_typed_wrappers_check_shapes(rng):
    N = N2d.from_op(random_op((0, 0, 0, 1), (0, 0, 0, 1), 1, rng))
    E = N011To2d.from_op(random_op((0, 0, 0, 1), (1, 1, 1, 0), 1, rng))
    assert isinstance(compose_2d(N, N), N2d)
    assert isinstance(compose_2d_with_011to2d(N, E), N011To2d)
    with pytest.raises(PIError):
        compose_011(N, N)


def test_size_mismatch_rejected(rng):
    A = random_op((0, 0, 0, 1), (0, 0, 0, 2), 1, rng)
    with pytest.raises(PIError):
        compose(A, A)


@pytest.mark.parametrize("k", [0, 1])
def test_differentiate_exact(k, rng):
    # kernels integrate in the k-th direction only (no multiplier there)
    N = random_op((0, 0, 0, 1), (0, 0, 0, 1), 2, rng)
    for oc, ic, key, _ in list(N.iter_terms()):
        if key[k] == 0:
            N.blocks[(oc, ic)].pop(key)
    f = _exact_state((0, 0, 0, 1), rng)
    lhs = apply_exact(differentiate(N, k), f)["xy"]
    rhs = apply_exact(N, f)["xy"].diff("xy"[k])
    assert (lhs - rhs).is_zero()


def test_differentiate_rejects_multiplier(rng):
    with pytest.raises(PIError):
        differentiate(identity((0, 0, 0, 1)), 0)


def test_embed_2d_and_011():
    M = np.array([[Q(1), Q(2)], [Q(3), Q(4)]], dtype=object)
    op = embed(M, "2d")
    assert isinstance(op, N2d) and op.k(0, 0) == PolyMatrix.const(M)
    big = np.zeros((5, 5), dtype=object)
    big[:] = Q(0)
    big[0, 0], big[1, 0], big[1, 1], big[3, 3] = Q(1), Q(2), Q(5), Q(7)
    e = embed(big, "011", split=(1, 2), col_split=(1, 2))
    assert isinstance(e, N011)
    f = {"0": PolyMatrix.const([[Q(1)]]), "x": PolyMatrix.const([[Q(0)], [Q(0)]]),
         "y": PolyMatrix.const([[Q(1)], [Q(0)]])}
    out = apply_exact(e, f)
    assert out["x"] == PolyMatrix.const([[Q(2)], [Q(0)]])
    assert out["y"] == PolyMatrix.const([[Q(7)], [Q(0)]])


def test_embed_rejects_pointless_block():
    big = np.zeros((3, 3), dtype=object)
    big[:] = Q(0)
    big[0, 1] = Q(1)
    with pytest.raises(PIError):
        embed(big, "011", split=(1, 1), col_split=(1, 1))


def test_0112_parts_roundtrip(rng):
    op = N0112.from_op(random_op((1, 1, 1, 1), (1, 1, 1, 1), 1, rng))
    back = N0112.from_blocks(op.part("11"), op.part("12"), op.part("21"), op.part("22"),
                             op.out_sizes, op.in_sizes, op.rect)
    assert back == op


def test_apply_exact_agrees_with_quadrature(rng):
    N = random_op((1, 1, 1, 1), (1, 1, 1, 1), 2, rng)
    f, polys = random_state((1, 1, 1, 1), 2, rng)
    from pie2d.verify import SampledFn, apply_numeric, grid_values
    ex = SampledFn.from_polys(N.out_sizes, apply_exact(N, polys))
    num = apply_numeric(N, f, GRID)
    assert np.max(np.abs(grid_values(ex, GRID) - grid_values(num, GRID))) < 1e-10
