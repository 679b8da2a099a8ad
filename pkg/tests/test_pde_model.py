"""PDE description: file format, boundary orderings, well-posedness."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pie2d import examples
from pie2d.pde_model import (
    BoundaryOrdering, PdeFormatError, PdeSpec, apply_lambda_bc, apply_lambda_bf, apply_D,
    check_wellposed, parse_pde, serialize, specs_equal, template_names,
)
from pie2d.pi_algebra import PIError
from pie2d.poly_core import Poly, PolyMatrix, Q, Rect

x, y = Poly.var("x"), Poly.var("y")


def test_ordering_sizes():
    o = BoundaryOrdering(1, 1)
    assert o.bf_sizes == (20, 6) and o.bc_sizes == (5, 3)
    assert len(o.bf_labels()) == 32 and len(o.bc_labels()) == 11
    # quantity-major over corners
    assert o.bf_labels()[:4] == [("u1", (0, 0), c, 0) for c in
                                 (("a", "c"), ("b", "c"), ("a", "d"), ("b", "d"))]


def test_lambda_values_of_known_function():
    spec = examples.load("heat")
    u = PolyMatrix.from_polys([[x * x * y + 3 * y]])
    bf = apply_lambda_bf(spec, u)
    labels = spec.ordering.bf_labels()
    corner = {lab: bf["0"].entry(i, 0) for i, lab in enumerate(labels[:16])}
    assert corner[("u2", (0, 0), ("b", "d"), 0)] == Poly.const(4)
    assert corner[("u2", (1, 0), ("b", "d"), 0)] == Poly.const(2)
    assert corner[("u2", (0, 1), ("a", "c"), 0)] == Poly.const(3)
    assert corner[("u2", (1, 1), ("b", "c"), 0)] == Poly.const(2)
    # x-edge: u_xx at y=c, y=d, then u_xxy
    assert [bf["x"].entry(i, 0) for i in range(4)] == [Poly.const(0), Poly.const(2),
                                                      Poly.const(2), Poly.const(2)]
    # y-edge: u_yy = 0, u_xyy = 0
    assert bf["y"].is_zero()
    bc = apply_lambda_bc(spec, u)
    assert bc["0"].entry(1, 0) == Poly.const(0)      # u_x(a, c)
    assert bc["0"].entry(2, 0) == Poly.const(3)      # u_y(a, c)
    assert bc["x"].entry(0, 0) == Poly.const(0)      # u_xx(x, c)
    assert apply_D(spec, u).is_zero()


def test_parse_heat_example():
    spec = examples.load("heat")
    assert (spec.n0, spec.n1, spec.n2) == (0, 0, 1)
    assert spec.B.shape == (8, 24)
    assert set(spec.A) == {(0, 2), (2, 0)}
    assert spec.rect == Rect.unit()


def test_template_parameters():
    text = examples.text("heat_reaction")
    assert template_names(text) == ["R"]
    spec = parse_pde(text, {"R": "37/2"})
    assert spec.A[(0, 0)][0, 0] == Q(37, 2)
    with pytest.raises(PdeFormatError, match="no value"):
        parse_pde(text)


@pytest.mark.parametrize("name", ["heat", "wave", "wave_dirichlet", "heat_r15"])
def test_serialize_roundtrip_examples(name):
    spec = examples.load(name)
    assert specs_equal(parse_pde(serialize(spec)), spec)


def test_serialize_roundtrip_with_ode():
    spec = examples.load("ode_coupled", K="-3/2")
    back = parse_pde(serialize(spec))
    assert specs_equal(back, spec) and back.ode.A[0, 0] == Q(-1, 2)


@settings(max_examples=25, deadline=None)
@given(n0=st.integers(0, 1), n1=st.integers(0, 1), n2=st.integers(0, 1),
       seed=st.integers(0, 2**31), lo=st.fractions(-3, 3))
def test_serialize_roundtrip_random(n0, n1, n2, seed, lo):
    if n0 + n1 + n2 == 0:
        n2 = 1
    rng = np.random.default_rng(seed)
    o = BoundaryOrdering(n1, n2)
    rows = o.bc_sizes[0] + 2 * o.bc_sizes[1]
    cols = o.bf_sizes[0] + 2 * o.bf_sizes[1]
    n = n0 + n1 + n2
    rnd = lambda r, c: np.array([[Q(int(rng.integers(-5, 6)), int(rng.integers(1, 4)))
                                  for _ in range(c)] for _ in range(r)], dtype=object)
    A = {(i, j): rnd(n, (n, n1 + n2, n2)[max(i, j)]) for i in range(3) for j in range(3)
         if (n, n1 + n2, n2)[max(i, j)]}
    lo = Q(lo.numerator, lo.denominator)
    spec = PdeSpec(Rect(lo, lo + 1, lo - 2, lo + Q(1, 3)), n0, n1, n2, A, rnd(rows, cols))
    assert specs_equal(parse_pde(serialize(spec)), spec)


@pytest.mark.parametrize("text,match", [
    ("[domain]\nx = 0 1\n", "missing section"),
    ("x = 1\n", "line 1"),
    ("[domain]\nx = 0 1\ny = 0 1\n[states]\nn2 = 1\n[bc]\nrow = 1 2\n", "line 7"),
    ("[domain]\nx = 0 1\ny = 1 0\n[states]\nn2 = 1\n[bc]\n", "domain"),
    ("[foo]\n", "unknown section"),
    ("[domain]\nx = 0 1\ny = 0 1\n[states]\nn2 = 1\n[dynamics]\nA33 = 1\n[bc]\n", "line 7"),
    ("[domain]\nx = 0 1\ny = 0 1\n[states]\nn2 = 1\n[dynamics]\nA02 = q\n[bc]\n", "bad number"),
])
def test_format_errors(text, match):
    with pytest.raises(PdeFormatError, match=match):
        parse_pde(text)


def test_expression_numbers():
    text = examples.text("heat").replace("A02 = 1", "A02 = 2*3/4")
    assert parse_pde(text).A[(0, 2)][0, 0] == Q(3, 2)


def test_spec_validation():
    with pytest.raises(PIError):
        PdeSpec(Rect.unit(), 0, 0, 0)
    with pytest.raises(PIError, match="shape"):
        PdeSpec(Rect.unit(), 0, 0, 1, {(0, 2): np.ones((2, 2))})


@pytest.mark.parametrize("name", ["heat", "wave", "wave_dirichlet", "heat_r15"])
def test_examples_wellposed(name):
    assert check_wellposed(examples.load(name)).wellposed


def test_zero_B_not_wellposed():
    spec = examples.load("heat")
    bad = spec.with_params(B=np.zeros_like(spec.B))
    rep = check_wellposed(bad)
    assert not rep.wellposed and rep.factor


def test_duplicated_row_not_wellposed():
    spec = examples.load("heat")
    B = spec.B.copy()
    B[1] = B[0]
    rep = check_wellposed(spec.with_params(B=B))
    assert not rep.wellposed and "singular" in rep.message
