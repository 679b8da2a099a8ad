from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pie2d.poly_core import (
    Poly, PolyError, PolyMatrix, Q, Rect, add, diff, evaluate, integrate, monomial_basis, mul,
    substitute,
)

x, y, th, nu = (Poly.var(v) for v in ("x", "y", "theta", "nu"))
R = Rect.unit()


def test_add_cancels():
    assert (x + th) + (-th) == x
    assert add(PolyMatrix.zeros(1, 1), PolyMatrix.scalar(x)) == PolyMatrix.scalar(x)
    assert 2 * x**2 * y + 3 * x**2 * y == 5 * x**2 * y


def test_mul():
    assert mul(PolyMatrix.scalar(x), PolyMatrix.scalar(y)) == PolyMatrix.scalar(x * y)
    M = PolyMatrix.from_polys([[x, 1], [y, th]])
    assert PolyMatrix.eye(2) @ M == M
    assert PolyMatrix.from_polys([[1, x]]) @ PolyMatrix.from_polys([[y], [1]]) == PolyMatrix.scalar(y + x)


def test_dimension_mismatch():
    with pytest.raises(PolyError):
        add(PolyMatrix.zeros(1, 2), PolyMatrix.zeros(2, 1))
    with pytest.raises(PolyError):
        mul(PolyMatrix.zeros(1, 2), PolyMatrix.zeros(1, 2))


def test_integrate():
    assert integrate(4 * (x - th), "theta", 0, "x") == 2 * x**2
    assert integrate(Poly(), "theta", "a", "b", R) == Poly()
    p = integrate(integrate(4 * (x - th) * (y - nu), "nu", 0, "y"), "theta", 0, "x")
    assert p == x**2 * y**2
    # derived: d_x^2 d_y^2 of the result recovers the integrand constant
    assert diff(diff(diff(diff(p, "x"), "x"), "y"), "y") == Poly.const(4)


def test_integrate_bound_equal_to_variable():
    with pytest.raises(PolyError):
        integrate(x, "x", 0, "x")


def test_substitute():
    assert substitute(x - th, "theta", "x") == Poly()
    assert substitute(y - nu, "nu", "c", R) == y
    r = Rect(-1, 2, 0, 3)
    assert substitute(x * th, "theta", "b", r) == 2 * x


def test_diff_and_eval():
    assert diff(x**2 * y, "x") == 2 * x * y
    assert diff(Poly.const(7), "x") == Poly()
    assert diff(diff((x - th) * (y - nu), "x"), "y") == Poly.const(1)
    assert evaluate(x + y, {"x": Fraction(1, 2), "y": Fraction(1, 3)}) == Q(5, 6)
    assert evaluate(Poly(), {"x": 3}) == 0
    assert evaluate(x**2 * y**2, {"x": 1, "y": 1}) == 1


def test_eval_missing_variable():
    with pytest.raises(PolyError):
        evaluate(x * y, {"x": 1})


def test_monomial_basis():
    assert monomial_basis(1, ["x", "y"]) == [Poly.const(1), x, y]
    assert monomial_basis(0, ["x"]) == [Poly.const(1)]
    assert monomial_basis(2, ["x"]) == [Poly.const(1), x, x**2]
    for d in range(4):
        for k, vs in enumerate((["x"], ["x", "y"], ["x", "y", "theta"], ["x", "y", "theta", "nu"]), 1):
            assert len(monomial_basis(d, vs)) == comb(d + k, k)


def test_rect_validation():
    with pytest.raises(PolyError):
        Rect(1, 1, 0, 1)
    with pytest.raises(PolyError):
        Rect(0, 1, 2, 1)
    assert Rect(0, 2, 0, 3).area == 6


# ---- properties on random polynomials --------------------------------------

coef = st.fractions(min_value=-3, max_value=3, max_denominator=4)
exps = st.tuples(*[st.integers(0, 2)] * 4)
polys = st.dictionaries(exps, coef, max_size=5).map(
    lambda d: Poly({e + (0, 0): c for e, c in d.items()}))
points = st.tuples(*[st.fractions(min_value=-2, max_value=2, max_denominator=7)] * 4)


@settings(max_examples=60, deadline=None)
@given(polys, polys)
def test_integrate_linear(p, q):
    for var, lo, hi in (("theta", "a", "x"), ("nu", "y", "d"), ("x", 0, 1)):
        assert integrate(p + q, var, lo, hi, R) == integrate(p, var, lo, hi, R) + integrate(q, var, lo, hi, R)


@settings(max_examples=60, deadline=None)
@given(polys)
def test_leibniz(p):
    lhs = diff(integrate(p, "theta", "a", "x", R), "x")
    rhs = substitute(p, "theta", "x") + integrate(diff(p, "x"), "theta", "a", "x", R)
    assert lhs == rhs


@settings(max_examples=200, deadline=None)
@given(polys, points, st.fractions(min_value=-2, max_value=2, max_denominator=5))
def test_eval_after_substitute(p, pt, val):
    point = dict(zip(("x", "y", "theta", "nu"), pt))
    lhs = evaluate(substitute(p, "theta", val), point)
    point2 = dict(point, theta=val)
    assert lhs == evaluate(p, point2)


def test_float_conversion_is_separate():
    m = PolyMatrix.from_polys([[x * Q(1, 3) + 1]])
    assert m.exact
    f = m.to_float()
    assert not f.exact
    assert np.isclose(float(f.eval({"x": 3})[0, 0]), 2.0)
