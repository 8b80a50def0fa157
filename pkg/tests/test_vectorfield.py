import numpy as np
import pytest
import sympy as sp

from roughtaylor.jets import sin
from roughtaylor.vectorfield import (DerivativeOrderUnavailable, FiniteDifferenceField,
                                     FormulaField, PolynomialField, h_function, iterated_field,
                                     iterated_fields, lemma_expansion_check, leibniz_check,
                                     linear_scalar, load_field, named_model,
                                     random_test_functions, sde_2d_quadratic, sine_field)


def square_field():
    return PolynomialField(1, 1, [(1, 1, (2,), 1.0)])


def sympy_iterated(fields, word, syms):
    """V_word I by symbolic differentiation; ``fields[j]`` is a list over i."""
    g = list(syms)
    for j in reversed(word):
        g = [sum(fields[j - 1][i] * sp.diff(gk, syms[i]) for i in range(len(syms))) for gk in g]
    return g


@pytest.mark.parametrize("word, expected", [((1,), 1), ((1, 1), 2), ((1, 1, 1), 6)])
def test_square_field_iterates(word, expected):
    # V = y^2: V_{(1)^r} I = r! y^{r+1}
    y = np.array([0.7])
    got = iterated_field(square_field(), word, y)
    assert got[0] == pytest.approx(expected * 0.7 ** (len(word) + 1))


def test_iterated_fields_match_sympy_two_dimensional():
    f = sde_2d_quadratic()
    y1, y2 = sp.symbols("y1 y2")
    sym_fields = [[0] * 2 for _ in range(3)]
    for j, i, mono, c in f.terms:
        sym_fields[j - 1][i - 1] += c * y1 ** mono[0] * y2 ** mono[1]
    point = np.array([0.4, -0.9])
    words = [(1,), (2, 3), (3, 1, 2), (2, 2, 2, 1)]
    got = iterated_fields(f, words, point)
    for w in words:
        want = sympy_iterated(sym_fields, w, (y1, y2))
        vals = [float(e.subs({y1: point[0], y2: point[1]})) for e in want]
        assert np.allclose(got[w], vals, rtol=1e-12, atol=1e-12), w


def test_iterated_fields_batched():
    f = sine_field()
    ys = np.linspace(-1, 1, 5)[:, None]
    batch = iterated_field(f, (1, 1), ys)
    single = np.array([iterated_field(f, (1, 1), y) for y in ys])
    assert np.allclose(batch, single)
    assert np.allclose(batch[:, 0], np.sin(ys[:, 0]) * np.cos(ys[:, 0]))


def test_h_function_example():
    # alpha=(1,1), zeta=(1,), taus=(2,): H = d(V^2)/dy * V = 2y * y^2
    y = np.array([0.5])
    assert h_function(square_field(), (1, 1), (1,), (2,), y) == pytest.approx(2 * 0.5 ** 3)


def test_finite_difference_field_matches_polynomial():
    poly = sde_2d_quadratic(c=0.3)
    fd = FiniteDifferenceField(2, 3, lambda y: poly(y), max_order=2)
    y = np.array([0.2, 0.5])
    for word in [(1, 2), (3, 3)]:
        assert np.allclose(iterated_field(fd, word, y), iterated_field(poly, word, y), atol=1e-6)


def test_derivative_order_unavailable():
    fd = FiniteDifferenceField(1, 1, lambda y: np.sin(y)[..., None, :], max_order=1)
    with pytest.raises(DerivativeOrderUnavailable):
        iterated_field(fd, (1, 1, 1), np.array([0.1]))


def test_formula_field_evaluate():
    f = FormulaField(2, 1, lambda ys: [[sin(ys[0] * ys[1]), ys[0] ** 3]])
    y = np.array([0.3, 0.8])
    assert f.evaluate(1, 1, (2, 1), y) == pytest.approx(np.cos(0.24) - 0.24 * np.sin(0.24))
    assert f.evaluate(1, 2, (1, 1), y) == pytest.approx(6 * 0.3)
    assert f(y).shape == (1, 2)


def test_polynomial_field_json_roundtrip():
    f = PolynomialField.random(np.random.default_rng(3), 2, 2, degree=2)
    g = PolynomialField.from_json(f.to_json())
    y = np.array([0.1, -0.4])
    assert np.array_equal(f.jets(y, 2), g.jets(y, 2))
    assert np.array_equal(load_field(f.to_json()).jets(y, 1), f.jets(y, 1))


def test_named_models():
    assert named_model("linear_scalar", a=2.0)(np.array([3.0]))[0, 0] == 6.0
    assert load_field({"name": "sine_field"})(np.array([0.5]))[0, 0] == pytest.approx(np.sin(0.5))
    with pytest.raises(ValueError):
        named_model("nope")
    assert linear_scalar(1.0, m=2).m == 2


@pytest.mark.parametrize("seed", range(10))
def test_leibniz_random(seed):
    rng = np.random.default_rng(seed)
    d, m = 2, 2
    f = PolynomialField.random(rng, d, m, degree=2, scale=0.5)
    alpha = tuple(int(a) for a in rng.integers(1, m + 1, 4))
    for ls in [(4,), (2, 4), (1, 3, 4), (1, 2, 3, 4)]:
        tf = random_test_functions(rng, len(ls), m, d)
        assert leibniz_check(f, alpha, ls, tf, rng.uniform(-1, 1, d)) < 1e-10


def test_leibniz_single_block_is_plain_application():
    # p = 1: both sides are V_{alpha without last} (f^1_{alpha_r}); trivially equal
    f = square_field()
    tf = random_test_functions(np.random.default_rng(0), 1, 1, 1)
    assert leibniz_check(f, (1, 1, 1), (3,), tf, np.array([0.4])) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_expansion_random(seed):
    rng = np.random.default_rng(100 + seed)
    d, m = 2, 2
    f = PolynomialField.random(rng, d, m, degree=2, scale=0.5)
    alpha = tuple(int(a) for a in rng.integers(1, m + 1, 4))
    g = random_test_functions(rng, 1, 1, d, degree=3)
    assert lemma_expansion_check(f, alpha, lambda ys: g(1, 1, ys), rng.uniform(-1, 1, d)) < 1e-10
