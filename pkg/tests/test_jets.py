import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from roughtaylor.jets import Jet, cos, exp, jet_space, sin


def _jet_vars(space, y):
    return [Jet(space, c) for c in space.variables(np.asarray(y, float))]


def _sympy_coeffs(expr, syms, point, K):
    """Taylor coefficients d^e f / e! at ``point`` for every |e| <= K."""
    out = {}
    subs = dict(zip(syms, point))
    for e in itertools.product(range(K + 1), repeat=len(syms)):
        if sum(e) > K:
            continue
        d = expr
        for s, k in zip(syms, e):
            if k:
                d = sp.diff(d, s, k)
        out[e] = float(d.subs(subs)) / math.prod(math.factorial(k) for k in e)
    return out


CASES = [
    (lambda a, b: a * b + 3 * a, lambda x, y: x * y + 3 * x),
    (lambda a, b: sin(a) * cos(b), lambda x, y: sp.sin(x) * sp.cos(y)),
    (lambda a, b: exp(a - 2 * b) / (2 + a * a), lambda x, y: sp.exp(x - 2 * y) / (2 + x * x)),
    (lambda a, b: (a + b) ** 4, lambda x, y: (x + y) ** 4),
]


@pytest.mark.parametrize("case", range(len(CASES)))
def test_jets_match_sympy(case):
    f_jet, f_sym = CASES[case]
    K = 4
    space = jet_space(2, K)
    point = (0.3, -0.7)
    got = f_jet(*_jet_vars(space, point)).coeffs
    x, y = sp.symbols("x y")
    want = _sympy_coeffs(f_sym(x, y), (x, y), point, K)
    for e, k in space.index.items():
        assert got[k] == pytest.approx(want[e], rel=1e-11, abs=1e-12), e


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6),
       st.lists(st.floats(-2, 2), min_size=6, max_size=6))
@settings(max_examples=40)
def test_product_is_commutative_and_reciprocal_inverts(a, b):
    space = jet_space(2, 2)
    ja, jb = Jet(space, np.array(a)), Jet(space, np.array(b))
    assert np.allclose((ja * jb).coeffs, (jb * ja).coeffs)
    shifted = ja + (3.0 - ja.value + (1.0 if ja.value >= 0 else -1.0))
    one = shifted * shifted.reciprocal()
    assert np.allclose(one.coeffs, space.constant(1.0), atol=1e-10)


def test_derivative_extraction():
    space = jet_space(2, 3)
    a, b = _jet_vars(space, (1.0, 2.0))
    f = a ** 2 * b
    assert space.derivative(f.coeffs, (1, 1, 2)) == pytest.approx(2.0)
    assert space.derivative(f.coeffs, (1,)) == pytest.approx(4.0)


def test_batched_coefficients():
    space = jet_space(1, 3)
    y = np.array([[0.1], [0.2], [0.3]])
    (v,) = [Jet(space, c) for c in np.moveaxis(space.variables(y), -2, 0)]
    s = sin(v)
    assert s.coeffs.shape == (3, 4)
    assert np.allclose(s.coeffs[:, 1], np.cos(y[:, 0]))
    assert np.allclose(s.coeffs[:, 3], -np.cos(y[:, 0]) / 6)


def test_order_zero_space():
    space = jet_space(2, 0)
    assert space.M == 1
    assert np.allclose(space.variables(np.array([1.0, 2.0])), [[1.0], [2.0]])


def test_negative_power_rejected():
    space = jet_space(1, 2)
    with pytest.raises(ValueError):
        Jet(space, space.constant(2.0)) ** -1
