import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import gamma as gamma_fn

from roughtaylor.integrals import (MomentSpec, PolynomialPath, d_gamma, d_gamma_monte_carlo,
                                   nested_integral_check, pairings, shuffle_identity_check,
                                   signature_levels, simplex_sum, simplex_sums, step_integral,
                                   step_table)
from roughtaylor.multiindex import ExponentVector
from roughtaylor.signal import SignalSpec, build_signal


@pytest.fixture(scope="module")
def fbm3():
    return build_signal(SignalSpec.uniform(0.7, 3, n_fine=1024, seed=7))


def test_time_path_integrals_are_exact():
    sig = build_signal(SignalSpec(1, (1.0,), n_fine=64, component_1_is_time=True))
    for r in range(1, 5):
        # iterated integral of t over [0, 1/4]: (1/4)^r / r!
        assert step_integral(sig, (1,) * r, 0, 16, 4) == pytest.approx(0.25 ** r / math.factorial(r), rel=1e-13)


@given(st.integers(1, 5), st.integers(0, 3))
@settings(max_examples=20, deadline=None)
def test_scalar_path_power_rule(r, k):
    sig = build_signal(SignalSpec.uniform(0.7, 1, n_fine=256, seed=1))
    dx = sig.samples[0, (k + 1) * 64] - sig.samples[0, k * 64]
    assert step_integral(sig, (1,) * r, k, 64, 4) == pytest.approx(dx ** r / math.factorial(r), rel=1e-10, abs=1e-15)


def test_signature_of_two_segments_against_quadrature():
    # path (t, t^2) sampled at three points: piecewise-linear with two segments
    inc = np.array([[0.5, 0.25], [0.5, 0.75]])
    lv = signature_levels(inc, 2)

    # x^{(1,2)} = int x^1 dx^2 along the polyline
    def x1(u):
        return u

    def dx2(u):
        return 0.5 if u < 0.5 else 1.5
    val, _ = integrate.quad(lambda u: x1(u) * dx2(u), 0, 1, points=[0.5])
    assert lv[1][1] == pytest.approx(val)


def test_running_signature_endpoints():
    inc = np.random.default_rng(0).standard_normal((7, 2))
    full = signature_levels(inc, 3)
    run = signature_levels(inc, 3, running=True)
    for a, b in zip(full, run):
        assert np.allclose(b[-1], a)
        assert np.allclose(b[0], 0.0)


def test_step_table_shapes_and_csv(tmp_path, fbm3):
    table = step_table(fbm3.samples, 8, 16, 2)
    assert table.values((1, 2)).shape == (8,)
    assert table.value(3, (2,)) == pytest.approx(fbm3.samples[1, 512] - fbm3.samples[1, 384])
    table.to_csv(tmp_path / "t.csv", [(1,), (1, 2)])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,alpha,value" and len(lines) == 1 + 16
    with pytest.raises(ValueError):
        table.values((1, 2, 3))


def test_polynomial_path_integral_known_value():
    # x^1 = t, x^2 = t^2 over [0, 1]: x^{(1,2)} = int t * 2t dt = 2/3
    path = PolynomialPath.from_coefficients([[0, 1], [0, 0, 1]])
    assert path.integral((1, 2), 0.0, 1.0) == pytest.approx(2 / 3)
    assert path.integral((2, 1), 0.0, 1.0) == pytest.approx(1 / 3)


@pytest.mark.parametrize("seed", range(8))
def test_shuffle_and_nested_on_polynomial_paths(seed):
    rng = np.random.default_rng(seed)
    path = PolynomialPath.from_coefficients(rng.uniform(-1, 1, (3, 4)))
    g1 = tuple(int(a) for a in rng.integers(1, 4, 2))
    g2 = tuple(int(a) for a in rng.integers(1, 4, 3))
    assert shuffle_identity_check(path, g1, g2) < 1e-10
    assert nested_integral_check(path, [g1[:1], g1[1:], g2[:2]]) < 1e-10


@pytest.mark.parametrize("seed", range(8))
def test_shuffle_and_nested_on_fbm(seed, fbm3):
    rng = np.random.default_rng(seed)
    g1 = tuple(int(a) for a in rng.integers(1, 4, 2))
    g2 = tuple(int(a) for a in rng.integers(1, 4, 2))
    k = int(rng.integers(0, 4))
    assert shuffle_identity_check(fbm3, g1, g2, k, 256, 4) < 1e-10
    assert nested_integral_check(fbm3, [g1, g2[:1], g2[1:]], k, 256, 4) < 1e-10


# moments

def test_pairings():
    e = ExponentVector.uniform(0.7, 3, time=True)
    assert pairings((2, 2, 2, 2), e) == [[(1, 2), (3, 4)], [(1, 3), (2, 4)], [(1, 4), (2, 3)]]
    assert pairings((2, 1, 3, 2), e) == []
    assert pairings((2, 1, 2), e) == [[(1, 3)]]


@pytest.mark.parametrize("H", [0.6, 0.7, 0.85])
def test_pair_closed_form(H):
    e = ExponentVector((H,))
    assert d_gamma(MomentSpec((1, 1), e, "closed_form"), 0.3) == pytest.approx(0.5 * 0.3 ** (2 * H), rel=1e-14)
    assert d_gamma(MomentSpec((1, 1, 1, 1), e), 1.0) == pytest.approx(1 / 8, rel=1e-14)


def test_parity_zero():
    e = ExponentVector.uniform(0.7, 3, time=True)
    for w in [(2,), (2, 3), (2, 2, 2), (1, 3), (2, 1, 3, 2, 2)]:
        assert d_gamma(MomentSpec(w, e), 0.7) == 0.0


def test_time_only_moment():
    e = ExponentVector.uniform(0.7, 2, time=True)
    assert d_gamma(MomentSpec((1, 1, 1), e), 2.0) == pytest.approx(8 / 6)


def _pair_oracle(H, r, a, b):
    """E of a word with time letters everywhere except positions a < b.

    With v = u - s the pair kernel is alpha_H v^{2H-2}; the time letters fill
    the three gaps with simplex volumes.  The singular power of v goes into
    QUADPACK's algebraic weight.
    """
    alpha = H * (2 * H - 1)
    power = 2 * H - 2 + (b - a - 1)

    def inner(s):
        val, _ = integrate.quad(lambda v: (1 - s - v) ** (r - b), 0, 1 - s,
                                weight="alg", wvar=(power, 0), epsabs=1e-14, epsrel=1e-12)
        return val * s ** (a - 1)

    val, _ = integrate.quad(inner, 0, 1, epsabs=1e-14, epsrel=1e-12)
    return alpha * val / (math.factorial(a - 1) * math.factorial(b - a - 1) * math.factorial(r - b))


@pytest.mark.parametrize("word", [(2, 1, 2), (1, 2, 2), (2, 1, 1, 2), (1, 2, 1, 2)])
def test_one_pair_with_time_letters(word):
    H = 0.7
    e = ExponentVector((1.0, H))
    a, b = [i + 1 for i, c in enumerate(word) if c == 2]
    want = _pair_oracle(H, len(word), a, b)
    assert d_gamma(MomentSpec(word, e, "closed_form")) == pytest.approx(want, rel=1e-7)
    assert d_gamma(MomentSpec(word, e, "quadrature")) == pytest.approx(want, rel=1e-7)


def test_closed_form_pair_gamma_expression():
    # adjacent pair in a word of length 3: alpha_H Gamma(2H-1) / Gamma(2H+2)
    H = 0.65
    e = ExponentVector((1.0, H))
    want = H * (2 * H - 1) * gamma_fn(2 * H - 1) / gamma_fn(2 * H + 2)
    assert d_gamma(MomentSpec((2, 2, 1), e)) == pytest.approx(want)


def test_quadrature_four_fbm_letters():
    e = ExponentVector((0.7,))
    assert d_gamma(MomentSpec((1, 1, 1, 1), e, "quadrature")) == pytest.approx(1 / 8, rel=1e-10)


def test_quadrature_mixed_letters_against_monte_carlo():
    e = ExponentVector((0.7, 0.7))
    spec = MomentSpec((1, 2, 1, 2), e, "quadrature")
    q = d_gamma(spec)
    mean, se = d_gamma_monte_carlo(MomentSpec((1, 2, 1, 2), e, samples=20000, refine_factor=128))
    assert abs(q - mean) < 4 * se


def test_quadrature_order_limit():
    with pytest.raises(ValueError):
        d_gamma(MomentSpec((1,) * 8, ExponentVector((0.7,)), "quadrature"))


def test_moment_spec_validation():
    with pytest.raises(ValueError):
        MomentSpec((3,), ExponentVector((0.7,)))
    with pytest.raises(ValueError):
        MomentSpec((1,), ExponentVector((0.7,)), method="magic")


def test_simplex_sums(fbm3):
    # the single-letter sum telescopes
    assert simplex_sum(fbm3, (2,), 16, 64) == pytest.approx(fbm3.samples[1, -1])
    assert simplex_sum(fbm3, (2,), 16, 64, s=0.25, t=0.5) == pytest.approx(
        fbm3.samples[1, 512] - fbm3.samples[1, 256])
    batch = simplex_sums(fbm3.samples[None], (1, 1), 16, 64)
    assert batch[0] == pytest.approx(simplex_sum(fbm3, (1, 1), 16, 64))
    with pytest.raises(ValueError):
        simplex_sum(fbm3, (1,), 16, 64, s=0.1)
