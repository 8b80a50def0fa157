"""Iterated integrals over coarse steps, deterministic moments ``D_gamma``
and simplex sums.

Step integrals are the iterated integrals of the piecewise-linear
interpolation of the fine grid inside each coarse step.  They are assembled
segment by segment with Chen's relation, so the time path and any scalar
path are integrated exactly and products of integrals obey the shuffle
identity to round-off.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.special import gamma as gamma_fn

from .multiindex import ExponentVector, Word, dotted, parity_ok, shuffles, xi_set
from .signal import DrivingSignal, SignalSpec, _stride, sample_components

EPS = 1e-300


# ---------------------------------------------------------------------------
# signatures of piecewise-linear paths


def word_index(word: Sequence[int], m: int) -> int:
    """Position of ``word`` in a flattened level tensor (row-major)."""
    idx = 0
    for a in word:
        idx = idx * m + (a - 1)
    return idx


def _segment_levels(delta: np.ndarray, depth: int) -> list[np.ndarray]:
    """``delta^{(x) r} / r!`` flattened, for r = 1..depth."""
    out = [delta]
    for r in range(2, depth + 1):
        prev = out[-1]
        out.append((prev[..., :, None] * delta[..., None, :]).reshape(prev.shape[:-1] + (-1,)) / r)
    return out


def _chen(levels: list[np.ndarray], seg: list[np.ndarray]) -> list[np.ndarray]:
    """Concatenate a path with signature ``levels`` and a segment ``seg``."""
    depth = len(levels)
    new = []
    for r in range(1, depth + 1):
        acc = levels[r - 1] + seg[r - 1]
        for i in range(1, r):
            a, b = levels[i - 1], seg[r - i - 1]
            acc = acc + (a[..., :, None] * b[..., None, :]).reshape(a.shape[:-1] + (-1,))
        new.append(acc)
    return new


def signature_levels(increments: np.ndarray, depth: int, running: bool = False):
    """Truncated signature of a piecewise-linear path.

    ``increments`` has shape ``(..., R, m)``.  Returns a list of arrays, level
    ``r`` of shape ``(..., m**r)``.  With ``running`` each level has an extra
    axis ``R + 1`` holding the signature from the start to every vertex.
    """
    increments = np.asarray(increments, float)
    R, m = increments.shape[-2:]
    batch = increments.shape[:-2]
    levels = [np.zeros(batch + (m ** r,)) for r in range(1, depth + 1)]
    history = [[lv] for lv in levels] if running else None
    for q in range(R):
        levels = _chen(levels, _segment_levels(increments[..., q, :], depth))
        if running:
            for h, lv in zip(history, levels):
                h.append(lv)
    if running:
        return [np.stack(h, axis=-2) for h in history]
    return levels


def step_increments(samples: np.ndarray, coarse_n: int, refine_factor: int) -> np.ndarray:
    """Fine increments grouped by coarse step.

    ``samples`` has shape ``(..., m, n_fine + 1)``; the result has shape
    ``(..., coarse_n, refine_factor, m)``.
    """
    n_fine = samples.shape[-1] - 1
    stride = _stride(n_fine, coarse_n * refine_factor)
    sub = samples[..., ::stride]
    inc = np.diff(sub, axis=-1)
    inc = inc.reshape(inc.shape[:-1] + (coarse_n, refine_factor))
    return np.moveaxis(inc, -3, -1)


@dataclass(frozen=True)
class StepIntegralTable:
    """Iterated integrals of every word up to ``depth`` over each coarse step."""

    levels: tuple[np.ndarray, ...]
    m: int
    coarse_n: int
    refine_factor: int
    depth: int

    def values(self, alpha: Sequence[int]) -> np.ndarray:
        """``x^alpha`` over every coarse step (trailing axis is the step)."""
        if not alpha:
            raise ValueError("empty word")
        if len(alpha) > self.depth:
            raise ValueError(f"word {tuple(alpha)} longer than table depth {self.depth}")
        return self.levels[len(alpha) - 1][..., word_index(alpha, self.m), :]

    def value(self, k: int, alpha: Sequence[int]) -> float:
        return float(self.values(alpha)[..., k])

    def to_csv(self, path: str | Path, words: Iterable[Sequence[int]] | None = None) -> None:
        if words is None:
            words = [w for r in range(1, self.depth + 1)
                     for w in itertools.product(range(1, self.m + 1), repeat=r)]
        words = list(words)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["k", "alpha", "value"])
            for k in range(self.coarse_n):
                for w in words:
                    out.writerow([k, dotted(w), repr(self.value(k, w))])


def step_table(samples: np.ndarray, coarse_n: int, refine_factor: int, depth: int) -> StepIntegralTable:
    """Step integrals for raw samples of shape ``(..., m, n_fine + 1)``."""
    inc = step_increments(np.asarray(samples, float), coarse_n, refine_factor)
    levels = signature_levels(inc, depth)
    m = samples.shape[-2]
    # move the step axis last for each level: (..., coarse_n, m**r) -> (..., m**r, coarse_n)
    levels = tuple(np.moveaxis(lv, -2, -1) for lv in levels)
    return StepIntegralTable(levels, m, coarse_n, refine_factor, depth)


def build_step_table(signal: DrivingSignal, coarse_n: int, refine_factor: int, depth: int) -> StepIntegralTable:
    return step_table(signal.samples, coarse_n, refine_factor, depth)


def _step_samples(signal: DrivingSignal, k: int, coarse_n: int) -> np.ndarray:
    stride = _stride(signal.spec.n_fine, coarse_n)
    if not 0 <= k < coarse_n:
        raise IndexError(f"step {k} outside 0..{coarse_n - 1}")
    return signal.samples[:, k * stride:(k + 1) * stride + 1]


def step_integral(signal: DrivingSignal, alpha: Sequence[int], k: int,
                  refine_factor: int, coarse_n: int) -> float:
    """``x^alpha`` over coarse step ``k`` using ``refine_factor`` fine segments."""
    if not alpha:
        raise ValueError("empty word")
    table = step_table(_step_samples(signal, k, coarse_n), 1, refine_factor, len(alpha))
    return table.value(0, alpha)


# ---------------------------------------------------------------------------
# polynomial paths (exact integrals)


@dataclass(frozen=True)
class PolynomialPath:
    """A path whose components are polynomials in time."""

    components: tuple[Polynomial, ...]

    @classmethod
    def from_coefficients(cls, coeffs: Sequence[Sequence[float]]) -> "PolynomialPath":
        return cls(tuple(Polynomial(c) for c in coeffs))

    @property
    def m(self) -> int:
        return len(self.components)

    def running(self, word: Sequence[int], s: float) -> Polynomial:
        """``u -> x^word_{s,u}`` as a polynomial."""
        g = Polynomial([1.0])
        for a in word:
            integrand = g * self.components[a - 1].deriv()
            prim = integrand.integ()
            g = prim - prim(s)
        return g

    def integral(self, word: Sequence[int], s: float, t: float) -> float:
        return float(self.running(word, s)(t))

    def sample(self, n: int, T: float = 1.0) -> np.ndarray:
        t = np.linspace(0.0, T, n + 1)
        return np.stack([c(t) - c(0.0) for c in self.components])


# ---------------------------------------------------------------------------
# identity checks


def _rel(lhs: float, rhs: float) -> float:
    return abs(lhs - rhs) / (abs(lhs) + EPS)


def _shuffle_rhs(integral, gamma1: Sequence[int], gamma2: Sequence[int]) -> float:
    word = tuple(gamma1) + tuple(gamma2)
    return math.fsum(integral(rho.inverse().act(word)) for rho in shuffles(gamma1, gamma2))


def shuffle_identity_check(signal: DrivingSignal | PolynomialPath, gamma1: Sequence[int],
                           gamma2: Sequence[int], k: int = 0, refine_factor: int = 256,
                           coarse_n: int = 1, interval: tuple[float, float] = (0.0, 1.0)) -> float:
    """Relative gap in ``x^g1 x^g2 = sum over shuffles``."""
    integral = _integrator(signal, len(gamma1) + len(gamma2), k, refine_factor, coarse_n, interval)
    lhs = integral(tuple(gamma1)) * integral(tuple(gamma2))
    return _rel(lhs, _shuffle_rhs(integral, gamma1, gamma2))


def _integrator(signal, depth, k, refine_factor, coarse_n, interval):
    if isinstance(signal, PolynomialPath):
        s, t = interval
        return lambda w: signal.integral(w, s, t)
    table = step_table(_step_samples(signal, k, coarse_n), 1, refine_factor, depth)
    return lambda w: table.value(0, w)


def nested_integral_check(signal: DrivingSignal | PolynomialPath, gammas: Sequence[Sequence[int]],
                          k: int = 0, refine_factor: int = 256, coarse_n: int = 1,
                          interval: tuple[float, float] = (0.0, 1.0)) -> float:
    """Relative gap between the integral of running integrals and its
    expansion over the Xi family.

    The left side integrates ``d g^{gamma^1} ... d g^{gamma^p}`` where each
    ``g^{gamma^i}`` is the running iterated integral from the step start.
    """
    gammas = [tuple(g) for g in gammas]
    p = len(gammas)
    word = tuple(itertools.chain.from_iterable(gammas))
    taus = tuple(itertools.accumulate(len(g) for g in gammas))
    if isinstance(signal, PolynomialPath):
        s, t = interval
        inner = PolynomialPath(tuple(signal.running(g, s) for g in gammas))
        lhs = inner.integral(tuple(range(1, p + 1)), s, t)
    else:
        seg = _step_samples(signal, k, coarse_n)
        inc = step_increments(seg, 1, refine_factor)[0]
        lhs = _nested_piecewise_linear(inc, gammas, signal.spec.m)
    integral = _integrator(signal, len(word), k, refine_factor, coarse_n, interval)
    rhs = math.fsum(integral(rho.inverse().act(word)) for rho in xi_set(taus))
    return _rel(lhs, rhs)


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product of coefficient arrays (lowest degree first)."""
    out = np.zeros(a.shape[:-1] + (a.shape[-1] + b.shape[-1] - 1,))
    for i in range(a.shape[-1]):
        out[..., i:i + b.shape[-1]] += a[..., i:i + 1] * b
    return out


def _poly_integ(c: np.ndarray) -> np.ndarray:
    out = np.zeros(c.shape[:-1] + (c.shape[-1] + 1,))
    out[..., 1:] = c / np.arange(1, c.shape[-1] + 1)
    return out


def _nested_piecewise_linear(inc: np.ndarray, gammas: list[Word], m: int) -> float:
    """Exact ``int dZ_1 ... dZ_p`` for ``Z_i`` the running integrals of a
    piecewise-linear path with increments ``inc`` of shape ``(R, m)``.

    On each segment every ``Z_i`` is a polynomial in the local parameter, so
    the contiguous sub-integrals are exact; they are chained across segments.
    """
    p = len(gammas)
    R = inc.shape[0]
    run = signature_levels(inc, max(len(g) for g in gammas), running=True)
    dz = []
    for g in gammas:
        L = len(g)
        coef = np.zeros((R, L + 1))
        for j in range(L + 1):
            prefix = np.ones(R) if j == 0 else run[j - 1][:-1, word_index(g[:j], m)]
            tail = np.prod(inc[:, [a - 1 for a in g[j:]]], axis=1) if j < L else np.ones(R)
            coef[:, L - j] += prefix * tail / math.factorial(L - j)
        dz.append(coef[:, 1:] * np.arange(1, L + 1))
    # seg[a][i]: integral over one segment of dZ_a ... dZ_i (1-based, a <= i)
    seg = {}
    for a in range(1, p + 1):
        g = np.ones((R, 1))
        for i in range(a, p + 1):
            g = _poly_integ(_poly_mul(g, dz[i - 1]))
            seg[a, i] = g.sum(axis=1)
    acc = [1.0] + [0.0] * p
    for q in range(R):
        new = list(acc)
        for a in range(1, p + 1):
            if acc[a - 1] != 0.0:
                for i in range(a, p + 1):
                    new[i] += acc[a - 1] * seg[a, i][q]
        acc = new
    return acc[p]


# ---------------------------------------------------------------------------
# D_gamma(t) = E[B^gamma_{0,t}]

Method = Literal["auto", "closed_form", "quadrature", "monte_carlo"]
QUADRATURE_MAX_ORDER = 6


@dataclass(frozen=True)
class MomentSpec:
    gamma: Word
    hurst: ExponentVector
    method: Method = "auto"
    nodes: int | None = None
    samples: int = 20_000
    refine_factor: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", tuple(int(a) for a in self.gamma))
        if self.method not in ("auto", "closed_form", "quadrature", "monte_carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if any(not 1 <= a <= self.hurst.m for a in self.gamma):
            raise ValueError("word letters exceed the exponent vector")


def pairings(gamma: Sequence[int], exps: ExponentVector) -> list[list[tuple[int, int]]]:
    """Perfect matchings of the non-time positions (1-based) pairing equal letters."""
    positions = [i for i, a in enumerate(gamma, start=1) if not exps.is_time(a)]

    def rec(rest: list[int]) -> list[list[tuple[int, int]]]:
        if not rest:
            return [[]]
        first, others = rest[0], rest[1:]
        out = []
        for q, other in enumerate(others):
            if gamma[other - 1] == gamma[first - 1]:
                for tail in rec(others[:q] + others[q + 1:]):
                    out.append([(first, other)] + tail)
        return out

    return rec(positions)


def hurst_weight(gamma: Sequence[int], exps: ExponentVector) -> float:
    """Self-similarity exponent ``H_gamma`` (time letters count 1)."""
    return exps.weight(gamma)


def _alpha_h(H: float) -> float:
    return H * (2 * H - 1)


def _closed_form_unit(gamma: Word, exps: ExponentVector) -> float:
    r = len(gamma)
    fbm = [a for a in gamma if not exps.is_time(a)]
    if not fbm:
        return 1.0 / math.factorial(r)
    if len(fbm) == r and len(set(fbm)) == 1:
        return _double_factorial(r - 1) / math.factorial(r)
    if len(fbm) == 2:
        a, b = [i for i, c in enumerate(gamma, start=1) if not exps.is_time(c)]
        H = exps[gamma[a - 1]]
        span = b - a
        return _alpha_h(H) * gamma_fn(2 * H + span - 2) / (math.factorial(span - 1) * gamma_fn(2 * H + r - 1))
    raise ValueError(f"no closed form for D_{gamma}")


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@lru_cache(maxsize=None)
def _graded_rule(n: int, q: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on (0, 1) pulled through a sigmoidal map that clusters
    nodes at both ends (absorbs algebraic endpoint behaviour)."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = (x + 1) / 2, w / 2
    den = x ** q + (1 - x) ** q
    s = x ** q / den
    ds = q * x ** (q - 1) * (1 - x) ** (q - 1) / den ** 2
    return s, w * ds


def _pairing_integral(gamma: Word, exps: ExponentVector, pairing: list[tuple[int, int]], n: int) -> float:
    """Simplex integral of the pair kernels with ``t_r = 1`` fixed, times 1/H_gamma."""
    r = len(gamma)
    partner = {a: b for a, b in pairing}
    s, ws = _graded_rule(n)
    pts = np.ones((1, r + 1))          # columns 1..r hold t_1..t_r
    wts = np.ones(1)
    for a in range(r - 1, 0, -1):
        upper = pts[:, a + 1]
        if a in partner:
            b = partner[a]
            H = exps[gamma[a - 1]]
            c = 2 * H - 1
            tb = pts[:, b]
            w_lo = np.maximum(tb - upper, 0.0) ** c / c
            w_hi = tb ** c / c
            wv = w_lo[:, None] + (w_hi - w_lo)[:, None] * s[None, :]
            ta = np.clip(tb[:, None] - (c * wv) ** (1 / c), 0.0, upper[:, None])
            factor = _alpha_h(H) * (w_hi - w_lo)[:, None] * ws[None, :]
        else:
            ta = upper[:, None] * s[None, :]
            factor = upper[:, None] * ws[None, :]
        pts = np.repeat(pts, n, axis=0)
        pts[:, a] = ta.reshape(-1)
        wts = (wts[:, None] * factor).reshape(-1)
    return math.fsum(wts) / hurst_weight(gamma, exps)


def _quadrature_unit(gamma: Word, exps: ExponentVector, nodes: int | None) -> float:
    r = len(gamma)
    if r > QUADRATURE_MAX_ORDER:
        raise ValueError("order beyond quadrature support")
    if r == 1:
        return 1.0 if exps.is_time(gamma[0]) else 0.0
    n = nodes or max(8, min(64, int(1e6 ** (1.0 / (r - 1)))))
    return math.fsum(_pairing_integral(gamma, exps, pr, n) for pr in pairings(gamma, exps))


def d_gamma_monte_carlo(spec: MomentSpec, t: float = 1.0) -> tuple[float, float]:
    """Mean and standard error of ``B^gamma_{0,t}`` over sampled paths."""
    exps = spec.hurst
    time = exps.is_time(1)
    sig = SignalSpec(exps.m, exps.values, T=t, n_fine=spec.refine_factor, seed=spec.seed,
                     component_1_is_time=time)
    vals = []
    for start in range(0, spec.samples, 5000):
        batch = sample_components(sig, range(start, min(spec.samples, start + 5000)))
        vals.append(step_table(batch, 1, spec.refine_factor, len(spec.gamma)).values(spec.gamma)[:, 0])
    v = np.concatenate(vals)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def d_gamma(spec: MomentSpec, t: float = 1.0) -> float:
    """``D_gamma(t) = E[B^gamma_{0,t}]``.

    Zero (exactly) when a non-time letter occurs an odd number of times.
    """
    gamma, exps = spec.gamma, spec.hurst
    if not gamma:
        raise ValueError("empty word")
    if spec.method == "monte_carlo":
        return d_gamma_monte_carlo(spec, t)[0]
    if not parity_ok(gamma, exps):
        return 0.0
    if spec.method == "closed_form":
        unit = _closed_form_unit(gamma, exps)
    elif spec.method == "auto" and _has_closed_form(gamma, exps):
        unit = _closed_form_unit(gamma, exps)
    else:
        unit = _quadrature_unit(gamma, exps, spec.nodes)
    return unit * t ** hurst_weight(gamma, exps)


def _has_closed_form(gamma: Word, exps: ExponentVector) -> bool:
    try:
        _closed_form_unit(gamma, exps)
    except ValueError:
        return False
    return True


# ---------------------------------------------------------------------------
# simplex sums


def simplex_sum(signal: DrivingSignal, alpha: Sequence[int], coarse_n: int, refine_factor: int,
                s: float = 0.0, t: float | None = None) -> float:
    """Sum of ``x^alpha`` over the coarse steps between ``s`` and ``t``."""
    T = signal.spec.T
    t = T if t is None else t
    h = T / coarse_n
    k0, k1 = int(round(s / h)), int(round(t / h))
    if abs(k0 * h - s) > 1e-9 * T or abs(k1 * h - t) > 1e-9 * T or not 0 <= k0 <= k1 <= coarse_n:
        raise ValueError("s and t must be coarse grid points")
    vals = step_table(signal.samples, coarse_n, refine_factor, len(alpha)).values(alpha)
    return math.fsum(vals[k0:k1])


def simplex_sums(samples: np.ndarray, alpha: Sequence[int], coarse_n: int, refine_factor: int) -> np.ndarray:
    """Full-horizon simplex sums for a batch of samples ``(P, m, n_fine + 1)``."""
    return step_table(samples, coarse_n, refine_factor, len(alpha)).values(alpha).sum(axis=-1)
