"""Vector fields, iterated fields and the expansion identities built on them.

A field ``V = (V_j^i)`` with ``j`` in ``1..m`` (driver letters) and ``i`` in
``1..d`` (state components) acts on functions by
``(V_j f)(y) = sum_i V_j^i(y) d_i f(y)``.  For a word ``gamma`` the iterated
field ``V_gamma I`` applies the letters right to left to the identity map.
"""

from __future__ import annotations

import itertools
import json
import math
from abc import ABC, abstractmethod
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .jets import Jet, JetSpace, jet_space, sin
from .multiindex import Word, enumerate_gamma, increasing_sequences, xi_set, xi_with_constraints

Formula = Callable[[list[Jet]], Sequence[Sequence["Jet | float"]]]
TestFunctions = Callable[[int, int, list[Jet]], "Jet | float"]


class DerivativeOrderUnavailable(ValueError):
    pass


class VectorField(ABC):
    """Evaluator of ``V`` and its partial derivatives (the jet oracle)."""

    d: int
    m: int
    max_order: int

    @abstractmethod
    def jets(self, y: np.ndarray, order: int) -> np.ndarray:
        """Taylor coefficients of every ``V_j^i`` around ``y``.

        ``y`` has shape ``(..., d)``; the result has shape ``(..., m, d, M)``.
        """

    def _check_order(self, order: int) -> None:
        if order > self.max_order:
            raise DerivativeOrderUnavailable(
                f"derivative order unavailable: need {order}, have {self.max_order}")

    def evaluate(self, j: int, i: int, zeta: Sequence[int], y: np.ndarray) -> np.ndarray:
        """``d_zeta V_j^i (y)``; ``zeta`` is a word over ``1..d`` (order irrelevant)."""
        zeta = tuple(sorted(zeta))
        self._check_order(len(zeta))
        space = jet_space(self.d, len(zeta))
        c = self.jets(np.asarray(y, float), len(zeta))
        return space.derivative(c[..., j - 1, i - 1, :], zeta)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Values ``V_j^i(y)`` with shape ``(..., m, d)``."""
        return self.jets(np.asarray(y, float), 0)[..., 0]


def _stack_formula(space: JetSpace, out, shape: tuple[int, ...], m: int, d: int) -> np.ndarray:
    res = np.zeros(shape + (m, d, space.M))
    for j in range(m):
        for i in range(d):
            v = out[j][i]
            res[..., j, i, :] = v.coeffs if isinstance(v, Jet) else space.constant(np.broadcast_to(v, shape))
    return res


def _variables(space: JetSpace, y: np.ndarray) -> list[Jet]:
    var = space.variables(y)
    return [Jet(space, var[..., i, :]) for i in range(space.d)]


class FormulaField(VectorField):
    """A field given as a formula in jet arithmetic (forward-mode derivatives).

    ``formula(ys)`` receives the ``d`` coordinates as jets and returns an
    ``m x d`` nested sequence of jets or constants.
    """

    def __init__(self, d: int, m: int, formula: Formula, max_order: int = 8, name: str = "formula"):
        self.d, self.m, self.max_order = d, m, max_order
        self.formula = formula
        self.name = name

    def jets(self, y: np.ndarray, order: int) -> np.ndarray:
        self._check_order(order)
        y = np.asarray(y, float)
        space = jet_space(self.d, order)
        return _stack_formula(space, self.formula(_variables(space, y)), y.shape[:-1], self.m, self.d)


class PolynomialField(VectorField):
    """Polynomial field ``V_j^i(y) = sum coeff * y^monomial`` with exact jets."""

    def __init__(self, d: int, m: int, terms: Iterable[tuple[int, int, Sequence[int], float]]):
        self.d, self.m = d, m
        self.terms = [(int(j), int(i), tuple(int(e) for e in mono), float(c)) for j, i, mono, c in terms]
        for j, i, mono, _ in self.terms:
            if not (1 <= j <= m and 1 <= i <= d and len(mono) == d):
                raise ValueError(f"bad polynomial term {(j, i, mono)}")
        self.degree = max((sum(mono) for _, _, mono, _ in self.terms), default=0)
        self.max_order = 10**6

    def jets(self, y: np.ndarray, order: int) -> np.ndarray:
        y = np.asarray(y, float)
        space = jet_space(self.d, order)
        ys = _variables(space, y)
        out = np.zeros(y.shape[:-1] + (self.m, self.d, space.M))
        for j, i, mono, c in self.terms:
            term = Jet(space, space.constant(np.full(y.shape[:-1], c)))
            for k, e in enumerate(mono):
                if e:
                    term = term * ys[k] ** e
            out[..., j - 1, i - 1, :] += term.coeffs
        return out

    def to_json(self) -> dict:
        return {"d": self.d, "m": self.m,
                "terms": [{"j": j, "i": i, "monomial": list(mono), "coeff": c}
                          for j, i, mono, c in self.terms]}

    @classmethod
    def from_json(cls, doc: Mapping | str) -> "PolynomialField":
        if isinstance(doc, str):
            doc = json.loads(doc)
        terms = [(t["j"], t["i"], t["monomial"], t["coeff"]) for t in doc["terms"]]
        return cls(int(doc["d"]), int(doc["m"]), terms)

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, m: int, degree: int, scale: float = 1.0) -> "PolynomialField":
        monos = [e for e in itertools.product(range(degree + 1), repeat=d) if sum(e) <= degree]
        terms = [(j, i, e, float(scale * rng.standard_normal()))
                 for j in range(1, m + 1) for i in range(1, d + 1) for e in monos]
        return cls(d, m, terms)


class FiniteDifferenceField(VectorField):
    """Central finite differences of a plain numpy field (test-only)."""

    def __init__(self, d: int, m: int, fn: Callable[[np.ndarray], np.ndarray],
                 step: float = 1e-5, max_order: int = 3):
        self.d, self.m, self.max_order = d, m, max_order
        self.fn, self.step = fn, step

    def _partial(self, y: np.ndarray, zeta: tuple[int, ...], h: float) -> np.ndarray:
        if not zeta:
            return np.asarray(self.fn(y), float)
        shift = np.zeros(self.d)
        shift[zeta[0] - 1] = h
        rest = zeta[1:]
        return (self._partial(y + shift, rest, h) - self._partial(y - shift, rest, h)) / (2 * h)

    def jets(self, y: np.ndarray, order: int) -> np.ndarray:
        self._check_order(order)
        y = np.asarray(y, float)
        space = jet_space(self.d, order)
        out = np.zeros(y.shape[:-1] + (self.m, self.d, space.M))
        eps = np.finfo(float).eps
        for k, e in enumerate(space.exponents):
            zeta = tuple(i + 1 for i, c in enumerate(e) for _ in range(c))
            h = max(self.step, eps ** (1.0 / (len(zeta) + 2)))
            out[..., k] = self._partial(y, zeta, h) / space.factorial[k]
        return out


# ---------------------------------------------------------------------------
# iterated fields


def _apply_letter(space: JetSpace, vjet: np.ndarray, j: int, f: np.ndarray) -> np.ndarray:
    """``V_j f`` for ``f`` of shape ``(..., q, M)`` and ``vjet`` of shape ``(..., m, d, M)``."""
    out = np.zeros_like(f)
    for i in range(space.d):
        out += space.mul(vjet[..., j - 1, i, :][..., None, :], space.diff(f, i))
    return out


def _apply_word(space: JetSpace, vjet: np.ndarray, word: Sequence[int], f: np.ndarray) -> np.ndarray:
    for j in reversed(word):
        f = _apply_letter(space, vjet, j, f)
    return f


def iterated_field(oracle: VectorField, gamma: Sequence[int], y: np.ndarray) -> np.ndarray:
    """``V_gamma I (y)`` with shape ``y.shape``."""
    gamma = tuple(gamma)
    if not gamma:
        raise ValueError("empty word")
    return iterated_fields(oracle, [gamma], y)[gamma]


def iterated_fields(oracle: VectorField, words: Iterable[Sequence[int]], y: np.ndarray) -> dict[Word, np.ndarray]:
    """``V_gamma I (y)`` for several words, sharing common suffixes."""
    words = [tuple(w) for w in words]
    if not words:
        return {}
    y = np.asarray(y, float)
    K = max(len(w) for w in words) - 1
    oracle._check_order(K)
    space = jet_space(oracle.d, K)
    vjet = oracle.jets(y, K)
    memo: dict[Word, np.ndarray] = {}

    def field(w: Word) -> np.ndarray:
        if w not in memo:
            if len(w) == 1:
                memo[w] = vjet[..., w[0] - 1, :, :]
            else:
                memo[w] = _apply_letter(space, vjet, w[0], field(w[1:]))
        return memo[w]

    return {w: field(w)[..., 0] for w in words}


def _inner(alpha: Sequence[int], a: int, b: int) -> Word:
    """The subword ``(alpha_{a+1}, ..., alpha_{b-1})``."""
    return tuple(alpha[a:b - 1])


def h_function(oracle: VectorField, alpha: Sequence[int], zeta: Sequence[int],
               taus: Sequence[int], y: np.ndarray) -> np.ndarray:
    """``prod_i (V_{alpha_{tau_{i-1}, tau_i}} V^{zeta_i}_{alpha_{tau_i}})(y)``."""
    alpha, zeta, taus = tuple(alpha), tuple(zeta), tuple(taus)
    if len(zeta) != len(taus) or not taus or taus[-1] != len(alpha):
        raise ValueError("arity mismatch between alpha, zeta and taus")
    y = np.asarray(y, float)
    K = len(alpha) - 1
    oracle._check_order(K)
    space = jet_space(oracle.d, K)
    vjet = oracle.jets(y, K)
    out = np.ones(y.shape[:-1])
    prev = 0
    for z, t in zip(zeta, taus):
        f = vjet[..., alpha[t - 1] - 1, z - 1, :][..., None, :]
        out = out * _apply_word(space, vjet, _inner(alpha, prev, t), f)[..., 0, 0]
        prev = t
    return out


# ---------------------------------------------------------------------------
# expansion identities


def random_test_functions(rng: np.random.Generator, p: int, m: int, d: int,
                          degree: int = 2) -> TestFunctions:
    """Random polynomial ``f^i_j`` for ``i <= p``, ``j <= m``."""
    monos = [e for e in itertools.product(range(degree + 1), repeat=d) if sum(e) <= degree]
    coeffs = rng.standard_normal((p, m, len(monos)))

    def f(i: int, j: int, ys: list[Jet]):
        total = 0.0
        for c, e in zip(coeffs[i - 1, j - 1], monos):
            term = c
            for k, ek in enumerate(e):
                if ek:
                    term = term * ys[k] ** ek
            total = total + term
        return total

    return f


def _scalar_jet(space: JetSpace, value, shape) -> np.ndarray:
    if isinstance(value, Jet):
        return value.coeffs
    return space.constant(np.broadcast_to(np.asarray(value, float), shape))


def leibniz_check(oracle: VectorField, alpha: Sequence[int], ls: Sequence[int],
                  test_functions: TestFunctions, y: np.ndarray) -> float:
    """Max discrepancy between the nested and the expanded Leibniz forms.

    The nested form is ``V_{alpha_{0,l1}}(f^1 V_{alpha_{l1,l2}}(f^2 ... f^p))``
    with ``f^i`` indexed by ``alpha_{l_i}``; the expansion sums products over
    ``taus`` and ``rho`` in Xi_r(ls; taus).
    """
    alpha, ls = tuple(alpha), tuple(ls)
    r, p = len(alpha), len(ls)
    if ls[-1] != r:
        raise ValueError("ls must end at |alpha|")
    y = np.asarray(y, float)
    shape = y.shape[:-1]
    space = jet_space(oracle.d, r)
    vjet = oracle.jets(y, r)
    ys = _variables(space, y)
    cache: dict[tuple[int, int], np.ndarray] = {}

    def f(i: int, j: int) -> np.ndarray:
        if (i, j) not in cache:
            cache[(i, j)] = _scalar_jet(space, test_functions(i, j, ys), shape)[..., None, :]
        return cache[(i, j)]

    nested = None
    bounds = (0,) + ls
    for i in range(p, 0, -1):
        g = f(i, alpha[ls[i - 1] - 1])
        if nested is not None:
            g = space.mul(g, nested)
        nested = _apply_word(space, vjet, _inner(alpha, bounds[i - 1], bounds[i]), g)
    lhs = nested[..., 0, 0]

    rhs = np.zeros(shape)
    for taus in increasing_sequences(r, p):
        tb = (0,) + taus
        for rho in xi_with_constraints(ls, taus):
            beta = rho.act(alpha)
            prod = np.ones(shape)
            for i in range(1, p + 1):
                g = _apply_word(space, vjet, _inner(beta, tb[i - 1], tb[i]), f(i, beta[tb[i] - 1]))
                prod = prod * g[..., 0, 0]
            rhs = rhs + prod
    return float(np.max(np.abs(lhs - rhs)))


def lemma_expansion_check(oracle: VectorField, alpha: Sequence[int],
                          f: Callable[[list[Jet]], "Jet | float"], y: np.ndarray) -> float:
    """Max discrepancy between ``V_alpha f`` and its H-function expansion."""
    alpha = tuple(alpha)
    r, d = len(alpha), oracle.d
    y = np.asarray(y, float)
    shape = y.shape[:-1]
    space = jet_space(d, r)
    vjet = oracle.jets(y, r)
    fjet = _scalar_jet(space, f(_variables(space, y)), shape)
    lhs = _apply_word(space, vjet, alpha, fjet[..., None, :])[..., 0, 0]

    rhs = np.zeros(shape)
    for p in range(1, r + 1):
        # derivative tensor d_zeta f over all zeta in {1..d}^p
        grad = np.stack([space.derivative(fjet, z) for z in enumerate_gamma(p, d)], axis=-1)
        grad = grad.reshape(shape + (d,) * p)
        for taus in increasing_sequences(r, p):
            tb = (0,) + taus
            for rho in xi_set(taus):
                beta = rho.act(alpha)
                factors = []
                for i in range(1, p + 1):
                    target = vjet[..., beta[tb[i] - 1] - 1, :, :]
                    factors.append(_apply_word(space, vjet, _inner(beta, tb[i - 1], tb[i]), target)[..., 0])
                term = grad
                for fac in factors:
                    term = _contract_first(term, fac, len(shape))
                rhs = rhs + term
    return float(np.max(np.abs(lhs - rhs)))


def _contract_first(tensor: np.ndarray, vec: np.ndarray, batch: int) -> np.ndarray:
    """Contract the first non-batch axis of ``tensor`` with ``vec`` (shape ``(..., d)``)."""
    t = np.moveaxis(tensor, batch, -1)
    return np.sum(t * vec.reshape(vec.shape[:batch] + (1,) * (t.ndim - batch - 1) + vec.shape[-1:]), axis=-1)


# ---------------------------------------------------------------------------
# named models


def linear_scalar(a: float = 1.0, m: int = 1) -> PolynomialField:
    """``dy = a y dB`` on every driver letter."""
    coeffs = np.broadcast_to(np.asarray(a, float), (m,))
    return PolynomialField(1, m, [(j + 1, 1, (1,), float(coeffs[j])) for j in range(m)])


def sine_field(d: int = 1, m: int = 1, A: np.ndarray | None = None, b: np.ndarray | None = None,
               scale: float = 1.0) -> FormulaField:
    """``V_j^i(y) = scale * sin(A_{ji} . y + b_{ji})``; default ``sin(y)``."""
    A = np.ones((m, d, d)) if A is None else np.asarray(A, float).reshape(m, d, d)
    b = np.zeros((m, d)) if b is None else np.asarray(b, float).reshape(m, d)

    def formula(ys):
        return [[scale * sin(sum(A[j, i, k] * ys[k] for k in range(d)) + b[j, i])
                 for i in range(d)] for j in range(m)]

    return FormulaField(d, m, formula, name="sine_field")


def sde_2d_quadratic(c: float = 0.1) -> PolynomialField:
    """A two-dimensional state driven by time plus two fBm letters.

    Quadratic terms are scaled by ``c`` so derivatives stay moderate on the
    box ``|y| <= 1/c``; trajectories are only meaningful inside that box.
    """
    terms = [
        (1, 1, (1, 0), -0.5), (1, 1, (0, 2), c),
        (1, 2, (0, 1), -0.5), (1, 2, (2, 0), -c),
        (2, 1, (0, 0), 0.3), (2, 1, (0, 1), 0.4),
        (2, 2, (1, 0), -0.2), (2, 2, (1, 1), c),
        (3, 1, (0, 1), -0.3), (3, 1, (2, 0), c),
        (3, 2, (0, 0), 0.5), (3, 2, (1, 0), 0.2),
    ]
    return PolynomialField(2, 3, terms)


MODELS: dict[str, Callable[..., VectorField]] = {
    "linear_scalar": linear_scalar,
    "sine_field": sine_field,
    "sde_2d_quadratic": sde_2d_quadratic,
}


def named_model(name: str, **params) -> VectorField:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**params)


def load_field(doc: Mapping) -> VectorField:
    """A field from a config entry: a named model or an inline polynomial."""
    if "terms" in doc:
        return PolynomialField.from_json(doc)
    params = dict(doc.get("params", {}))
    return named_model(doc["name"], **params)
