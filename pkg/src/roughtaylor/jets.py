"""Truncated multivariate Taylor polynomials (jets) with dense storage.

A jet of order ``K`` in ``d`` variables holds the Taylor coefficients
``c_e`` of ``f(y + h) = sum_e c_e h^e`` for all exponents ``|e| <= K``.
Coefficient arrays carry arbitrary leading batch axes; the last axis runs
over monomials.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Sequence

import numpy as np


class JetSpace:
    """Monomial bookkeeping for jets in ``d`` variables up to order ``K``."""

    def __init__(self, d: int, K: int):
        self.d, self.K = d, K
        exps = [e for e in itertools.product(range(K + 1), repeat=d) if sum(e) <= K]
        exps.sort(key=lambda e: (sum(e), tuple(-x for x in e)))
        self.exponents: list[tuple[int, ...]] = exps
        self.index = {e: k for k, e in enumerate(exps)}
        self.M = len(exps)
        self.degree = np.array([sum(e) for e in exps])
        self.factorial = np.array([math.prod(math.factorial(x) for x in e) for e in exps], float)

        ia, ib, ic = [], [], []
        for a, ea in enumerate(exps):
            for b, eb in enumerate(exps):
                if sum(ea) + sum(eb) <= K:
                    ia.append(a)
                    ib.append(b)
                    ic.append(self.index[tuple(x + y for x, y in zip(ea, eb))])
        self._ia, self._ib = np.array(ia), np.array(ib)
        scatter = np.zeros((len(ic), self.M))
        scatter[np.arange(len(ic)), ic] = 1.0
        self._scatter = scatter

        # derivative in variable i as a right-multiplication matrix
        self._deriv = np.zeros((d, self.M, self.M))
        for k, e in enumerate(exps):
            for i in range(d):
                if e[i] > 0:
                    lower = list(e)
                    lower[i] -= 1
                    self._deriv[i, k, self.index[tuple(lower)]] = e[i]

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a[..., self._ia] * b[..., self._ib]) @ self._scatter

    def diff(self, a: np.ndarray, i: int) -> np.ndarray:
        """Derivative in variable ``i`` (0-based)."""
        return a @ self._deriv[i]

    def constant(self, value: np.ndarray | float) -> np.ndarray:
        value = np.asarray(value, float)
        out = np.zeros(value.shape + (self.M,))
        out[..., 0] = value
        return out

    def variables(self, y: np.ndarray) -> np.ndarray:
        """Jets of the coordinate functions around ``y``; shape ``(..., d, M)``."""
        y = np.asarray(y, float)
        out = self.constant(y)
        for i in range(self.d if self.K > 0 else 0):
            e = [0] * self.d
            e[i] = 1
            out[..., i, self.index[tuple(e)]] = 1.0
        return out

    def derivative(self, a: np.ndarray, zeta: Sequence[int]) -> np.ndarray:
        """The partial derivative along the 1-based word ``zeta`` at the base point."""
        e = [0] * self.d
        for z in zeta:
            e[z - 1] += 1
        k = self.index[tuple(e)]
        return a[..., k] * self.factorial[k]

    def compose(self, a: np.ndarray, derivs: Sequence[np.ndarray]) -> np.ndarray:
        """``g(a)`` for a univariate ``g`` given ``derivs[k] = g^(k)(a_0)``."""
        u = a.copy()
        u[..., 0] = 0.0
        out = self.constant(derivs[0])
        power = self.constant(np.ones(a.shape[:-1]))
        for k in range(1, self.K + 1):
            power = self.mul(power, u)
            out = out + (np.asarray(derivs[k])[..., None] / math.factorial(k)) * power
        return out


@lru_cache(maxsize=None)
def jet_space(d: int, K: int) -> JetSpace:
    return JetSpace(d, K)


class Jet:
    """Arithmetic wrapper around a coefficient array, used to write vector
    fields as ordinary formulas and differentiate them in forward mode."""

    __array_priority__ = 100

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = coeffs

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[..., 0]

    def _lift(self, other: "Jet | float | np.ndarray") -> np.ndarray:
        if isinstance(other, Jet):
            return other.coeffs
        return self.space.constant(np.broadcast_to(other, self.coeffs.shape[:-1]))

    def __add__(self, other):
        return Jet(self.space, self.coeffs + self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Jet(self.space, self.coeffs - self._lift(other))

    def __rsub__(self, other):
        return Jet(self.space, self._lift(other) - self.coeffs)

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.space.mul(self.coeffs, other.coeffs))
        return Jet(self.space, self.coeffs * np.asarray(other, float)[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.space, self.coeffs / np.asarray(other, float)[..., None])

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, n: int):
        if int(n) != n or n < 0:
            raise ValueError("only nonnegative integer powers")
        out = Jet(self.space, self.space.constant(np.ones(self.coeffs.shape[:-1])))
        for _ in range(int(n)):
            out = out * self
        return out

    def _apply(self, derivs) -> "Jet":
        return Jet(self.space, self.space.compose(self.coeffs, derivs))

    def sin(self) -> "Jet":
        c = self.value
        cycle = [np.sin(c), np.cos(c), -np.sin(c), -np.cos(c)]
        return self._apply([cycle[k % 4] for k in range(self.space.K + 1)])

    def cos(self) -> "Jet":
        c = self.value
        cycle = [np.cos(c), -np.sin(c), -np.cos(c), np.sin(c)]
        return self._apply([cycle[k % 4] for k in range(self.space.K + 1)])

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self._apply([e] * (self.space.K + 1))

    def reciprocal(self) -> "Jet":
        c = self.value
        return self._apply([(-1) ** k * math.factorial(k) * c ** (-k - 1)
                            for k in range(self.space.K + 1)])


def sin(x):
    return x.sin() if isinstance(x, Jet) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Jet) else np.cos(x)


def exp(x):
    return x.exp() if isinstance(x, Jet) else np.exp(x)
