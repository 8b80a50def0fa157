"""Randomised and exhaustive property suites behind ``roughtaylor check``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .integrals import PolynomialPath, nested_integral_check, shuffle_identity_check
from .multiindex import check_duality, increasing_sequences, shuffles, xi_with_constraints
from .signal import SignalSpec, build_signal
from .vectorfield import (PolynomialField, lemma_expansion_check, leibniz_check,
                          random_test_functions)

SUITES = ("combinatorics", "jets", "integrals")


@dataclass
class CheckResult:
    name: str
    cases: int = 0
    worst: float = 0.0
    tolerance: float = 0.0
    counterexample: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.counterexample is None

    def record(self, value: float, case: str) -> None:
        self.cases += 1
        self.worst = max(self.worst, value)
        if self.counterexample is None and not value <= self.tolerance:
            self.counterexample = f"{case}: discrepancy {value:.3e}"

    def to_json(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def duality_suite(max_r: int = 6) -> CheckResult:
    """Xi equals the inverses of Theta for every admissible pair up to ``max_r``."""
    res = CheckResult("duality", tolerance=0.0)
    empty = 0
    for r in range(1, max_r + 1):
        for p in range(1, r + 1):
            for ls in increasing_sequences(r, p):
                for taus in increasing_sequences(r, p):
                    ok = check_duality(ls, taus)
                    empty += not xi_with_constraints(ls, taus)
                    res.record(0.0 if ok else 1.0, f"ls={ls} taus={taus}")
    res.extra["empty_pairs"] = empty
    return res


def shuffle_count_suite(max_total: int = 10, seed: int = 0) -> CheckResult:
    """``|Sh(g1, g2)| = C(|g1| + |g2|, |g1|)``, on repeated-letter words too."""
    rng = np.random.default_rng(seed)
    res = CheckResult("shuffle_counts", tolerance=0.0)
    for a in range(0, max_total + 1):
        for b in range(0, max_total + 1 - a):
            for letters in (1, 3):
                g1 = tuple(int(x) for x in rng.integers(1, letters + 1, a))
                g2 = tuple(int(x) for x in rng.integers(1, letters + 1, b))
                got = len(shuffles(g1, g2))
                res.record(float(got != math.comb(a + b, a)), f"g1={g1} g2={g2} count={got}")
    return res


def _random_alpha(rng: np.random.Generator, m: int, max_r: int) -> tuple[int, ...]:
    return tuple(int(a) for a in rng.integers(1, m + 1, int(rng.integers(1, max_r + 1))))


def leibniz_suite(cases: int = 200, seed: int = 0, tolerance: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("leibniz", tolerance=tolerance)
    for _ in range(cases):
        d, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        field_ = PolynomialField.random(rng, d, m, degree=2, scale=0.5)
        alpha = _random_alpha(rng, m, 5)
        r = len(alpha)
        p = int(rng.integers(1, r + 1))
        ls = tuple(sorted(int(x) for x in rng.choice(np.arange(1, r), p - 1, replace=False))) + (r,)
        f = random_test_functions(rng, p, m, d)
        y = rng.uniform(-1, 1, d)
        res.record(leibniz_check(field_, alpha, ls, f, y), f"d={d} m={m} alpha={alpha} ls={ls}")
    return res


def expansion_suite(cases: int = 200, seed: int = 1, tolerance: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("iterated_field_expansion", tolerance=tolerance)
    for _ in range(cases):
        d, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        field_ = PolynomialField.random(rng, d, m, degree=2, scale=0.5)
        alpha = _random_alpha(rng, m, 5)
        g = random_test_functions(rng, 1, 1, d, degree=3)
        y = rng.uniform(-1, 1, d)
        res.record(lemma_expansion_check(field_, alpha, lambda ys: g(1, 1, ys), y),
                   f"d={d} m={m} alpha={alpha}")
    return res


def _random_split(rng: np.random.Generator, m: int, max_total: int, max_parts: int) -> list[tuple[int, ...]]:
    total = int(rng.integers(2, max_total + 1))
    parts = int(rng.integers(1, min(max_parts, total) + 1))
    cuts = sorted(int(x) for x in rng.choice(np.arange(1, total), parts - 1, replace=False))
    bounds = [0] + cuts + [total]
    word = [int(a) for a in rng.integers(1, m + 1, total)]
    return [tuple(word[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def path_identity_suite(cases: int = 200, seed: int = 2, poly_tol: float = 1e-9,
                        fbm_tol: float = 5e-3, refine_factor: int = 256) -> list[CheckResult]:
    """Shuffle identity and nested expansion on polynomial and fBm drivers."""
    rng = np.random.default_rng(seed)
    out = {key: CheckResult(key, tolerance=tol) for key, tol in
           [("shuffle_polynomial", poly_tol), ("nested_polynomial", poly_tol),
            ("shuffle_fbm", fbm_tol), ("nested_fbm", fbm_tol)]}
    m = 3
    signal = build_signal(SignalSpec.uniform(0.7, m, n_fine=4 * refine_factor, seed=seed))
    for _ in range(cases):
        poly = PolynomialPath.from_coefficients(rng.uniform(-1, 1, (m, 4)))
        total = int(rng.integers(2, 6))
        word = tuple(int(a) for a in rng.integers(1, m + 1, total))
        cut = int(rng.integers(1, total))
        g1, g2 = word[:cut], word[cut:]
        out["shuffle_polynomial"].record(shuffle_identity_check(poly, g1, g2), f"g1={g1} g2={g2}")
        k = int(rng.integers(0, 4))
        out["shuffle_fbm"].record(shuffle_identity_check(signal, g1, g2, k, refine_factor, 4),
                                  f"g1={g1} g2={g2} k={k}")
        gammas = _random_split(rng, m, 5, 3)
        out["nested_polynomial"].record(nested_integral_check(poly, gammas), f"gammas={gammas}")
        out["nested_fbm"].record(nested_integral_check(signal, gammas, k, refine_factor, 4),
                                 f"gammas={gammas} k={k}")
    return list(out.values())


def run_suite(name: str, cases: int = 200, seed: int = 0) -> list[CheckResult]:
    runners: dict[str, Callable[[], list[CheckResult]]] = {
        "combinatorics": lambda: [duality_suite(), shuffle_count_suite(seed=seed)],
        "jets": lambda: [leibniz_suite(cases, seed), expansion_suite(cases, seed + 1)],
        "integrals": lambda: path_identity_suite(cases, seed + 2),
    }
    if name == "all":
        return [r for key in SUITES for r in runners[key]()]
    if name not in runners:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    return runners[name]()
