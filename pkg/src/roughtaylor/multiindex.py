"""Words over a finite alphabet, shuffle-type permutation families and
rate exponents of incomplete Taylor schemes.

A word (multi-index) is a plain tuple of letters in ``1..m``.  Permutations
are 1-based images.  For a word ``alpha`` and permutation ``rho`` the
composed word is ``alpha o rho = (alpha[rho(1)], ..., alpha[rho(r)])``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Literal, Sequence

Word = tuple[int, ...]

ENUMERATION_BUDGET = 10**7
# Ties between a rate and a word value are decided up to this many ulps-ish of
# slack, so that (N+1)*b - 1 and b + ... + b - 1 compare as equal.
TIE_TOL = 1e-12


class EnumerationTooLarge(ValueError):
    """Raised when an enumeration would exceed the configured budget."""


# ---------------------------------------------------------------------------
# words


def as_word(letters: Iterable[int], m: int | None = None) -> Word:
    """Validate and return ``letters`` as a word."""
    w = tuple(int(a) for a in letters)
    if not w:
        raise ValueError("empty word")
    if any(a < 1 for a in w) or (m is not None and any(a > m for a in w)):
        raise ValueError(f"word {w} has letters outside 1..{m}")
    return w


def dotted(word: Sequence[int]) -> str:
    """Render a word as ``"1.2.2"``."""
    return ".".join(str(a) for a in word)


def parse_dotted(text: str) -> Word:
    return as_word(int(a) for a in text.split("."))


def _check_budget(count: int, budget: int) -> None:
    if count > budget:
        raise EnumerationTooLarge(f"enumeration too large ({count} > {budget})")


def enumerate_gamma(r: int, m: int, budget: int = ENUMERATION_BUDGET) -> list[Word]:
    """All ``m**r`` words of length ``r`` in lexicographic order."""
    if r < 1 or m < 1:
        raise ValueError("r and m must be positive")
    if r * math.log(m) > math.log(budget) + 1e-12:
        raise EnumerationTooLarge(f"enumeration too large (m**r = {m}**{r})")
    return list(itertools.product(range(1, m + 1), repeat=r))


def contains(alpha: Sequence[int], alpha_prime: Sequence[int]) -> bool:
    """True iff ``alpha`` is ``alpha_prime`` with exactly one letter deleted."""
    alpha, alpha_prime = tuple(alpha), tuple(alpha_prime)
    if len(alpha_prime) != len(alpha) + 1:
        raise ValueError("contains() needs |alpha'| = |alpha| + 1")
    return any(alpha_prime[:i] + alpha_prime[i + 1:] == alpha for i in range(len(alpha_prime)))


def deletions(word: Word) -> set[Word]:
    """All words obtained by deleting one letter (empty word excluded)."""
    return {word[:i] + word[i + 1:] for i in range(len(word))} - {()}


# ---------------------------------------------------------------------------
# permutations


@dataclass(frozen=True, order=True)
class Permutation:
    """A bijection of ``{1..r}`` stored by its images."""

    images: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "images", tuple(int(i) for i in self.images))
        if sorted(self.images) != list(range(1, len(self.images) + 1)):
            raise ValueError(f"not a permutation: {self.images}")

    @classmethod
    def identity(cls, r: int) -> "Permutation":
        return cls(tuple(range(1, r + 1)))

    def __len__(self) -> int:
        return len(self.images)

    def __call__(self, i: int) -> int:
        return self.images[i - 1]

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.images)
        for i, v in enumerate(self.images, start=1):
            inv[v - 1] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """``(self o other)(i) = self(other(i))``."""
        return Permutation(tuple(self(other(i)) for i in range(1, len(other) + 1)))

    def act(self, word: Sequence[int]) -> Word:
        """The word ``word o self``."""
        if len(word) != len(self.images):
            raise ValueError("length mismatch")
        return tuple(word[i - 1] for i in self.images)

    def is_identity(self) -> bool:
        return self.images == tuple(range(1, len(self.images) + 1))


def all_permutations(r: int, budget: int = ENUMERATION_BUDGET) -> Iterator[Permutation]:
    _check_budget(math.factorial(r), budget)
    for p in itertools.permutations(range(1, r + 1)):
        yield Permutation(p)


def shuffles(gamma1: Sequence[int], gamma2: Sequence[int],
             budget: int = ENUMERATION_BUDGET) -> list[Permutation]:
    """Sh(gamma1, gamma2): permutations of ``1..r1+r2`` increasing on
    ``1..r1`` and on ``r1+1..r1+r2``.  Sorted by images."""
    r1, r2 = len(gamma1), len(gamma2)
    r = r1 + r2
    _check_budget(math.comb(r, r1), budget)
    out = []
    for first in itertools.combinations(range(1, r + 1), r1):
        rest = [v for v in range(1, r + 1) if v not in first]
        out.append(Permutation(tuple(first) + tuple(rest)))
    return sorted(out)


def _validate_increasing(seq: Sequence[int], name: str, r: int | None = None) -> tuple[int, ...]:
    s = tuple(int(v) for v in seq)
    if not s or s[0] < 1 or any(b <= a for a, b in zip(s, s[1:])):
        raise ValueError(f"{name} must be a strictly increasing sequence starting at >= 1")
    if r is not None and s[-1] != r:
        raise ValueError(f"{name} must end at r={r}")
    return s


def _blocks(taus: Sequence[int]) -> list[range]:
    prev = 0
    out = []
    for t in taus:
        out.append(range(prev + 1, t + 1))
        prev = t
    return out


def _multiset_sequences(counts: list[int]) -> Iterator[list[int]]:
    """Distinct sequences with label ``i`` appearing ``counts[i]`` times."""
    total = sum(counts)
    seq: list[int] = []

    def rec() -> Iterator[list[int]]:
        if len(seq) == total:
            yield list(seq)
            return
        for i, c in enumerate(counts):
            if c:
                counts[i] -= 1
                seq.append(i)
                yield from rec()
                seq.pop()
                counts[i] += 1

    yield from rec()


def xi_set(taus: Sequence[int], r: int | None = None,
           budget: int = ENUMERATION_BUDGET) -> list[Permutation]:
    """The family Xi_r(taus).

    A member sends the blocks ``I_i = {tau_{i-1}+1..tau_i}`` increasingly onto
    interleaved positions, with the block ends in increasing order.
    """
    taus = _validate_increasing(taus, "taus", r)
    r = taus[-1]
    sizes = [len(b) for b in _blocks(taus)]
    count = math.factorial(r)
    for s in sizes:
        count //= math.factorial(s)
    _check_budget(count, budget)
    out = []
    for labels in _multiset_sequences(sizes):
        last = {lab: pos for pos, lab in enumerate(labels)}
        if any(last[i] > last[i + 1] for i in range(len(sizes) - 1)):
            continue
        images = [0] * r
        cursor = [b.start for b in _blocks(taus)]
        for pos, lab in enumerate(labels, start=1):
            images[cursor[lab] - 1] = pos
            cursor[lab] += 1
        out.append(Permutation(tuple(images)))
    return sorted(out)


def _theta_rules(mu: Permutation, ls: tuple[int, ...]) -> bool:
    r = len(mu)
    taus = [mu(li) for li in ls]
    if any(b <= a for a, b in zip(taus, taus[1:])) or taus[-1] != r:
        return False
    block_of = [0] * (r + 1)
    for b, blk in enumerate(_blocks(taus)):
        for v in blk:
            block_of[v] = b
    last_in_block: dict[int, int] = {}
    for y in range(1, r + 1):
        b = block_of[mu(y)]
        if b in last_in_block and last_in_block[b] > mu(y):
            return False
        last_in_block[b] = mu(y)
    return True


def theta_set(ls: Sequence[int], r: int | None = None,
              budget: int = ENUMERATION_BUDGET) -> list[Permutation]:
    """The family Theta_r(ls), by filtering the symmetric group."""
    ls = _validate_increasing(ls, "ls", r)
    return [mu for mu in all_permutations(ls[-1], budget) if _theta_rules(mu, ls)]


def xi_with_constraints(ls: Sequence[int], taus: Sequence[int],
                        budget: int = ENUMERATION_BUDGET) -> list[Permutation]:
    """Xi_r(ls; taus): members of Xi_r(taus) with ``rho(tau_i) = l_i``."""
    ls, taus = _check_pair(ls, taus)
    return [rho for rho in xi_set(taus, budget=budget)
            if all(rho(t) == l for t, l in zip(taus, ls))]


def theta_with_constraints(ls: Sequence[int], taus: Sequence[int],
                           budget: int = ENUMERATION_BUDGET) -> list[Permutation]:
    """Theta_r(ls; taus): members of Theta_r(ls) with ``mu(l_i) = tau_i``."""
    ls, taus = _check_pair(ls, taus)
    return [mu for mu in theta_set(ls, budget=budget)
            if all(mu(l) == t for t, l in zip(taus, ls))]


def _check_pair(ls: Sequence[int], taus: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...]]:
    ls = _validate_increasing(ls, "ls")
    taus = _validate_increasing(taus, "taus", ls[-1])
    if len(ls) != len(taus):
        raise ValueError("ls and taus must have the same length")
    return ls, taus


def check_duality(ls: Sequence[int], taus: Sequence[int],
                  budget: int = ENUMERATION_BUDGET) -> bool:
    """True iff Xi_r(ls; taus) is the set of inverses of Theta_r(ls; taus)."""
    xi = set(xi_with_constraints(ls, taus, budget))
    theta = {mu.inverse() for mu in theta_with_constraints(ls, taus, budget)}
    return xi == theta


def increasing_sequences(r: int, p: int | None = None) -> Iterator[tuple[int, ...]]:
    """Strictly increasing sequences ending at ``r`` (optionally of length p)."""
    lengths = range(1, r + 1) if p is None else [p]
    for q in lengths:
        for head in itertools.combinations(range(1, r), q - 1):
            yield head + (r,)


# ---------------------------------------------------------------------------
# index sets and exponents


@dataclass(frozen=True)
class IndexSet:
    """A finite set of words over ``1..m``."""

    members: frozenset[Word]
    m: int

    def __post_init__(self) -> None:
        mem = frozenset(as_word(w, self.m) for w in self.members)
        object.__setattr__(self, "members", mem)

    @classmethod
    def of(cls, members: Iterable[Sequence[int]], m: int) -> "IndexSet":
        return cls(frozenset(tuple(w) for w in members), m)

    @classmethod
    def complete(cls, N: int, m: int) -> "IndexSet":
        """All words of length at most ``N``."""
        return cls.of((w for r in range(1, N + 1) for w in enumerate_gamma(r, m)), m)

    @classmethod
    def euler(cls, m: int) -> "IndexSet":
        return cls.complete(1, m)

    @classmethod
    def milstein(cls, m: int) -> "IndexSet":
        """Single letters plus all pairs of non-time letters (letter 1 is time)."""
        pairs = [(j, k) for j in range(2, m + 1) for k in range(2, m + 1)]
        return cls.of([(j,) for j in range(1, m + 1)] + pairs, m)

    @property
    def N(self) -> int:
        return max((len(w) for w in self.members), default=0)

    def __contains__(self, word: object) -> bool:
        return tuple(word) in self.members  # type: ignore[arg-type]

    def __iter__(self) -> Iterator[Word]:
        return iter(self.sorted())

    def __len__(self) -> int:
        return len(self.members)

    def sorted(self) -> list[Word]:
        """Members ordered by length, then lexicographically."""
        return sorted(self.members, key=lambda w: (len(w), w))

    def __or__(self, other: "IndexSet") -> "IndexSet":
        return IndexSet(self.members | other.members, max(self.m, other.m))

    def __sub__(self, other: "IndexSet") -> "IndexSet":
        return IndexSet(self.members - other.members, self.m)

    def to_json(self) -> dict:
        return {"m": self.m, "members": [list(w) for w in self.sorted()]}

    @classmethod
    def from_json(cls, doc: dict | str) -> "IndexSet":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls.of(doc["members"], int(doc["m"]))


Mode = Literal["holder", "hurst"]


@dataclass(frozen=True)
class ExponentVector:
    """Per-letter regularity exponents.

    In ``"hurst"`` mode a value of exactly 1 marks a time letter.  The value
    1/2 is accepted as the formal Brownian analogue.
    """

    values: tuple[float, ...]
    mode: Mode = "hurst"

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if self.mode not in ("holder", "hurst"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not vals:
            raise ValueError("no exponents")
        for v in vals:
            if not (0.5 <= v <= 1.0) or (self.mode == "holder" and v == 0.5):
                raise ValueError(f"exponent {v} outside the Young range")

    @classmethod
    def uniform(cls, value: float, m: int, mode: Mode = "hurst", time: bool = False) -> "ExponentVector":
        vals = [value] * m
        if time:
            vals[0] = 1.0
        return cls(tuple(vals), mode)

    @property
    def m(self) -> int:
        return len(self.values)

    def __getitem__(self, letter: int) -> float:
        return self.values[letter - 1]

    def is_time(self, letter: int) -> bool:
        return self.values[letter - 1] == 1.0

    def weight(self, word: Sequence[int]) -> float:
        """Sum of exponents over the letters of ``word``."""
        return math.fsum(self.values[a - 1] for a in word)

    def to_json(self) -> dict:
        return {"mode": self.mode, "values": list(self.values)}

    @classmethod
    def from_json(cls, doc: dict | str) -> "ExponentVector":
        if isinstance(doc, str):
            doc = json.loads(doc)
        return cls(tuple(doc["values"]), doc["mode"])


def r_prime(word: Sequence[int], exps: ExponentVector) -> int:
    """Number of non-time letters."""
    return sum(1 for a in word if not exps.is_time(a))


def vartheta(word: Sequence[int], exps: ExponentVector) -> float:
    rp = [exps[a] for a in word if not exps.is_time(a)]
    return 1.0 if len(rp) % 2 == 0 else max(rp)


def theta_value(word: Sequence[int], exps: ExponentVector) -> float:
    return exps.weight(word) - 1.0


def rho_value(word: Sequence[int], exps: ExponentVector) -> float:
    return exps.weight(word) - vartheta(word, exps)


def _count_vectors(L: int, m: int) -> Iterator[tuple[int, ...]]:
    for cuts in itertools.combinations(range(L + m - 1), m - 1):
        prev = -1
        counts = []
        for c in cuts + (L + m - 1,):
            counts.append(c - prev - 1)
            prev = c
        yield tuple(counts)


def _word_of_counts(counts: Sequence[int]) -> Word:
    return tuple(j for j, c in enumerate(counts, start=1) for _ in range(c))


def _complement_min(index_set: IndexSet, exps: ExponentVector,
                    value: Callable[[Word, ExponentVector], float]) -> float:
    """Minimum of ``value`` over words absent from ``index_set``.

    Every value is at least ``L * e_min - 1`` at length L, which bounds the
    search.  Beyond the longest member only letter counts matter.
    """
    m = exps.m
    if index_set.m != m:
        raise ValueError("alphabet size mismatch between set and exponents")
    e_min = min(exps.values)
    N = index_set.N
    best = math.inf
    L = 1
    while L * e_min - 1.0 <= best:
        if L <= N:
            for w in enumerate_gamma(L, m):
                if w not in index_set.members:
                    best = min(best, value(w, exps))
        else:
            for counts in _count_vectors(L, m):
                best = min(best, value(_word_of_counts(counts), exps))
        L += 1
        if L > 10_000:
            raise RuntimeError("complement search exhausted")
    return best


def theta_of(index_set: IndexSet, exps: ExponentVector) -> float:
    """Almost-sure rate exponent: min over absent words of (sum beta - 1)."""
    return _complement_min(index_set, exps, theta_value)


def rho_of(index_set: IndexSet, exps: ExponentVector) -> float:
    """L_p rate exponent: min over absent words of (H_alpha - vartheta)."""
    return _complement_min(index_set, exps, rho_value)


def _below(v: float, bound: float) -> bool:
    return v < bound - TIE_TOL * max(1.0, abs(bound))


def _sublevel_set(bound: float, exps: ExponentVector, m: int,
                  value: Callable[[Word, ExponentVector], float]) -> IndexSet:
    # value is nondecreasing under letter insertion, so prefixes prune
    if exps.m != m:
        raise ValueError("alphabet size mismatch")
    found: list[Word] = []
    stack: list[Word] = [(j,) for j in range(m, 0, -1)]
    while stack:
        w = stack.pop()
        if _below(value(w, exps), bound):
            found.append(w)
            stack.extend(w + (j,) for j in range(m, 0, -1))
    if not found:
        warnings.warn(f"rate {bound} yields an empty index set", stacklevel=3)
    return IndexSet.of(found, m)


def gamma_theta(theta: float, exps: ExponentVector, m: int) -> IndexSet:
    """Gamma(theta) = {alpha : sum beta - 1 < theta}."""
    return _sublevel_set(theta, exps, m, theta_value)


def gamma_rho(rho: float, exps: ExponentVector, m: int) -> IndexSet:
    """The L_p-optimal set for rate ``rho`` (two parity branches)."""
    return _sublevel_set(rho, exps, m, rho_value)


def next_rate_and_correction_set(rho: float, exps: ExponentVector, m: int,
                                 max_length: int = 64) -> tuple[float, IndexSet]:
    """Smallest admissible rate above ``rho`` and the words it adds."""
    e_min = min(exps.values)
    best = math.inf
    L = 1
    while L * e_min - 1.0 <= best:
        if L > max_length:
            raise RuntimeError(f"no admissible rate above {rho} within length {max_length}")
        for counts in _count_vectors(L, m):
            v = rho_value(_word_of_counts(counts), exps)
            if v > rho + TIE_TOL * max(1.0, abs(rho)):
                best = min(best, v)
        L += 1
    return best, gamma_rho(best, exps, m) - gamma_rho(rho, exps, m)


def is_hierarchical(index_set: IndexSet, probe_depth: int | None = None) -> bool:
    """True iff the complement is closed under one-letter insertion.

    For a finite set this is checked on members: every one-letter deletion of
    a member must again be a member.
    """
    if probe_depth is not None and probe_depth < index_set.N + 1:
        raise ValueError("probe_depth must be at least N + 1")
    return all(d in index_set.members for w in index_set.members for d in deletions(w))


def parity_ok(word: Sequence[int], exps: ExponentVector) -> bool:
    """True iff every non-time letter occurs an even number of times."""
    counts: dict[int, int] = {}
    for a in word:
        if not exps.is_time(a):
            counts[a] = counts.get(a, 0) + 1
    return all(c % 2 == 0 for c in counts.values())
