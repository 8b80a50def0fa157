"""Taylor-type one-step schemes driven by sampled signals.

Every scheme has the form

    y_{k+1} = y_k + sum_{gamma in set} V_gamma I(y_k) x^gamma_{t_k, t_{k+1}}
                  + sum_{gamma in corrections} V_gamma I(y_k) D_gamma(t_{k+1} - t_k)

with the step integrals taken from a :class:`StepIntegralTable`.  Paths are
solved in batches; the loop over steps is sequential.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .integrals import MomentSpec, StepIntegralTable, d_gamma, step_table
from .multiindex import (ExponentVector, IndexSet, Word, gamma_rho, is_hierarchical,
                         next_rate_and_correction_set, parity_ok)
from .signal import DrivingSignal, _stride
from .vectorfield import VectorField, iterated_fields

log = logging.getLogger(__name__)

DIVERGENCE_BOUND = 1e8

Kind = Literal["complete_taylor", "incomplete", "modified", "euler", "milstein", "modified_euler"]
KINDS = ("complete_taylor", "incomplete", "modified", "euler", "milstein", "modified_euler")


class SchemeConfigError(ValueError):
    pass


class TrajectoryDiverged(RuntimeError):
    def __init__(self, result: "SolveResult"):
        super().__init__(f"trajectory diverged at step {result.diverged_at}")
        self.result = result


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme kind plus grid parameters.

    ``refine_factor=None`` uses every fine grid point inside a step.  For
    ``modified`` either give both sets or a ``rho``; the sets are then
    ``gamma_rho(rho)`` and the words added at the next admissible rate.
    """

    kind: Kind
    coarse_n: int
    refine_factor: int | None = None
    N: int | None = None
    index_set: IndexSet | None = None
    correction_set: IndexSet | None = None
    rho: float | None = None
    interpolate_in_step: bool = False
    allow_non_hierarchical: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemeConfigError(f"unknown scheme kind {self.kind!r}")
        if self.coarse_n < 1:
            raise SchemeConfigError("coarse_n must be positive")
        if self.kind == "complete_taylor" and (self.N is None or self.N < 1):
            raise SchemeConfigError("complete_taylor needs N >= 1")
        if self.kind == "incomplete" and self.index_set is None:
            raise SchemeConfigError("incomplete needs an index_set")
        if self.kind == "modified" and self.rho is None and (
                self.index_set is None or self.correction_set is None):
            raise SchemeConfigError("modified needs rho or both index_set and correction_set")

    def with_(self, **changes) -> "SchemeConfig":
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        doc.update(changes)
        return SchemeConfig(**doc)

    def to_json(self) -> dict:
        doc = {f: getattr(self, f) for f in self.__dataclass_fields__}
        for key in ("index_set", "correction_set"):
            if doc[key] is not None:
                doc[key] = doc[key].to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SchemeConfig":
        doc = dict(doc)
        for key in ("index_set", "correction_set"):
            if doc.get(key) is not None:
                doc[key] = IndexSet.from_json(doc[key])
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemeConfigError(f"unknown scheme fields {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class ResolvedScheme:
    """Words with their step integrals and corrections with their moments."""

    words: tuple[Word, ...]
    corrections: tuple[tuple[Word, float], ...]

    @property
    def depth(self) -> int:
        return max((len(w) for w in self.words), default=1)

    @property
    def all_words(self) -> list[Word]:
        return list(self.words) + [w for w, _ in self.corrections]


def named_sets(kind: str, exps: ExponentVector) -> tuple[IndexSet, IndexSet | None]:
    """Index set and correction set of a named scheme."""
    m = exps.m
    if kind == "euler":
        return IndexSet.euler(m), None
    if kind == "milstein":
        if not exps.is_time(1):
            raise SchemeConfigError("the Milstein scheme needs component 1 to be the time path")
        return IndexSet.milstein(m), None
    if kind == "modified_euler":
        diag = [(j, j) for j in range(1, m + 1) if not exps.is_time(j)]
        return IndexSet.euler(m), IndexSet.of(diag, m)
    raise SchemeConfigError(f"{kind!r} is not a named scheme")


def modified_sets(rho: float, exps: ExponentVector) -> tuple[IndexSet, IndexSet]:
    return gamma_rho(rho, exps, exps.m), next_rate_and_correction_set(rho, exps, exps.m)[1]


def resolve(config: SchemeConfig, exps: ExponentVector, step: float) -> ResolvedScheme:
    """Turn a config into explicit word lists for a step of length ``step``."""
    m = exps.m
    corrections: IndexSet | None = None
    if config.kind == "complete_taylor":
        index_set = IndexSet.complete(config.N, m)
    elif config.kind == "incomplete":
        index_set = config.index_set
    elif config.kind == "modified":
        if config.index_set is not None:
            index_set, corrections = config.index_set, config.correction_set
        else:
            index_set, corrections = modified_sets(config.rho, exps)
    else:
        index_set, corrections = named_sets(config.kind, exps)
    if index_set.m != m:
        raise SchemeConfigError(f"index set is over {index_set.m} letters, signal has {m}")
    if not config.allow_non_hierarchical and not is_hierarchical(index_set):
        raise SchemeConfigError("index set is not hierarchical")
    pairs: list[tuple[Word, float]] = []
    if corrections is not None:
        for w in corrections.sorted():
            if not parity_ok(w, exps):
                log.warning("correction word %s fails the parity condition; its moment is zero", w)
                continue
            try:
                D = d_gamma(MomentSpec(w, exps), step)
            except ValueError as exc:
                raise SchemeConfigError(f"moment of {w} unavailable: {exc}") from exc
            if D != 0.0:
                pairs.append((w, D))
    return ResolvedScheme(tuple(index_set.sorted()), tuple(pairs))


@dataclass(frozen=True)
class BatchResult:
    """Coarse-grid values for several paths, shape ``(P, coarse_n + 1, d)``.

    Paths that diverged hold NaN from the step after divergence on;
    ``diverged_at`` is -1 for paths that stayed bounded.
    """

    values: np.ndarray
    diverged_at: np.ndarray
    times: np.ndarray

    @property
    def diverged(self) -> np.ndarray:
        return self.diverged_at >= 0


@dataclass(frozen=True)
class SolveResult:
    values: np.ndarray
    times: np.ndarray
    config: SchemeConfig
    provenance: dict = field(default_factory=dict)
    diverged_at: int | None = None
    _interpolant: object = field(default=None, repr=False, compare=False)

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def interpolate(self, t: float | np.ndarray) -> np.ndarray:
        """``y^n_t`` at points of the in-step grid (needs ``interpolate_in_step``)."""
        if self._interpolant is None:
            raise ValueError("solve with interpolate_in_step=True to evaluate inside steps")
        return self._interpolant(t)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t"] + [f"y{i + 1}" for i in range(self.values.shape[1])])
            for t, row in zip(self.times, self.values):
                out.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def _advance(oracle: VectorField, scheme: ResolvedScheme, y: np.ndarray,
             increments: dict[Word, np.ndarray]) -> np.ndarray:
    fields = iterated_fields(oracle, scheme.all_words, y)
    out = y
    for w in scheme.words:
        out = out + fields[w] * increments[w][..., None]
    for w, D in scheme.corrections:
        out = out + fields[w] * D
    return out


def run_scheme(oracle: VectorField, scheme: ResolvedScheme, table: StepIntegralTable,
               y0: np.ndarray, bound: float = DIVERGENCE_BOUND) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch given its step table (batch axis first).

    Returns the values ``(P, coarse_n + 1, d)`` and the divergence steps.
    """
    coarse_n = table.coarse_n
    incs = {w: table.values(w) for w in scheme.words}
    P = next(iter(incs.values())).shape[0]
    y = np.broadcast_to(np.asarray(y0, float), (P, oracle.d)).copy()
    values = np.full((P, coarse_n + 1, oracle.d), np.nan)
    values[:, 0] = y
    diverged_at = np.full(P, -1)
    alive = np.ones(P, bool)
    for k in range(coarse_n):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            new = _advance(oracle, scheme, y[idx], {w: v[idx, k] for w, v in incs.items()})
            bad = ~np.isfinite(new).all(axis=1) | (np.abs(new).max(axis=1) > bound)
        if bad.any():
            lost = idx[bad]
            diverged_at[lost] = k
            alive[lost] = False
        good = idx[~bad]
        y[good] = new[~bad]
        values[good, k + 1] = new[~bad]
    return values, diverged_at


def _hurst_of(samples_or_signal, hurst: ExponentVector | None) -> ExponentVector:
    if hurst is not None:
        return hurst
    if isinstance(samples_or_signal, DrivingSignal):
        return samples_or_signal.spec.exponents
    raise SchemeConfigError("exponents are required for raw samples")


def solve_batch(oracle: VectorField, config: SchemeConfig, samples: np.ndarray, y0,
                hurst: ExponentVector, T: float = 1.0) -> BatchResult:
    """Solve ``config`` on samples of shape ``(P, m, n_fine + 1)``."""
    samples = np.asarray(samples, float)
    if samples.shape[-2] != oracle.m:
        raise SchemeConfigError(f"field has {oracle.m} driver letters, signal has {samples.shape[-2]}")
    n_fine = samples.shape[-1] - 1
    refine = config.refine_factor or _stride(n_fine, config.coarse_n)
    _stride(n_fine, config.coarse_n * refine)
    h = T / config.coarse_n
    scheme = resolve(config, hurst, h)
    table = step_table(samples, config.coarse_n, refine, scheme.depth)
    values, div = run_scheme(oracle, scheme, table, y0)
    return BatchResult(values, div, np.linspace(0.0, T, config.coarse_n + 1))


def _solve_one(oracle: VectorField, config: SchemeConfig, signal: DrivingSignal, y0,
               hurst: ExponentVector | None, strict: bool) -> SolveResult:
    hurst = _hurst_of(signal, hurst)
    T = signal.spec.T
    batch = solve_batch(oracle, config, signal.samples[None], y0, hurst, T)
    div = int(batch.diverged_at[0])
    interp = None
    if config.interpolate_in_step:
        interp = _make_interpolant(oracle, config, signal, hurst, batch.values[0])
    result = SolveResult(batch.values[0], batch.times, config,
                         {"signal": signal.spec.to_json(), "path_index": signal.path_index,
                          "config": config.to_json()},
                         None if div < 0 else div, interp)
    if result.diverged:
        if strict:
            raise TrajectoryDiverged(result)
        log.warning("trajectory diverged at step %d", div)
    return result


def _make_interpolant(oracle, config, signal, hurst, values):
    n_fine, T, coarse_n = signal.spec.n_fine, signal.spec.T, config.coarse_n
    refine = config.refine_factor or _stride(n_fine, coarse_n)
    sub = _stride(n_fine, coarse_n * refine)
    h = T / coarse_n

    def evaluate(t):
        t_arr = np.atleast_1d(np.asarray(t, float))
        out = np.empty((t_arr.size, oracle.d))
        for q, tq in enumerate(t_arr):
            pos = tq / T * coarse_n * refine
            j = int(round(pos))
            if abs(pos - j) > 1e-9 or not 0 <= j <= coarse_n * refine:
                raise ValueError(f"t={tq} is not on the in-step grid")
            k, rem = divmod(j, refine)
            if rem == 0:
                out[q] = values[k]
                continue
            scheme = resolve(config, hurst, tq - k * h)
            piece = signal.samples[:, k * refine * sub:(k * refine + rem) * sub + 1]
            table = step_table(piece[None], 1, rem, scheme.depth)
            vals, _ = run_scheme(oracle, scheme, table, values[k])
            out[q] = vals[0, 1]
        return out if np.ndim(t) else out[0]

    return evaluate


def solve_incomplete(oracle: VectorField, index_set: IndexSet, signal: DrivingSignal, y0,
                     config: SchemeConfig | None = None, *, coarse_n: int | None = None,
                     strict: bool = False) -> SolveResult:
    """The incomplete Taylor scheme over ``index_set``."""
    base = config or SchemeConfig("incomplete", coarse_n or signal.spec.n_fine, index_set=index_set)
    return _solve_one(oracle, base.with_(kind="incomplete", index_set=index_set),
                      signal, y0, None, strict)


def solve_modified(oracle: VectorField, set_rho: IndexSet, correction_set: IndexSet,
                   hurst: ExponentVector | None, signal: DrivingSignal, y0,
                   config: SchemeConfig | None = None, *, coarse_n: int | None = None,
                   strict: bool = False) -> SolveResult:
    """Incomplete scheme over ``set_rho`` plus moment corrections."""
    base = config or SchemeConfig("modified", coarse_n or signal.spec.n_fine,
                                  index_set=set_rho, correction_set=correction_set)
    cfg = base.with_(kind="modified", index_set=set_rho, correction_set=correction_set, rho=None)
    return _solve_one(oracle, cfg, signal, y0, hurst, strict)


def solve_named(kind: str, oracle: VectorField, signal: DrivingSignal, y0,
                config: SchemeConfig | None = None, *, coarse_n: int | None = None,
                strict: bool = False) -> SolveResult:
    """Euler, Milstein or modified Euler."""
    kind = kind.lower()
    if kind not in ("euler", "milstein", "modified_euler"):
        raise SchemeConfigError(f"{kind!r} is not a named scheme")
    exps = signal.spec.exponents
    index_set, corrections = named_sets(kind, exps)
    base = config or SchemeConfig(kind, coarse_n or signal.spec.n_fine)
    if corrections is None:
        return solve_incomplete(oracle, index_set, signal, y0, base, strict=strict)
    return solve_modified(oracle, index_set, corrections, exps, signal, y0, base, strict=strict)


def solve(oracle: VectorField, config: SchemeConfig, signal: DrivingSignal, y0,
          hurst: ExponentVector | None = None, strict: bool = False) -> SolveResult:
    """Dispatch on ``config.kind``."""
    return _solve_one(oracle, config, signal, y0, hurst, strict)


def reference_solution(oracle: VectorField, signal: DrivingSignal, y0, ref_n: int,
                       N: int = 3, strict: bool = False) -> SolveResult:
    """Complete Taylor scheme of order ``N`` on a fine grid."""
    _stride(signal.spec.n_fine, ref_n)
    return _solve_one(oracle, SchemeConfig("complete_taylor", ref_n, N=N), signal, y0, None, strict)


def reference_batch(oracle: VectorField, samples: np.ndarray, y0, hurst: ExponentVector,
                    ref_n: int, N: int = 3, T: float = 1.0) -> BatchResult:
    return solve_batch(oracle, SchemeConfig("complete_taylor", ref_n, N=N), samples, y0, hurst, T)


def restrict(values: np.ndarray, coarse_n: int) -> np.ndarray:
    """Values of a fine solution ``(..., ref_n + 1, d)`` at a coarser grid."""
    return values[..., ::_stride(values.shape[-2] - 1, coarse_n), :]


def trajectory_rows(times: Sequence[float], values: np.ndarray) -> list[list[float]]:
    return [[float(t)] + [float(v) for v in row] for t, row in zip(times, values)]
