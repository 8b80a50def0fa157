"""Empirical convergence-rate experiments and their reports."""

from __future__ import annotations

import csv
import datetime
import hashlib
import io
import json
import math
import os
import platform
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
import scipy
from scipy import stats

from . import __version__
from .integrals import MomentSpec, d_gamma, simplex_sums
from .multiindex import (ExponentVector, IndexSet, Word, parity_ok, r_prime, rho_of, theta_of)
from .schemes import (SchemeConfig, modified_sets, named_sets, reference_batch, restrict,
                      solve_batch)
from .signal import SignalSpec, sample_components
from .vectorfield import VectorField, load_field

ExperimentKind = Literal["as", "lp", "nu", "omega"]
CHUNK = 2000


class InsufficientLadder(ValueError):
    """The plan cannot support a slope fit or a moment claim."""


# ---------------------------------------------------------------------------
# slope fitting


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    ci: float
    loglog: float | None = None


def fit_slope(n_values: Sequence[int], errors: Sequence[float], stderr: Sequence[float] | None = None,
              log_correction: bool = False, level: float = 0.95) -> SlopeFit:
    """Least squares of ``log error`` on ``log n`` (and ``log log n`` if asked).

    The half-width combines the regression residual with Monte Carlo errors
    of the points, propagated through the fit as independent noise.
    """
    n = np.asarray(n_values, float)
    e = np.asarray(errors, float)
    if n.size < 4:
        raise InsufficientLadder("insufficient ladder: need at least 4 n values")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise InsufficientLadder("errors must be positive and finite to fit a slope")
    cols = [np.ones_like(n), np.log(n)]
    if log_correction:
        cols.append(np.log(np.log(n)))
    X = np.stack(cols, axis=1)
    y = np.log(e)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = n.size - X.shape[1]
    XtX_inv = np.linalg.inv(X.T @ X)
    var = np.zeros(X.shape[1])
    if dof > 0:
        var += XtX_inv.diagonal() * (resid @ resid) / dof
    if stderr is not None:
        sig = np.asarray(stderr, float) / e
        A = XtX_inv @ X.T
        var += (A ** 2) @ sig ** 2
    q = stats.t.ppf(0.5 + level / 2, max(dof, 1))
    return SlopeFit(float(coef[1]), float(coef[0]), float(q * math.sqrt(var[1])),
                    float(coef[2]) if log_correction else None)


# ---------------------------------------------------------------------------
# plans and reports


@dataclass(frozen=True)
class ExperimentPlan:
    """A rate experiment.  ``scheme`` is a :class:`SchemeConfig` document
    without ``coarse_n``; ``model`` is a field document for ``load_field``."""

    name: str
    kind: ExperimentKind
    hurst: tuple[float, ...]
    n_values: tuple[int, ...]
    paths: int
    seed: int = 0
    time: bool = False
    model: dict | None = None
    scheme: dict | None = None
    y0: tuple[float, ...] = (1.0,)
    ref_n: int | None = None
    reference_N: int = 3
    refine_factor: int | None = None
    p: float = 2.0
    delta_reg: float = 0.02
    alpha: tuple[int, ...] | None = None
    tolerance: float = 0.1
    T: float = 1.0

    def __post_init__(self) -> None:
        for key in ("hurst", "n_values", "y0"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))
        if self.kind not in ("as", "lp", "nu", "omega"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ValueError("n_values must be strictly increasing")
        if self.kind in ("as", "lp") and (self.model is None or self.scheme is None):
            raise ValueError("solver experiments need a model and a scheme")
        if self.kind in ("nu", "omega") and self.alpha is None:
            raise ValueError("scaling experiments need alpha")

    @property
    def exponents(self) -> ExponentVector:
        return ExponentVector(self.hurst, "hurst")

    @property
    def n_fine(self) -> int:
        top = max(self.n_values)
        return max(top, self.ref_n or 0)

    def signal_spec(self) -> SignalSpec:
        return SignalSpec(len(self.hurst), self.hurst, self.T, self.n_fine, self.seed, self.time)

    def to_json(self) -> dict:
        doc = asdict(self)
        for key in ("hurst", "n_values", "y0"):
            doc[key] = list(doc[key])
        if doc["alpha"] is not None:
            doc["alpha"] = list(doc["alpha"])
        return doc

    @classmethod
    def from_json(cls, doc: dict | str) -> "ExperimentPlan":
        if isinstance(doc, str):
            doc = json.loads(doc)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown plan fields {sorted(unknown)}")
        return cls(**doc)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class RateReport:
    name: str
    kind: ExperimentKind
    n_values: tuple[int, ...]
    table: tuple[dict, ...]
    slope: float
    ci: float
    theory: float
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if abs(self.slope - self.theory) <= self.tolerance else "fail"

    def summary(self) -> dict:
        return {"name": self.name, "kind": self.kind, "slope": self.slope, "ci": self.ci,
                "theory": self.theory, "tolerance": self.tolerance, "verdict": self.verdict,
                "n_values": list(self.n_values), "extra": self.extra}


# ---------------------------------------------------------------------------
# deterministic parallel map


def default_threads() -> int:
    env = os.environ.get("ROUGH_TAYLOR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def chunked_map(fn: Callable[[range], np.ndarray], total: int, threads: int | None = None,
                chunk: int = CHUNK) -> np.ndarray:
    """Apply ``fn`` to fixed path chunks and concatenate in chunk order.

    Chunk boundaries do not depend on the worker count, so results are
    identical for any ``threads``.
    """
    chunks = [range(a, min(total, a + chunk)) for a in range(0, total, chunk)]
    threads = threads or default_threads()
    if threads <= 1 or len(chunks) <= 1:
        parts = [fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# theory columns


def _fbm_hurst(word: Sequence[int], exps: ExponentVector) -> float:
    return max((exps[a] for a in word if not exps.is_time(a)), default=1.0)


def sigma_adjustment(H: float) -> tuple[float, bool]:
    """Extra exponent gained by moment corrections, and whether a
    ``sqrt(log n)`` factor is present."""
    if abs(H - 0.75) < 1e-12:
        return 0.5, True
    return (0.5, False) if H < 0.75 else (2.0 - 2.0 * H, False)


def scheme_sets(scheme: SchemeConfig, exps: ExponentVector) -> tuple[IndexSet, IndexSet | None]:
    m = exps.m
    if scheme.kind == "complete_taylor":
        return IndexSet.complete(scheme.N, m), None
    if scheme.kind == "incomplete":
        return scheme.index_set, None
    if scheme.kind == "modified":
        if scheme.index_set is not None:
            return scheme.index_set, scheme.correction_set
        return modified_sets(scheme.rho, exps)
    return named_sets(scheme.kind, exps)


def holder_exponents(exps: ExponentVector, delta_reg: float) -> ExponentVector:
    vals = [1.0 if exps.is_time(j + 1) else h - delta_reg for j, h in enumerate(exps.values)]
    return ExponentVector(vals, "holder")


def theory_as(scheme: SchemeConfig, exps: ExponentVector, delta_reg: float) -> float:
    index_set, _ = scheme_sets(scheme, exps)
    return -theta_of(index_set, holder_exponents(exps, delta_reg))


def theory_lp(scheme: SchemeConfig, exps: ExponentVector) -> tuple[float, bool]:
    index_set, corrections = scheme_sets(scheme, exps)
    rho = rho_of(index_set, exps)
    if corrections is None:
        return -rho, False
    H = max((h for j, h in enumerate(exps.values) if not exps.is_time(j + 1)), default=0.5)
    extra, log_factor = sigma_adjustment(H)
    return -(rho + extra), log_factor


def theory_nu(alpha: Word, exps: ExponentVector) -> float:
    H_alpha = exps.weight(alpha)
    if r_prime(alpha, exps) % 2 == 0:
        return -(H_alpha - 1.0)
    return -(H_alpha - _fbm_hurst(alpha, exps))


def theory_omega(alpha: Word, exps: ExponentVector) -> tuple[float, bool]:
    H_alpha = exps.weight(alpha)
    H = _fbm_hurst(alpha, exps)
    if H < 0.75 - 1e-12:
        return -(H_alpha - 0.5), False
    if H <= 0.75 + 1e-12:
        return -(H_alpha - 0.5), True
    return -(H_alpha + 1.0 - 2.0 * H), False


# ---------------------------------------------------------------------------
# experiments


def _scheme_config(plan: ExperimentPlan, n: int) -> SchemeConfig:
    doc = dict(plan.scheme)
    doc["coarse_n"] = n
    if plan.refine_factor is not None:
        doc.setdefault("refine_factor", plan.refine_factor)
    return SchemeConfig.from_json(doc)


def _check_ladder(plan: ExperimentPlan, needs_moments: bool) -> None:
    if len(plan.n_values) < 4:
        raise InsufficientLadder("insufficient ladder: need at least 4 n values")
    if needs_moments and plan.paths < 30:
        raise InsufficientLadder("L_p claims need at least 30 paths")
    for n in plan.n_values:
        if plan.n_fine % n:
            raise InsufficientLadder(f"n={n} does not divide the fine grid {plan.n_fine}")
    if plan.kind in ("as", "lp"):
        if plan.ref_n is None or plan.ref_n < 8 * max(plan.n_values):
            raise InsufficientLadder("reference grid must be at least 8x the largest n")


def _solver_errors(plan: ExperimentPlan, oracle: VectorField, threads: int | None,
                   reference_N: int) -> dict[str, np.ndarray]:
    """Per path: sup-grid and terminal errors for every n, plus divergence flags."""
    spec = plan.signal_spec()
    exps = plan.exponents
    configs = [_scheme_config(plan, n) for n in plan.n_values]
    N_n = len(plan.n_values)

    def work(paths: range) -> np.ndarray:
        samples = sample_components(spec, paths)
        ref = reference_batch(oracle, samples, plan.y0, exps, plan.ref_n, reference_N, plan.T)
        out = np.full((len(paths), 2 * N_n + 1), np.nan)
        bad = ref.diverged.copy()
        for q, (n, cfg) in enumerate(zip(plan.n_values, configs)):
            res = solve_batch(oracle, cfg, samples, plan.y0, exps, plan.T)
            bad |= res.diverged
            diff = np.linalg.norm(res.values - restrict(ref.values, n), axis=-1)
            out[:, q] = diff.max(axis=1)
            out[:, N_n + q] = diff[:, -1]
        out[:, -1] = bad
        return out

    data = chunked_map(work, plan.paths, threads, chunk=min(CHUNK, 250))
    return {"sup": data[:, :N_n], "terminal": data[:, N_n:2 * N_n], "excluded": data[:, -1] > 0}


def as_rate_experiment(plan: ExperimentPlan, oracle: VectorField | None = None,
                       threads: int | None = None) -> RateReport:
    """Median over paths of the slope of the sup-grid error."""
    _check_ladder(plan, needs_moments=False)
    oracle = oracle or load_field(plan.model)
    errs = _solver_errors(plan, oracle, threads, plan.reference_N)
    keep = ~errs["excluded"] & np.all(errs["sup"] > 0, axis=1)
    sup = errs["sup"][keep]
    if sup.shape[0] == 0:
        raise InsufficientLadder("every path diverged or had zero error")
    logn = np.log(np.asarray(plan.n_values, float))
    slopes = np.polyfit(logn, np.log(sup).T, 1)[0]
    q25, med, q75 = np.quantile(slopes, [0.25, 0.5, 0.75])
    theory = theory_as(_scheme_config(plan, plan.n_values[0]), plan.exponents, plan.delta_reg)
    table = tuple({"n": n, "median_error": float(np.median(sup[:, q])),
                   "q25_error": float(np.quantile(sup[:, q], 0.25)),
                   "q75_error": float(np.quantile(sup[:, q], 0.75))}
                  for q, n in enumerate(plan.n_values))
    ci = float(1.96 * 1.2533 * slopes.std(ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else math.inf
    return RateReport(plan.name, "as", plan.n_values, table, float(med), ci, theory, plan.tolerance,
                      {"slope_q25": float(q25), "slope_q75": float(q75),
                       "excluded_paths": int((~keep).sum()), "delta_reg": plan.delta_reg})


def lp_rate_experiment(plan: ExperimentPlan, oracle: VectorField | None = None,
                       threads: int | None = None, reference_check: bool = True) -> RateReport:
    """Slope of ``(E|y_T - y^n_T|^p)^{1/p}`` against ``n``."""
    _check_ladder(plan, needs_moments=True)
    oracle = oracle or load_field(plan.model)
    errs = _solver_errors(plan, oracle, threads, plan.reference_N)
    keep = ~errs["excluded"]
    term = errs["terminal"][keep]
    if term.shape[0] < 2:
        raise InsufficientLadder("too few non-diverged paths")
    p = plan.p
    moment = (term ** p).mean(axis=0)
    se_moment = (term ** p).std(axis=0, ddof=1) / math.sqrt(term.shape[0])
    lp = moment ** (1 / p)
    se = lp * se_moment / (p * moment)
    scheme = _scheme_config(plan, plan.n_values[0])
    theory, log_factor = theory_lp(scheme, plan.exponents)
    fit = fit_slope(plan.n_values, lp, se, log_correction=log_factor)
    extra = {"excluded_paths": int((~keep).sum()), "p": p}
    if fit.loglog is not None:
        extra["loglog_coefficient"] = fit.loglog
    if reference_check and plan.reference_N > 1:
        alt = _solver_errors(plan, oracle, threads, plan.reference_N - 1)["terminal"][keep]
        alt_lp = ((alt ** p).mean(axis=0)) ** (1 / p)
        extra["reference_sensitivity"] = float(np.max(np.abs(alt_lp - lp) / lp))
    table = tuple({"n": n, "lp_error": float(lp[q]), "stderr": float(se[q])}
                  for q, n in enumerate(plan.n_values))
    return RateReport(plan.name, "lp", plan.n_values, table, fit.slope, fit.ci, theory,
                      plan.tolerance, extra)


def _simplex_l2(plan: ExperimentPlan, center: bool, threads: int | None) -> tuple[np.ndarray, np.ndarray]:
    spec = plan.signal_spec()
    alpha = plan.alpha
    exps = plan.exponents
    means = [d_gamma(MomentSpec(alpha, exps), plan.T / n) * n if center else 0.0 for n in plan.n_values]

    def work(paths: range) -> np.ndarray:
        samples = sample_components(spec, paths)
        return np.stack([simplex_sums(samples, alpha, n, spec.n_fine // n) - mu
                         for n, mu in zip(plan.n_values, means)], axis=1)

    sums = chunked_map(work, plan.paths, threads)
    sq = sums ** 2
    l2 = np.sqrt(sq.mean(axis=0))
    se = sq.std(axis=0, ddof=1) / math.sqrt(plan.paths) / (2 * l2)
    return l2, se


def nu_scaling_experiment(plan: ExperimentPlan, threads: int | None = None) -> RateReport:
    """L2 norm of the raw simplex sum of ``alpha``."""
    _check_ladder(plan, needs_moments=True)
    l2, se = _simplex_l2(plan, center=False, threads=threads)
    fit = fit_slope(plan.n_values, l2, se)
    theory = theory_nu(plan.alpha, plan.exponents)
    table = tuple({"n": n, "l2": float(l2[q]), "stderr": float(se[q])} for q, n in enumerate(plan.n_values))
    return RateReport(plan.name, "nu", plan.n_values, table, fit.slope, fit.ci, theory, plan.tolerance)


def omega_scaling_experiment(plan: ExperimentPlan, threads: int | None = None) -> RateReport:
    """L2 norm of the simplex sum of ``alpha`` centred by its mean."""
    if not parity_ok(plan.alpha, plan.exponents):
        raise ValueError(f"alpha={plan.alpha} has an odd count of some fBm letter")
    _check_ladder(plan, needs_moments=True)
    l2, se = _simplex_l2(plan, center=True, threads=threads)
    theory, log_factor = theory_omega(plan.alpha, plan.exponents)
    fit = fit_slope(plan.n_values, l2, se, log_correction=log_factor)
    extra = {} if fit.loglog is None else {"loglog_coefficient": fit.loglog}
    table = tuple({"n": n, "l2": float(l2[q]), "stderr": float(se[q])} for q, n in enumerate(plan.n_values))
    return RateReport(plan.name, "omega", plan.n_values, table, fit.slope, fit.ci, theory,
                      plan.tolerance, extra)


def run_plan(plan: ExperimentPlan, threads: int | None = None) -> RateReport:
    if plan.kind == "as":
        return as_rate_experiment(plan, threads=threads)
    if plan.kind == "lp":
        return lp_rate_experiment(plan, threads=threads)
    if plan.kind == "nu":
        return nu_scaling_experiment(plan, threads=threads)
    return omega_scaling_experiment(plan, threads=threads)


# ---------------------------------------------------------------------------
# output


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(header)
    out.writerows(rows)
    return buf.getvalue()


def manifest(config: dict, seed: int, outputs: Sequence[str]) -> dict:
    return {"config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
            "seed": seed, "version": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(),
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": list(outputs), "config": config}


def emit_report(report: RateReport, out_dir: str | Path, plan: ExperimentPlan | None = None) -> dict[str, Path]:
    """Write ``<name>.csv``, ``<name>.json`` and ``plotdata.csv`` (long format)
    plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = report.name
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json",
             "plotdata": out / "plotdata.csv", "manifest": out / "manifest.json"}
    config = plan.to_json() if plan is not None else {"name": report.name}
    man = manifest(config, plan.seed if plan else 0, [p.name for k, p in paths.items() if k != "manifest"])
    _atomic_write(paths["manifest"], json.dumps(man, indent=2, sort_keys=True) + "\n")
    columns = list(report.table[0]) if report.table else ["n"]
    _atomic_write(paths["csv"], _csv_text(columns, [[row[c] for c in columns] for row in report.table]))
    doc = report.summary()
    doc["table"] = list(report.table)
    doc["manifest"] = paths["manifest"].name
    _atomic_write(paths["json"], json.dumps(doc, indent=2, sort_keys=True) + "\n")
    long_rows = [[stem, c, row["n"], row[c]] for row in report.table for c in columns if c != "n"]
    fit_rows = [[stem, "fit", n, math.exp(math.log(report.table[0][columns[1]]) + report.slope
                                         * math.log(n / report.n_values[0]))]
                for n in report.n_values] if len(columns) > 1 else []
    plot = paths["plotdata"]
    existing = plot.read_text().splitlines()[1:] if plot.exists() else []
    existing = [line for line in existing if not line.startswith(f"{stem},")]
    text = _csv_text(["series", "quantity", "n", "value"], long_rows + fit_rows)
    _atomic_write(plot, "\n".join([text.rstrip("\n")] + existing) + "\n")
    return paths


def load_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# built-in plans

BUILTIN_PLANS: dict[str, dict] = {
    "euler_h07": {
        "name": "euler_h07", "kind": "lp", "hurst": [0.7], "n_values": [64, 128, 256, 512, 1024, 2048],
        "paths": 100, "model": {"name": "sine_field"}, "scheme": {"kind": "euler"},
        "ref_n": 16384, "y0": [1.0], "tolerance": 0.1,
    },
    "modified_euler_h07": {
        "name": "modified_euler_h07", "kind": "lp", "hurst": [0.7],
        "n_values": [64, 128, 256, 512, 1024, 2048], "paths": 100,
        "model": {"name": "sine_field"}, "scheme": {"kind": "modified_euler"},
        "ref_n": 16384, "y0": [1.0], "tolerance": 0.1,
    },
}


def builtin_plan(name: str, **overrides) -> ExperimentPlan:
    try:
        doc = dict(BUILTIN_PLANS[name])
    except KeyError:
        raise ValueError(f"unknown built-in plan {name!r}; choose from {sorted(BUILTIN_PLANS)}") from None
    doc.update(overrides)
    return ExperimentPlan.from_json(doc)
