"""Command-line frontend: ``roughtaylor {simulate,solve,rates,check}``."""

from __future__ import annotations

import argparse
import ast
import json
import logging
import operator
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .checks import SUITES, run_suite
from .multiindex import ExponentVector, IndexSet, gamma_rho, gamma_theta
from .rates import (BUILTIN_PLANS, ExperimentPlan, InsufficientLadder, _atomic_write,
                    builtin_plan, emit_report, manifest, run_plan)
from .schemes import SchemeConfig, solve
from .signal import DrivingSignal, SignalSpec, build_signals
from .vectorfield import load_field

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VERDICT = 0, 1, 2, 3, 4

log = logging.getLogger("roughtaylor")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.USub: operator.neg, ast.UAdd: operator.pos}


def rate_expression(text: float | str, H: float) -> float:
    """Evaluate a number or an arithmetic expression in ``H`` such as ``"2H-1"``."""
    if isinstance(text, (int, float)):
        return float(text)
    src = str(text).replace("−", "-")
    # implicit products like "2H" -> "2*H"
    out = []
    for i, ch in enumerate(src):
        if ch == "H" and i > 0 and (src[i - 1].isdigit() or src[i - 1] == "."):
            out.append("*")
        out.append(ch)
    tree = ast.parse("".join(out), mode="eval")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "H":
            return H
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        raise ConfigError(f"unsupported rate expression {text!r}")

    return ev(tree)


def _fbm_H(exps: ExponentVector) -> float:
    vals = [h for j, h in enumerate(exps.values) if not exps.is_time(j + 1)]
    if not vals:
        raise ConfigError("no fBm component to take H from")
    return max(vals)


def resolve_index_set(doc, exps: ExponentVector) -> IndexSet:
    """An index set from a member list or a ``gamma_rho`` / ``gamma_theta`` constructor."""
    m = exps.m
    if isinstance(doc, list):
        return IndexSet.of(doc, m)
    if "members" in doc:
        return IndexSet.from_json({"m": doc.get("m", m), "members": doc["members"]})
    if "gamma_rho" in doc:
        return gamma_rho(rate_expression(doc["gamma_rho"], _fbm_H(exps)), exps, m)
    if "gamma_theta" in doc:
        beta = float(doc.get("delta_reg", 0.02))
        holder = ExponentVector([1.0 if exps.is_time(j + 1) else h - beta
                                 for j, h in enumerate(exps.values)], "holder")
        return gamma_theta(rate_expression(doc["gamma_theta"], _fbm_H(exps)), holder, m)
    raise ConfigError(f"cannot build an index set from {doc!r}")


def scheme_from_doc(doc: dict, exps: ExponentVector) -> SchemeConfig:
    doc = dict(doc)
    for key in ("index_set", "correction_set"):
        if doc.get(key) is not None:
            doc[key] = resolve_index_set(doc[key], exps).to_json()
    if isinstance(doc.get("rho"), str):
        doc["rho"] = rate_expression(doc["rho"], _fbm_H(exps))
    return SchemeConfig.from_json(doc)


def _load_json(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, config: dict, seed: int, outputs: Sequence[str]) -> None:
    _atomic_write(out / "manifest.json", json.dumps(manifest(config, seed, outputs), indent=2,
                                                    sort_keys=True) + "\n")


def _threads(args) -> int | None:
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        return args.threads
    env = os.environ.get("ROUGH_TAYLOR_THREADS")
    return int(env) if env else None


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    doc = _load_json(args.config)
    paths = int(doc.pop("paths", 1))
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        spec = SignalSpec.from_json(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid signal spec: {exc}") from exc
    out = _out_dir(args)
    names = [f"path_{k:05d}.rtp" for k in range(paths)]
    _write_manifest(out, {**spec.to_json(), "paths": paths}, spec.seed, names)
    signals = build_signals(spec, paths)
    for name, sig in zip(names, signals):
        sig.save(out / name)
    terminal = np.array([s.samples[:, -1] for s in signals])
    print(json.dumps({"paths": paths, "files": names, "spec": spec.to_json(),
                      "terminal_mean": terminal.mean(axis=0).tolist(),
                      "terminal_std": terminal.std(axis=0).tolist()}, sort_keys=True))
    return EXIT_OK


def cmd_solve(args) -> int:
    doc = _load_json(args.config)
    try:
        oracle = load_field(doc["model"])
        if "path_files" in doc:
            signals = [DrivingSignal.load(p) for p in doc["path_files"]]
        else:
            sdoc = dict(doc["signal"])
            if args.seed is not None:
                sdoc["seed"] = args.seed
            signals = build_signals(SignalSpec.from_json(sdoc), int(doc.get("paths", 1)))
        exps = signals[0].spec.exponents
        scheme = scheme_from_doc(doc["scheme"], exps)
        y0 = np.asarray(doc.get("y0", [1.0] * oracle.d), float)
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args)
    names = [f"trajectory_{s.path_index:05d}.csv" for s in signals]
    _write_manifest(out, {**doc, "scheme": scheme.to_json()}, signals[0].spec.seed, names)
    diverged = []
    for name, sig in zip(names, signals):
        try:
            result = solve(oracle, scheme, sig, y0)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        result.to_csv(out / name)
        if result.diverged:
            diverged.append({"path": sig.path_index, "step": result.diverged_at})
            print(f"warning: path {sig.path_index} diverged at step {result.diverged_at}", file=sys.stderr)
    print(json.dumps({"files": names, "diverged": diverged}, sort_keys=True))
    if diverged and args.strict:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _plans_from(args) -> list[ExperimentPlan]:
    if args.plan:
        docs = [dict(BUILTIN_PLANS.get(name) or {"unknown": name}) for name in args.plan]
    else:
        doc = _load_json(args.config)
        docs = doc.get("plans", [doc]) if isinstance(doc, dict) else list(doc)
    plans = []
    for d in docs:
        if "unknown" in d:
            raise ConfigError(f"unknown built-in plan {d['unknown']!r}; choose from {sorted(BUILTIN_PLANS)}")
        if args.seed is not None:
            d["seed"] = args.seed
        try:
            plans.append(ExperimentPlan.from_json(d))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid plan: {exc}") from exc
    return plans


def cmd_rates(args) -> int:
    plans = _plans_from(args)
    out = _out_dir(args)
    threads = _threads(args)
    summaries = []
    for plan in plans:
        run_dir = out / plan.name
        try:
            report = run_plan(plan, threads=threads)
        except InsufficientLadder as exc:
            print(f"error: {plan.name}: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        emit_report(report, run_dir, plan)
        summaries.append(report.summary())
        print(f"{plan.name}: slope {report.slope:.4f} +- {report.ci:.4f}, "
              f"theory {report.theory:.4f}, {report.verdict}")
    print(json.dumps({"reports": summaries}, sort_keys=True))
    return EXIT_OK if all(s["verdict"] == "pass" for s in summaries) else EXIT_VERDICT


def cmd_check(args) -> int:
    suites = args.suite
    if suites not in SUITES + ("all",):
        raise ConfigError(f"unknown suite {suites!r}")
    results = run_suite(suites, cases=args.cases, seed=args.seed or 0)
    summary = {"suite": suites, "passed": all(r.passed for r in results),
               "results": [r.to_json() for r in results]}
    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = _out_dir(args)
        _write_manifest(out, {"suite": suites, "cases": args.cases}, args.seed or 0, ["check.json"])
        _atomic_write(out / "check.json", text + "\n")
    if not summary["passed"]:
        first = next(r for r in results if not r.passed)
        print(f"FAIL {first.name}: {first.counterexample}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="worker threads (default: ROUGH_TAYLOR_THREADS or all cores)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--strict", action="store_true", help="treat diverged paths as failures")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="roughtaylor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="sample driving signals to path files")
    sub.add_parser("solve", parents=[common], help="run a scheme and export trajectories")
    rates = sub.add_parser("rates", parents=[common], help="run convergence-rate experiments")
    rates.add_argument("--plan", action="append", help="built-in plan name (repeatable)")
    check = sub.add_parser("check", parents=[common], help="run property suites")
    check.add_argument("suite", nargs="?", default="all", help=f"one of {', '.join(SUITES)}, all")
    check.add_argument("--cases", type=int, default=200)
    return parser


COMMANDS = {"simulate": cmd_simulate, "solve": cmd_solve, "rates": cmd_rates, "check": cmd_check}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
