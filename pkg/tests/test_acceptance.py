"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import math

import numpy as np
import pytest
from numpy.polynomial.polynomial import polyval

from roughtaylor.checks import (duality_suite, expansion_suite, leibniz_suite,
                                path_identity_suite, shuffle_count_suite)
from roughtaylor.integrals import MomentSpec, PolynomialPath, d_gamma, d_gamma_monte_carlo
from roughtaylor.multiindex import (ExponentVector, IndexSet, gamma_rho, gamma_theta, rho_of,
                                    theta_of)
from roughtaylor.rates import ExperimentPlan, run_plan
from roughtaylor.schemes import SchemeConfig, solve_incomplete, solve_modified, solve_named
from roughtaylor.signal import SignalSpec, build_signal
from roughtaylor.vectorfield import sine_field

LADDER = [2 ** k for k in range(6, 12)]


@pytest.fixture
def say(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def _checks_line(results):
    return ", ".join(f"{r.name} worst={r.worst:.2e} ({r.cases} cases)" for r in results)


def test_criterion_01_duality(say):
    res = duality_suite(6)
    assert say(1, res.passed, f"{res.cases} pairs, {res.extra['empty_pairs']} jointly empty")


def test_criterion_02_shuffle_counts(say):
    res = shuffle_count_suite(10)
    assert say(2, res.passed, f"{res.cases} word pairs")


def test_criterion_03_leibniz_and_expansion(say):
    results = [leibniz_suite(200), expansion_suite(200)]
    assert say(3, all(r.passed for r in results), _checks_line(results))


def test_criterion_04_path_identities(say):
    results = path_identity_suite(200)
    assert say(4, all(r.passed for r in results), _checks_line(results))


def test_criterion_05_moments(say):
    H, t = 0.7, 0.6
    e = ExponentVector((H,))
    closed = d_gamma(MomentSpec((1, 1), e, "closed_form"), t)
    exact = closed == 0.5 * t ** (2 * H)
    mean, se = d_gamma_monte_carlo(MomentSpec((1, 1), e, samples=20000, refine_factor=64), t)
    mc_ok = abs(mean - 0.5 * t ** (2 * H)) <= 3 * se
    e3 = ExponentVector((1.0, H, H))
    parity = all(d_gamma(MomentSpec(w, e3), t) == 0.0 for w in [(2,), (2, 3), (1, 2, 2, 2), (3, 1, 2)])
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        coeffs = rng.uniform(-1, 1, 5)
        path = PolynomialPath.from_coefficients([coeffs])
        s, u = sorted(rng.uniform(0, 1, 2))
        dx = float(polyval(u, coeffs) - polyval(s, coeffs))
        for r in range(1, 6):
            worst = max(worst, abs(path.integral((1,) * r, s, u) - dx ** r / math.factorial(r)))
    ok = exact and mc_ok and parity and worst <= 1e-6
    assert say(5, ok, f"closed form exact={exact}, MC {mean:.5f}+-{se:.5f}, parity zero={parity}, "
                      f"power rule worst={worst:.1e}")


def _rate_line(report):
    return (f"slope {report.slope:.4f} +- {report.ci:.4f} vs theory {report.theory:.4f} "
            f"(tol {report.tolerance})")


def _scaling_plan(kind, H, tolerance):
    return ExperimentPlan(f"{kind}_{H}", kind, (H,), LADDER, paths=10_000, alpha=(1, 1), tolerance=tolerance)


def test_criterion_06_nu_scaling(say):
    report = run_plan(_scaling_plan("nu", 0.65, 0.05))
    assert report.theory == pytest.approx(-0.3)
    assert say(6, report.verdict == "pass", _rate_line(report))


def test_criterion_07_omega_scaling(say):
    reports = [run_plan(_scaling_plan("omega", H, 0.07)) for H in (0.65, 0.85)]
    assert [r.theory for r in reports] == pytest.approx([-0.8, -1.0])
    ok = all(r.verdict == "pass" for r in reports)
    assert say(7, ok, "; ".join(f"H={H}: {_rate_line(r)}" for H, r in zip((0.65, 0.85), reports)))


def _solver_plan(name, H, scheme, paths, ref_n, tolerance, kind="lp"):
    return ExperimentPlan(name, kind, (H,), LADDER, paths=paths, model={"name": "sine_field"},
                          scheme=scheme, ref_n=ref_n, tolerance=tolerance)


def test_criterion_08_euler_rate(say):
    report = run_plan(_solver_plan("euler", 0.7, {"kind": "euler"}, 200, 2 ** 14, 0.1))
    assert report.theory == pytest.approx(-0.4)
    assert say(8, report.verdict == "pass", _rate_line(report))


def test_criterion_09_modified_euler_rates(say):
    reports = [run_plan(_solver_plan(f"modified_euler_{H}", H, {"kind": "modified_euler"}, 200, 2 ** 14, 0.1))
               for H in (0.7, 0.8)]
    assert [r.theory for r in reports] == pytest.approx([-0.9, -1.0])
    ok = all(r.verdict == "pass" for r in reports)
    assert say(9, ok, "; ".join(f"H={H}: {_rate_line(r)}" for H, r in zip((0.7, 0.8), reports)))


def test_criterion_10_scalar_taylor_family(say):
    reports = [run_plan(_solver_plan(f"taylor_{N}", 0.7, {"kind": "complete_taylor", "N": N}, 100,
                                     2 ** 15, tol)) for N, tol in ((2, 0.15), (3, 0.2))]
    assert [r.theory for r in reports] == pytest.approx([-1.4, -1.8])
    ok = all(r.verdict == "pass" for r in reports)
    assert say(10, ok, "; ".join(f"N={N}: {_rate_line(r)}" for N, r in zip((2, 3), reports)))


def test_criterion_11_almost_sure_rate(say):
    plan = _solver_plan("taylor_as", 0.7, {"kind": "complete_taylor", "N": 2}, 100, 2 ** 14, 0.15, kind="as")
    report = run_plan(plan)
    beta = 0.7 - plan.delta_reg
    assert report.theory == pytest.approx(-(3 * beta - 1))
    detail = (f"{_rate_line(report)}, path slope IQR [{report.extra['slope_q25']:.3f}, "
              f"{report.extra['slope_q75']:.3f}]")
    assert say(11, report.verdict == "pass", detail)


def test_criterion_12_best_set_constructors(say):
    H, m, delta = 0.7, 3, 0.02
    exps = ExponentVector.uniform(H, m)
    holder = ExponentVector((H - delta,) * m, "holder")
    beta = H - delta
    euler = gamma_rho(2 * H - 1, exps, m) == IndexSet.euler(m)
    complete = all(gamma_theta((N + 1) * beta - 1, holder, m) == IndexSet.complete(N, m) for N in (1, 2, 3))
    scalar = ExponentVector((H,))
    round_trip = all(gamma_rho(rho_of(IndexSet.complete(N, 1), scalar), scalar, 1) == IndexSet.complete(N, 1)
                     and gamma_theta(theta_of(IndexSet.complete(N, m), holder), holder, m)
                     == IndexSet.complete(N, m) for N in (1, 2, 3))
    ok = euler and complete and round_trip
    assert say(12, ok, f"euler={euler} complete={complete} round_trip={round_trip}")


def test_criterion_13_named_scheme_equivalences(say):
    mismatches = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        spec = SignalSpec.uniform(0.7, 3, time=True, n_fine=256, seed=seed)
        sig = build_signal(spec)
        f = sine_field(d=2, m=3, A=rng.uniform(-1, 1, (3, 2, 2)))
        y0 = rng.uniform(-1, 1, 2)
        cfg = SchemeConfig("euler", 32)
        exps = spec.exponents
        fbm_pairs = IndexSet.of([(j, k) for j in (2, 3) for k in (2, 3)], 3)
        pairs = [
            (solve_named("euler", f, sig, y0, cfg), solve_incomplete(f, IndexSet.euler(3), sig, y0, cfg)),
            (solve_named("milstein", f, sig, y0, cfg),
             solve_incomplete(f, IndexSet.euler(3) | fbm_pairs, sig, y0, cfg)),
            (solve_named("modified_euler", f, sig, y0, cfg),
             solve_modified(f, IndexSet.euler(3), IndexSet.of([(2, 2), (3, 3)], 3), exps, sig, y0, cfg)),
        ]
        mismatches += sum(not np.array_equal(a.values, b.values) for a, b in pairs)
    assert say(13, mismatches == 0, f"{mismatches} mismatches over 20 paths x 3 schemes")
