"""Acceptance gate: every stated reproduction target at its stated tolerance.

Each criterion prints a one-line PASS/FAIL verdict with the observed numbers,
bypassing pytest's capture so the verdicts always appear in the run log.

Criteria:
  1. uniform-rect convergence of the pressure-robust scheme at k=0 with
     published finest-level magnitudes,
  2. viscosity-robustness scalings at a fixed mesh,
  3. zero-flow balanced-force test on a hexagonal mesh,
  4. high-order rates on randomly deformed quadrilateral meshes,
  5. rate separation between the two schemes under a low-regularity pressure,
  6. the structural property suite.
"""

import time

import numpy as np

from polywg import analysis


def _verdict(record, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    record(line)
    return line


def _spread(values):
    lo, hi = min(values), max(values)
    return (hi - lo) / lo if lo > 0 else np.inf


def test_criterion_1_uniform_mesh_convergence(criterion_verdict):
    t0 = time.perf_counter()
    table = analysis.convergence_study("poly_bubble", "rect", 0, 1.0, "robust", [4, 8, 16, 32, 64])
    elapsed = time.perf_counter() - t0
    r_en = table.terminal_rate("err_energy")
    r_ul = table.terminal_rate("err_ul2")
    r_pl = table.terminal_rate("err_pl2")
    last = table.results[-1]
    mags = (last.err_energy, last.err_ul2, last.err_pl2)
    refs = (1.78e-2, 6.80e-5, 4.09e-4)
    rate_ok = abs(r_en - 1.0) <= 0.15 and abs(r_ul - 2.0) <= 0.15 and abs(r_pl - 2.0) <= 0.3
    mag_ok = all(0.5 <= got / ref <= 2.0 for got, ref in zip(mags, refs))
    time_ok = elapsed <= 120.0
    line = _verdict(
        criterion_verdict,
        1,
        rate_ok and mag_ok and time_ok,
        f"rect k=0 robust rates ({r_en:.2f}, {r_ul:.2f}, {r_pl:.2f}) vs (1.0, 2.0, 2.0); "
        f"finest errors ({mags[0]:.2e}, {mags[1]:.2e}, {mags[2]:.2e}) vs refs "
        f"({refs[0]:.2e}, {refs[1]:.2e}, {refs[2]:.2e}) within 2x; {elapsed:.0f}s (<=120s)",
    )
    assert rate_ok and mag_ok and time_ok, line


def test_criterion_2_viscosity_robustness(criterion_verdict):
    nus = [1.0, 1e-2, 1e-4]
    results, diag = analysis.robustness_study("poly_bubble", "rect", 16, 0, nus)
    en = [results[("robust", nu)].err_energy for nu in nus]
    ul = [results[("robust", nu)].err_ul2 for nu in nus]
    vel_ok = _spread(en) <= 1e-6 and _spread(ul) <= 1e-6
    press = diag["robust_pressure_errors"]
    p_ratios = [press[i] / press[i - 1] for i in range(1, len(nus))]
    p_ok = all(abs(r / 1e-2 - 1.0) <= 0.01 for r in p_ratios)
    std = diag["standard_energy_errors"]
    s_ratios = [std[i] / std[i - 1] for i in range(1, len(nus))]
    s_ok = all(abs(r / 1e2 - 1.0) <= 0.05 for r in s_ratios)
    line = _verdict(
        criterion_verdict,
        2,
        vel_ok and p_ok and s_ok,
        f"robust velocity-error spread across nu: {max(_spread(en), _spread(ul)):.1e} (<=1e-6); "
        f"robust pressure ratios {[f'{r:.4f}' for r in p_ratios]} vs 0.01 (1%); "
        f"standard energy ratios {[f'{r:.1f}' for r in s_ratios]} vs 100 (5%)",
    )
    assert vel_ok and p_ok and s_ok, line


def test_criterion_3_zero_flow(criterion_verdict):
    t0 = time.perf_counter()
    disc = analysis.discretize(analysis.make_mesh("hex", 3), 0)  # ~20 cells across
    norms = {}
    for scheme in ("robust", "standard"):
        res = analysis.run_case("zero_flow", disc, 1e-2, scheme, keep_solution=True)
        total = 0.0
        for ci, cs in enumerate(disc.spaces):
            u0 = res.solution.u0[ci]
            total += u0[0] @ cs.M_P @ u0[0] + u0[1] @ cs.M_P @ u0[1]
        norms[scheme] = float(np.sqrt(total))
    elapsed = time.perf_counter() - t0
    ok = norms["robust"] <= 1e-10 and norms["standard"] >= 1e-4 and elapsed <= 30.0
    line = _verdict(
        criterion_verdict,
        3,
        ok,
        f"balanced-force velocity norms: robust {norms['robust']:.2e} (<=1e-10), "
        f"standard {norms['standard']:.2e} (>=1e-4); {elapsed:.0f}s (<=30s)",
    )
    assert ok, line


def test_criterion_4_high_order_deformed(criterion_verdict):
    t0 = time.perf_counter()
    observed = {}
    for k in (1, 2):
        table = analysis.convergence_study(
            "trig", "deformed", k, 1e-2, "robust", [4, 8, 16, 32], seed=0, amplitude=0.3
        )
        observed[k] = tuple(table.terminal_rate(c) for c in ("err_energy", "err_ul2", "err_pl2"))
    elapsed = time.perf_counter() - t0
    ok = elapsed <= 300.0
    for k, rates in observed.items():
        expect = (k + 1.0, k + 2.0, k + 1.0)
        ok &= all(abs(r - e) <= 0.2 for r, e in zip(rates, expect))
    line = _verdict(
        criterion_verdict,
        4,
        ok,
        "deformed-mesh robust rates "
        + "; ".join(
            f"k={k}: ({rates[0]:.2f}, {rates[1]:.2f}, {rates[2]:.2f}) vs ({k + 1}, {k + 2}, {k + 1}) +-0.2"
            for k, rates in observed.items()
        )
        + f"; {elapsed:.0f}s (<=300s)",
    )
    assert ok, line


def test_criterion_5_low_regularity_pressure(criterion_verdict):
    runs = {"robust": [], "standard": []}
    for level in (2, 3, 4):
        disc = analysis.discretize(analysis.make_mesh("lshape", level), 2)
        for scheme in runs:
            runs[scheme].append(analysis.run_case("corner_singular", disc, 1e-2, scheme, level=level))
    tables = {scheme: analysis.RateTable(results) for scheme, results in runs.items()}
    rob_en = tables["robust"].terminal_rate("err_energy")
    std_en = tables["standard"].terminal_rate("err_energy")
    rob_pl = tables["robust"].terminal_rate("err_pl2")
    std_pl = tables["standard"].terminal_rate("err_pl2")
    ok = rob_en >= 2.7 and std_en <= 2.3 and rob_pl >= 2.6 and std_pl <= 2.2
    line = _verdict(
        criterion_verdict,
        5,
        ok,
        f"corner-singular k=2 energy rates: robust {rob_en:.2f} (>=2.7) vs standard {std_en:.2f} (<=2.3); "
        f"pressure rates: robust {rob_pl:.2f} (>=2.6) vs standard {std_pl:.2f} (<=2.2)",
    )
    assert ok, line


def test_criterion_6_property_suite(criterion_verdict):
    t0 = time.perf_counter()
    checks = analysis.property_suite(seed=0)
    elapsed = time.perf_counter() - t0
    failed = [c.name for c in checks if not c.passed]
    ok = not failed and elapsed <= 60.0
    line = _verdict(
        criterion_verdict,
        6,
        ok,
        f"{len(checks) - len(failed)}/{len(checks)} structural checks passed"
        + (f", failures: {failed}" if failed else "")
        + f"; {elapsed:.0f}s (<=60s)",
    )
    assert ok, line
