"""Acceptance criteria, one test (or a few) per criterion.

The Monte Carlo sweeps use 300 trials each; the M sweep up to 12 slots is
the slow part (on the order of 15 minutes on one core).
"""

import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ehsched.gbd import run_gbd
from ehsched.harness import ExperimentSpec, run_experiment
from ehsched.instance import default_scenario, sample_instance
from ehsched.master import build_cut
from ehsched.policies import (
    exhaustive_oracle,
    myopic_fullduplex,
    myopic_zhang,
    solve_relaxed,
    suboptimal_policy,
)
from ehsched.primal import lagrangian_value

TRIALS = 300
N_SMALL = 52
RESID_TOL = 1e-6
FLOAT_SLACK = 1e-9  # relative, for values computed along different arithmetic paths
ULP_SLACK = 1e-12  # L and U meet at convergence; they differ only by rounding


def bound_problems(trace, K, M):
    recs = trace.records
    out = []
    for a, b in zip(recs, recs[1:]):
        if b.upper > a.upper:
            out.append(f"U rose at iter {b.iteration}: {a.upper!r} -> {b.upper!r}")
        if b.lower < a.lower:
            out.append(f"L fell at iter {b.iteration}: {a.lower!r} -> {b.lower!r}")
    for r in recs:
        if r.lower > r.upper + ULP_SLACK * max(1.0, abs(r.upper)):
            out.append(f"L > U at iter {r.iteration}: {r.lower!r} > {r.upper!r}")
    if len(recs) > K**M:
        out.append(f"{len(recs)} iterations for {K**M} schedules")
    if not trace.converged:
        out.append("did not converge")
    return out


# --- small instances: K=2, M in {2,3,4,5} ----------------------------------


@pytest.fixture(scope="module")
def small():
    cases = []
    for s in range(N_SMALL):
        inst = sample_instance(default_scenario(M=2 + s % 4), s)
        cases.append(
            {
                "seed": s,
                "inst": inst,
                "gbd": {o: run_gbd(inst, o, keep_primals=True) for o in ("srm", "mrm")},
                "oracle": {o: exhaustive_oracle(inst, o) for o in ("srm", "mrm")},
                "relaxed": solve_relaxed(inst, "srm"),
                "suboptimal": suboptimal_policy(inst, "srm"),
                "zhang": myopic_zhang(inst, "srm"),
                "fullduplex": myopic_fullduplex(inst, "srm"),
            }
        )
    return cases


@pytest.mark.criterion(1)
@pytest.mark.parametrize("objective", ["srm", "mrm"])
def test_gbd_matches_oracle(small, objective, note):
    bad = []
    for c in small:
        g, o = c["gbd"][objective], c["oracle"][objective]
        zeta = 1e-5 * max(1.0, abs(g.trace.records[0].primal_value))
        tol = max(zeta, 1e-4 * abs(o.value))
        if abs(g.value - o.value) > tol:
            bad.append((c["seed"], g.value, o.value))
    note(1, f"{objective}: {len(small) - len(bad)}/{len(small)} instances within tolerance")
    assert not bad, bad


@pytest.mark.criterion(2)
def test_bounds_small(small, note):
    bad = []
    runs = 0
    for c in small:
        for o in ("srm", "mrm"):
            runs += 1
            issues = bound_problems(c["gbd"][o].trace, c["inst"].K, c["inst"].M)
            bad += [(c["seed"], o, i) for i in issues]
    note(2, f"small instances: {runs} runs, {len(bad)} problems")
    assert not bad, bad[:10]


@pytest.mark.criterion(3)
def test_kkt_and_cut_identity(small, note):
    worst = {"stationarity": 0.0, "slackness": 0.0, "feasibility": 0.0, "cut": 0.0, "lagrangian": 0.0}
    count = 0
    for c in small:
        inst = c["inst"]
        for o in ("srm", "mrm"):
            for sol in c["gbd"][o].trace.primal_solutions:
                count += 1
                for key in ("stationarity", "slackness", "feasibility"):
                    worst[key] = max(worst[key], sol.residuals[key])
                scale = max(1.0, abs(sol.value))
                cut = build_cut(inst, sol.W, sol)
                worst["cut"] = max(worst["cut"], abs(cut.evaluate(sol.W) - sol.value) / scale)
                lag = lagrangian_value(inst, sol.W, sol.P, sol.duals, sol.R_bar)
                worst["lagrangian"] = max(worst["lagrangian"], abs(lag - sol.value) / scale)
    note(3, f"{count} primal solutions, worst " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert count > 0
    assert all(v <= RESID_TOL for v in worst.values()), worst


@pytest.mark.criterion(4)
def test_dominance_chain(small, note):
    bad = []

    def check(seed, what, hi, lo, slack=FLOAT_SLACK):
        if hi < lo - slack * max(1.0, abs(lo)):
            bad.append((seed, what, hi, lo))

    for c in small:
        s = c["seed"]
        o_srm, o_mrm = c["oracle"]["srm"], c["oracle"]["mrm"]
        # the relaxation is solved by an interior-point method to ~1e-8
        check(s, "relaxed >= oracle", c["relaxed"].value, o_srm.value, slack=1e-6)
        for name in ("suboptimal", "zhang", "fullduplex"):
            check(s, f"oracle >= {name}", o_srm.value, c[name].value)
        check(s, "SRM sum >= MRM sum", o_srm.report.sum_rate, o_mrm.report.sum_rate)
        check(s, "MRM min >= SRM min", o_mrm.report.min_rate, o_srm.report.min_rate)
    note(4, f"{len(small)} instances, {len(bad)} violations" + (f": {bad}" if bad else ""))
    assert not bad, bad


# --- Monte Carlo sweeps ---------------------------------------------------


class BoundWatcher:
    def __init__(self):
        self.runs = 0
        self.problems = []

    def __call__(self, value, trial, policy, res):
        if res.trace is None:
            return
        self.runs += 1
        K, M = len(res.report.per_user_rate), res.P.shape[1]
        for issue in bound_problems(res.trace, K, M):
            self.problems.append((value, trial, policy, issue))


@pytest.fixture(scope="module")
def m_sweep():
    spec = ExperimentSpec(
        "M",
        tuple(range(4, 13)),
        scenario=default_scenario(),
        policies=("gbd-srm", "gbd-mrm", "myopic-zhang-srm", "myopic-fullduplex-srm"),
        trials=TRIALS,
        base_seed=2024,
    )
    watch = BoundWatcher()
    return run_experiment(spec, on_result=watch), watch


@pytest.fixture(scope="module")
def alpha_sweep():
    spec = ExperimentSpec(
        "alpha", (2.0, 3.0, 4.0), scenario=default_scenario(M=4), trials=TRIALS, base_seed=7
    )
    watch = BoundWatcher()
    return run_experiment(spec, on_result=watch), watch


@pytest.fixture(scope="module")
def eps_sweep():
    spec = ExperimentSpec(
        "epsilon", (0.0, 0.1, 0.2, 0.3), scenario=default_scenario(M=4), trials=TRIALS, base_seed=7
    )
    watch = BoundWatcher()
    return run_experiment(spec, on_result=watch), watch


@pytest.mark.criterion(2)
def test_bounds_in_sweeps(m_sweep, alpha_sweep, eps_sweep, note):
    runs = sum(w.runs for _, w in (m_sweep, alpha_sweep, eps_sweep))
    problems = [p for _, w in (m_sweep, alpha_sweep, eps_sweep) for p in w.problems]
    note(2, f"sweeps: {runs} runs, {len(problems)} problems")
    assert runs > 0
    assert not problems, problems[:10]


@pytest.mark.criterion(5)
def test_fairness_trend(m_sweep, note):
    table, _ = m_sweep
    lines = []
    for M in range(4, 13):
        srm, mrm = table.cell(M, "gbd-srm"), table.cell(M, "gbd-mrm")
        assert srm.failures == 0 and mrm.failures == 0
        lines.append(f"M={M}: F_srm={srm.mean_fairness:.3f} F_mrm={mrm.mean_fairness:.3f}")
    srm12, mrm12 = table.cell(12, "gbd-srm"), table.cell(12, "gbd-mrm")
    ratio_srm = srm12.mean_rates[0] / srm12.mean_rates[1]
    ratio_mrm = mrm12.mean_rates[0] / mrm12.mean_rates[1]
    note(5, "; ".join(lines))
    note(5, f"M=12 R1/R2: SRM {ratio_srm:.3f}, MRM {ratio_mrm:.3f}")
    for M in range(4, 13):
        assert table.cell(M, "gbd-mrm").mean_fairness > table.cell(M, "gbd-srm").mean_fairness, M
    assert 0.8 <= ratio_mrm <= 1.25
    assert not (0.8 <= ratio_srm <= 1.25)


@pytest.mark.criterion(8)
def test_gbd_beats_myopic(m_sweep, note):
    table, _ = m_sweep
    lines = []
    bad = []
    for M in range(4, 13):
        g = table.cell(M, "gbd-srm").mean_sum_rate
        z = table.cell(M, "myopic-zhang-srm").mean_sum_rate
        f = table.cell(M, "myopic-fullduplex-srm").mean_sum_rate
        lines.append(f"M={M}: {g:.2f}/{z:.2f}/{f:.2f}")
        if g < z or g < f:
            bad.append(M)
    note(8, "gbd/zhang/fullduplex mean sum-rate " + "; ".join(lines))
    assert not bad, bad


@pytest.mark.criterion(6)
def test_path_loss_severity(alpha_sweep, note):
    table, _ = alpha_sweep
    f_srm = table.cell(4.0, "gbd-srm").mean_fairness
    f_mrm = table.cell(4.0, "gbd-mrm").mean_fairness
    note(6, f"alpha=4: F_srm={f_srm:.4f} (reported 0.012), F_mrm={f_mrm:.4f} (reported 0.18), ratio {f_mrm / f_srm:.2f}")
    assert f_srm < 0.05
    assert f_mrm >= 5.0 * f_srm
    assert 0.5 * 0.012 <= f_srm <= 1.5 * 0.012
    assert 0.5 * 0.18 <= f_mrm <= 1.5 * 0.18


@pytest.mark.criterion(7)
def test_robustness_trend(eps_sweep, note):
    table, _ = eps_sweep
    srm = [table.cell(e, "gbd-srm").mean_sum_rate for e in (0.0, 0.1, 0.2, 0.3)]
    mrm = [table.cell(e, "gbd-mrm").mean_min_rate for e in (0.0, 0.1, 0.2, 0.3)]
    note(7, "SRM " + ", ".join(f"{v:.3f}" for v in srm) + " | MRM " + ", ".join(f"{v:.3f}" for v in mrm))
    assert all(b <= a for a, b in zip(srm, srm[1:]))
    assert all(b <= a for a, b in zip(mrm, mrm[1:]))


@pytest.mark.criterion(7)
def test_zero_epsilon_is_perfect_csi(eps_sweep, alpha_sweep):
    # both sweeps share base_seed and draw per trial, so alpha=2 is the
    # perfect-CSI twin of the epsilon=0 cell
    eps_table, _ = eps_sweep
    perfect_table, _ = alpha_sweep
    for policy in ("gbd-srm", "gbd-mrm"):
        a = eps_table.cell(0.0, policy)
        b = perfect_table.cell(2.0, policy)
        fields = [f for f in a.__dataclass_fields__ if f not in ("variable", "value")]
        assert [getattr(a, f) for f in fields] == [getattr(b, f) for f in fields]
    for s in range(20):
        inst = sample_instance(default_scenario(M=4), s)
        robust = inst.with_csi(inst.csi.bounded(0.0))
        assert np.array_equal(inst.gains, robust.gains)
        for o in ("srm", "mrm"):
            r1, r2 = run_gbd(inst, o), run_gbd(robust, o)
            assert r1.value == r2.value and np.array_equal(r1.P, r2.P) and np.array_equal(r1.W, r2.W)


@pytest.mark.criterion(9)
def test_sweep_is_byte_identical(tmp_path, note):
    spec = tmp_path / "spec.json"
    spec.write_text(
        '{"sweep": {"variable": "M", "values": [2, 3, 4]},'
        ' "policies": ["gbd-srm", "gbd-mrm", "suboptimal-srm", "myopic-zhang-srm",'
        ' "myopic-fullduplex-mrm", "oracle-srm"], "trials": 4, "base_seed": 11}'
    )
    outs = []
    for i, hashseed in enumerate(("0", "12345")):
        out = tmp_path / f"run{i}.csv"
        env = dict(os.environ, PYTHONHASHSEED=hashseed)
        subprocess.run(
            [sys.executable, "-m", "ehsched.cli", "sweep", str(spec), "--seed", "11", "--out", str(out)],
            check=True,
            env=env,
        )
        outs.append(out.read_bytes())
    note(9, f"{len(outs[0])} bytes per run")
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"#schema=1\n")
