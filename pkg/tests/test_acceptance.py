"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

from shockmaint import cli
from shockmaint.discretize import discretize_model
from shockmaint.experiments import DEFAULT_K_LADDER, limit_check, sweep_k
from shockmaint.model import example_model, model_from_dict
from shockmaint.policy import extract_policy
from shockmaint.simulate import coupling_experiment, estimate_J
from shockmaint.solve import SolverConfig, qvi_solve, residual_check

from oracles import dense_qvi_oracle, random_point_mass_instance

# every value field solved in this module, for the shape criterion
_SOLVED = []


def _solve(model, N=2001, tol=1e-7):
    dm = discretize_model(model, N)
    vf = qvi_solve(dm, SolverConfig(tol=tol))
    assert vf.converged
    _SOLVED.append((model.name or "instance", float(np.max(model.G(dm.r))) / model.delta,
                    vf.values))
    return dm, vf


def _deterministic_doc(lam=0.0, s0=0.5):
    return {
        "bounds": {"m": 0.0, "M": 1.0},
        "rate": {"kind": "constant", "c0": 0.05},
        "shocks": {"lambda": lam, "dist": {"kind": "point_mass", "s0": s0}},
        "benefit": {"kind": "constant", "g0": 1.0, "delta": 0.05},
        "cost": {"kind": "sqrt", "shift": 0.5, "k": 1e9},
    }


def test_c01_deterministic_oracle(verdict):
    model = model_from_dict(dict(_deterministic_doc(), name="no shocks"))
    t0 = time.perf_counter()
    dm, vf = _solve(model, N=4001)
    elapsed = time.perf_counter() - t0
    exact = (1 / 0.05) * (1 - np.exp(-0.05 * dm.r / 0.05))
    err = float(np.max(np.abs(vf.values - exact)))
    ok = err <= 5e-3 and elapsed <= 30
    verdict(1, ok, f"max err {err:.2e} (<= 5e-3), {elapsed:.1f}s (<= 30s), "
                   f"{vf.iterations} sweeps")
    assert ok


def test_c02_lethal_shock_oracle(verdict):
    model = model_from_dict(dict(_deterministic_doc(lam=0.5, s0=2.0), name="lethal shocks"))
    dm, vf = _solve(model, N=4001)
    rate = 0.05 + 0.5
    exact = (1 / rate) * (1 - np.exp(-rate * dm.r / 0.05))
    err = float(np.max(np.abs(vf.values - exact)))
    verdict(2, err <= 5e-3, f"max err {err:.2e} (<= 5e-3)")
    assert err <= 5e-3


def test_c03_brute_force_small_instances(verdict):
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for _ in range(100):
        doc, N = random_point_mass_instance(rng)
        model = model_from_dict(dict(doc, name="random small"))
        # tight stopping rule: sup|dV| < tol only bounds the error by tol * beta / (1 - beta)
        dm, vf = _solve(model, N=N, tol=1e-10)
        r = dm.r
        exact = dense_qvi_oracle(r, model.c(r), model.G(r), model.H(r), model.lam, model.delta,
                                 model.k, doc["shocks"]["dist"]["s0"])
        worst = max(worst, float(np.max(np.abs(vf.values - exact))))
    verdict(3, worst <= 1e-6, f"worst |V - oracle| {worst:.2e} over 100 instances (<= 1e-6)")
    assert worst <= 1e-6


def test_c04_residuals_on_examples(verdict):
    worst = {}
    for i in (1, 2, 3):
        dm, vf = _solve(example_model(i, 0.05))
        worst[f"ex{i}"] = residual_check(dm, vf).max_abs_min
    ok = max(worst.values()) <= 1e-4
    verdict(4, ok, " ".join(f"{k}={v:.2e}" for k, v in worst.items()) + " (<= 1e-4)")
    assert ok


@pytest.fixture(scope="module")
def ladders():
    out = {}
    for i in (1, 2, 3):
        table = sweep_k(example_model(i), DEFAULT_K_LADDER)
        for row in table.rows:
            gmax = float(np.max(example_model(i).G(table.r))) / 0.05
            _SOLVED.append((f"ex{i} k={row.k:.3g}", gmax, row.values))
        out[i] = table
    return out


def test_c07_figure1_facts(ladders, verdict):
    t = ladders[1]
    h = float(t.r[1] - t.r[0])
    rows = [row.policy for row in t.rows]
    S_all_one = all(p.S_target == 1.0 for p in rows)
    # empty intervention sets (largest k) carry the s_low = s_high = M convention and are
    # left out of the threshold-ordering check
    live = [p for p in rows if not p.empty]
    hi_ok = all(b.s_high >= a.s_high - h for a, b in zip(live, live[1:]))
    lo_ok = all(b.s_low <= a.s_low + h for a, b in zip(rows, rows[1:]))
    ok = S_all_one and hi_ok and lo_ok and len(live) >= 2
    verdict(7, ok, f"S=1 on all {len(rows)} rows: {S_all_one}; s_high non-decreasing: {hi_ok}; "
                   f"s_low non-increasing: {lo_ok}; {len(rows) - len(live)} empty rows")
    assert ok


def test_c08_figure2_facts(ladders, verdict):
    t = ladders[2]
    S = [row.policy.S_target for row in t.rows]
    live = [row.policy for row in t.rows if not row.policy.empty]
    ok = S[0] == 1.0 and live[0].S_target == 1.0 and S[-1] < 0.9 and len(set(S)) > 1
    verdict(8, ok, f"S at largest k {S[0]:.4g} (largest nonempty {live[0].S_target:.4g}), "
                   f"at smallest k {S[-1]:.4g}; {len(set(S))} distinct values")
    assert ok


def test_c09_figure3_facts(ladders, verdict):
    lows = [row.policy.s_low for row in ladders[3].rows]
    ok = all(s > 0 for s in lows)
    verdict(9, ok, f"min s_low over ladder {min(lows):.4g} (> 0)")
    assert ok


def test_c06_policy_mc_consistency(verdict):
    model = example_model(1, 0.05)
    dm, vf = _solve(model)
    pol = extract_policy(dm, vf)
    estimate_J(model, pol, 0.5, 8, seed=99)  # compile outside the timed block
    t0 = time.perf_counter()
    lines = []
    ok = True
    for r0 in (0.2, 0.5, 0.9):
        # paths stop once the remaining discounted profit is provably below 1e-6;
        # that bound is charged against the allowance
        est = estimate_J(model, pol, r0, 100_000, seed=0, trunc_tol=1e-6)
        V = float(np.interp(r0, dm.r, vf.values))
        dev = abs(est.mean - V) + est.truncation_bound
        allow = 3 * est.stderr + 0.02
        ok &= dev <= allow
        lines.append(f"r0={r0}: |{est.mean:.4f}-{V:.4f}|+{est.truncation_bound:.0e}"
                     f"={dev:.1e}<={allow:.3f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 60
    verdict(6, ok, "; ".join(lines) + f"; {elapsed:.1f}s (<= 60s)")
    assert ok


def test_c10_k_limit(verdict):
    rep = limit_check(example_model(1), [0.1, 0.05, 0.025, 0.0125, 0.00625], tol=1e-6,
                      check_flatness=True)
    ok = rep.monotone and rep.gaps_decreasing
    verdict(10, ok, f"monotone: {rep.monotone}; gaps "
                    + ", ".join(f"{g:.3g}" for g in rep.gaps)
                    + f"; flatness {rep.flatness[0]:.3g} -> {rep.flatness[-1]:.3g}")
    assert ok


def test_c11_coupling_bound(verdict):
    model = example_model(1)
    observed, bound = coupling_experiment(model, 10_000, T=10.0, seed=11)
    bad = int(np.sum(observed > bound * (1 + 1e-9)))
    verdict(11, bad == 0, f"{bad} violations in {observed.size} pairs; "
                          f"max observed/bound {float(np.max(observed / bound)):.4f}")
    assert bad == 0


_CLI_RUNS = {
    "validate": ["validate", "ex1"],
    "solve": ["solve", "ex1", "--grid", "401"],
    "policy": ["policy", "ex3", "--k", "0.05", "--grid", "401"],
    "simulate": ["simulate", "ex1", "--policy", "from-solve", "--grid", "401", "--r0", "0.5",
                 "--n", "500", "--seed", "7", "--horizon", "200"],
    "sweep": ["sweep", "ex2", "--k-list", "0.2,0.05,0.01", "--grid", "401"],
    "figures": ["figures", "--example", "2", "--grid", "201"],
    "residuals": ["residuals", "ex2", "--grid", "401"],
    "kernel": ["kernel", "ex1", "--grid", "101"],
}


def test_c12_cli_reproducibility(tmp_path, verdict, capsys):
    results = {}
    for name, argv in _CLI_RUNS.items():
        out = tmp_path / name
        assert cli.run(argv + ["--out", str(out)]) == 0, name
        manifest = out / ("ex2" if name == "figures" else "") / "manifest.json"
        man = json.loads(manifest.read_text())
        assert man["artifacts"], name
        code = cli.run(["rerun", str(manifest), "--out", str(tmp_path / f"{name}-again")])
        report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        results[name] = code == 0 and report["identical"]
    ok = all(results.values())
    verdict(12, ok, ", ".join(f"{k}:{'ok' if v else 'DIFF'}" for k, v in results.items()))
    assert ok


def test_c05_value_shape(ladders, verdict):
    # placed last so that every other solve in this module has registered its field
    assert len(_SOLVED) >= 48
    worst_drop, worst_over, worst_low = 0.0, -math.inf, math.inf
    for _, vmax, V in _SOLVED:
        worst_drop = max(worst_drop, float(-np.min(np.diff(V))))
        worst_over = max(worst_over, float(np.max(V) - vmax))
        worst_low = min(worst_low, float(np.min(V)))
    ok = worst_drop <= 1e-7 and worst_over <= 1e-7 and worst_low >= 0
    verdict(5, ok, f"{len(_SOLVED)} fields; worst adjacent drop {worst_drop:.1e}, "
                   f"max(V - maxG/delta) {worst_over:.2e}, min V {worst_low:.2e}")
    assert ok
