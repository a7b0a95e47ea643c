import json

import numpy as np
import pytest

from shockmaint.discretize import discretize_model
from shockmaint.experiments import (DEFAULT_K_LADDER, SweepError, k_ladder, limit_check,
                                    limit_report, reproduce_figures, singular_gap, sweep_k)
from shockmaint.model import CostModel, ModelError
from shockmaint.solve import SolverConfig, qvi_solve

HALVING = [0.1, 0.05, 0.025, 0.0125]


def test_default_ladder():
    assert len(DEFAULT_K_LADDER) == 16
    assert DEFAULT_K_LADDER[0] == pytest.approx(0.3) and DEFAULT_K_LADDER[-1] == pytest.approx(1e-3)
    assert all(b < a for a, b in zip(DEFAULT_K_LADDER, DEFAULT_K_LADDER[1:]))
    ratios = np.array(DEFAULT_K_LADDER[:-1]) / np.array(DEFAULT_K_LADDER[1:])
    np.testing.assert_allclose(ratios, ratios[0])
    assert k_ladder(3, 0.1, 10) == pytest.approx((10, 1, 0.1))


def test_sweep_rows_sorted_and_consistent(ex1):
    table = sweep_k(ex1, [0.01, 0.2, 0.05], N=401)
    assert list(table.ks) == [0.2, 0.05, 0.01]
    for row in table.rows:
        assert row.policy.S_target == 1.0
        assert row.residual <= 1e-4
        assert row.policy.N == 401
    th = table.thresholds()
    assert th.shape == (3, 5) and list(th[:, 0]) == [0.2, 0.05, 0.01]


def test_small_k_approaches_always_repair(ex1):
    table = sweep_k(ex1, [0.3, 1e-3], N=401)
    big, small = table.rows[0].policy, table.rows[1].policy
    assert small.s_low <= 0.02 and small.s_high >= 0.95
    assert big.empty or small.s_high - small.s_low > big.s_high - big.s_low


def test_sweep_threads_give_same_table(ex2):
    a = sweep_k(ex2, HALVING, N=201)
    b = sweep_k(ex2, HALVING, N=201, threads=3)
    for x, y in zip(a.rows, b.rows):
        np.testing.assert_array_equal(x.values, y.values)


def test_sweep_errors(ex1):
    with pytest.raises(SweepError) as exc:
        sweep_k(ex1, [0.2, 0.05], N=201, cfg=SolverConfig(max_iter=3))
    assert exc.value.k == 0.2
    with pytest.raises(ModelError):
        sweep_k(ex1, [0.1, 0.0], N=201)
    with pytest.raises(ValueError):
        sweep_k(ex1, [], N=201)


@pytest.mark.parametrize("which", ["ex1", "ex2", "ex3"])
def test_limit_monotone_on_examples(which, request):
    rep = limit_check(request.getfixturevalue(which), HALVING, N=401)
    assert rep.monotone, rep.violations
    assert rep.gaps_decreasing, rep.gaps


def test_ex1_flatness_shrinks(ex1):
    rep = limit_check(ex1, HALVING + [0.00625, 0.003125], N=801, check_flatness=True)
    assert rep.ok
    assert rep.flatness[-1] < rep.flatness[0] / 10


def test_single_k_limit_trivially_passes(ex1):
    rep = limit_check(ex1, [0.05], N=201)
    assert rep.ok and rep.gaps == () and rep.monotone
    assert rep.to_dict()["ok"] is True


def test_limit_report_flags_drop():
    r = np.linspace(0, 1, 5)
    curves = [np.ones(5), np.ones(5) - np.array([0, 0, 1e-3, 0, 0])]
    rep = limit_report([0.2, 0.1], r, curves, r)
    assert not rep.monotone and rep.violations[0][:2] == (0, 0.5)
    with pytest.raises(ValueError):
        limit_report([0.1, 0.2], r, curves, r)


def test_singular_gap_examples(ex1):
    dm = discretize_model(ex1, 401)
    cost = ex1.cost
    flat = singular_gap(dm, np.full(dm.N, 3.0), cost)
    np.testing.assert_allclose(flat.gap, cost.dH(dm.r[1:-1]))
    assert flat.min_gap > 0 and flat.violations.size == 0
    onH = singular_gap(dm, dm.H.copy(), cost)
    # backward difference of H is off by at most h/2 sup|H''|
    d2 = 0.25 * 0.5 ** -1.5
    assert np.max(np.abs(onH.gap)) <= dm.h / 2 * d2 * (1 + 1e-9)
    tab = CostModel("tabulated", {"r": [0, 1], "H": [0, 1]}, 0.05)
    with pytest.raises(ModelError) as exc:
        singular_gap(dm, dm.H, tab)
    assert exc.value.code == "unsupported"


def test_singular_gap_on_solution(ex1):
    dm = discretize_model(ex1.with_k(1e-3), 401)
    vf = qvi_solve(dm)
    rep = singular_gap(dm, vf, ex1.cost, threshold=0.05)
    assert rep.r.size == dm.N - 2
    assert set(rep.to_dict()) == {"min_gap", "argmin_r", "threshold", "n_violations"}
    assert np.all(rep.gap[rep.violations - 1] < -0.05)


def test_figure_bundle_is_deterministic(tmp_path):
    ks = [0.2, 0.05, 0.01]
    t1, rep, paths = reproduce_figures(3, tmp_path / "a", k_list=ks, N=201)
    reproduce_figures(3, tmp_path / "b", k_list=ks, N=201)
    names = sorted(p.name for p in (tmp_path / "a" / "ex3").iterdir())
    assert names == sorted(["report.json", "thresholds.csv"]
                           + [f"values_k={k:.6g}.csv" for k in ks])
    for n in names:
        assert (tmp_path / "a" / "ex3" / n).read_bytes() == (tmp_path / "b" / "ex3" / n).read_bytes()
    head = (tmp_path / "a" / "ex3" / "thresholds.csv").read_text().splitlines()[0]
    assert head == "k,s_low,s_high,S,iters"
    doc = json.loads((tmp_path / "a" / "ex3" / "report.json").read_text())
    assert doc["example"] == "ex3" and "limit" in doc and "singular_gap" in doc
    assert all(row.policy.s_low > 0 for row in t1.rows)
    with pytest.raises(ModelError):
        reproduce_figures(4, tmp_path)
