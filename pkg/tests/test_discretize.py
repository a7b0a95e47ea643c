import numpy as np
import pytest

from shockmaint.discretize import (JumpKernel, build_grid, build_jump_kernel, discretize_model)
from shockmaint.model import FixedCostError, ModelError, ShockDistribution, ValidationError


def test_grid_nodes():
    g = build_grid(0, 1, 5)
    np.testing.assert_array_equal(g.nodes, [0, 0.25, 0.5, 0.75, 1])
    assert g.h == 0.25
    assert build_grid(0, 1, 2001).h == pytest.approx(5e-4, abs=1e-18)
    g = build_grid(0.3, 2.9, 1234)
    assert g.nodes[0] == 0.3 and g.nodes[-1] == 2.9
    assert np.all(np.diff(g.nodes) > 0)


@pytest.mark.parametrize("args", [(1, 0, 5), (0, 1, 2), (0, 0, 10)])
def test_grid_errors(args):
    with pytest.raises(ModelError):
        build_grid(*args)


def test_point_mass_shift():
    g = build_grid(0, 1, 11)
    K = build_jump_kernel(g, ShockDistribution.point_mass(2 * g.h))
    js, ps = K.row(4)
    assert list(js) == [2] and list(ps) == [1.0]
    assert K.fail_mass[4] == 0.0
    assert K.fail_mass[1] == 1.0


def test_uniform_failure_mass():
    g = build_grid(0, 1, 2001)
    K = build_jump_kernel(g, ShockDistribution.uniform(0, 0.5))
    i = g.index(0.25)
    assert K.fail_mass[i] == pytest.approx(0.5, abs=2 * g.h / 0.5)


def test_node_zero_row(ex1):
    g = build_grid(0, 1, 101)
    K = build_jump_kernel(g, ex1.shocks)
    F = float(ex1.shocks.cdf(g.h / 2))
    assert K.fail_mass[0] == pytest.approx(1 - F, abs=1e-15)
    assert K.row(0)[1].sum() == pytest.approx(F, abs=1e-15)


@pytest.mark.parametrize("dist", [
    ShockDistribution.lognormal(-1, 0.14),
    ShockDistribution.uniform(0.1, 0.7),
    ShockDistribution.point_mass(0.33),
    ShockDistribution("empirical", {"values": [0.05, 0.4, 2.0], "weights": [3, 2, 1]}),
])
def test_rows_sum_to_one_and_are_lower_triangular(dist):
    g = build_grid(0, 1, 257)
    K = build_jump_kernel(g, dist)
    np.testing.assert_allclose(K.row_sums(), 1.0, atol=1e-12)
    for i in (0, 1, 100, 256):
        js, ps = K.row(i)
        assert np.all(js <= i) and np.all(ps >= 0)
    assert np.all(np.diff(K.fail_mass) <= 0)


def test_apply_matches_dense_both_routes(ex1):
    rng = np.random.default_rng(0)
    for N in (50, 3001):  # direct convolution, then FFT
        g = build_grid(0, 1, N)
        K = build_jump_kernel(g, ex1.shocks)
        V = rng.uniform(-1, 1, N)
        dense = K.to_sparse() @ V
        np.testing.assert_allclose(K.apply(V), dense, atol=1e-12)


def test_apply_keeps_sign_for_nonnegative_input(ex1):
    g = build_grid(0, 1, 3001)
    K = build_jump_kernel(g, ex1.shocks)
    V = np.zeros(g.N)
    V[-1] = 1.0
    assert np.all(K.apply(V) >= 0)


def test_failure_mass_converges_under_refinement(ex1):
    # |q(N) - q(2N)| at a fixed state is at most 2 * max density * h
    dens = ex1.shocks.density_bound()
    for r in (0.1, 0.37, 0.8):
        g1, g2 = build_grid(0, 1, 1001), build_grid(0, 1, 2001)
        q1 = build_jump_kernel(g1, ex1.shocks).fail_mass[g1.index(r)]
        q2 = build_jump_kernel(g2, ex1.shocks).fail_mass[g2.index(r)]
        assert abs(q1 - q2) <= 2 * dens * g1.h


def test_discretize_example_endpoints(ex1):
    dm = discretize_model(ex1, 2001)
    assert dm.c[0] == pytest.approx(0.05, rel=1e-4)
    assert dm.c[-1] == pytest.approx(5e-8, rel=1e-6)
    assert dm.N == 2001 and dm.G.shape == dm.H.shape == (2001,)
    assert dm.contraction_modulus() < 1


def test_no_shocks_gives_empty_kernel(ex1):
    from dataclasses import replace
    dm = discretize_model(replace(ex1, lam=0.0), 101)
    assert dm.kernel.is_empty
    assert np.all(dm.kernel.apply(np.ones(101)) == 0)


def test_zero_fixed_cost_rejected(ex1):
    with pytest.raises(FixedCostError) as exc:
        discretize_model(ex1.with_k(0.0), 101)
    assert exc.value.code == "QVI requires positive fixed cost"


def test_invalid_model_rejected(ex1):
    from dataclasses import replace
    with pytest.raises(ValidationError):
        discretize_model(replace(ex1, lam=-1.0), 101)


def test_fingerprint_tracks_content(ex1):
    a = discretize_model(ex1, 101)
    assert a.fingerprint == discretize_model(ex1, 101).fingerprint
    assert a.fingerprint != discretize_model(ex1.with_k(0.1), 101).fingerprint
    assert a.fingerprint != discretize_model(ex1, 103).fingerprint


def test_empty_kernel_helpers():
    K = JumpKernel.empty(7)
    assert K.is_empty and K.to_sparse().nnz == 0
    np.testing.assert_array_equal(K.row_sums(), 0.0)
