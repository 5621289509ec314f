import math

import numpy as np
import pytest

from srb_gradient.curvature import (
    RESET_SETTLE_STEPS,
    BinnedGradient1D,
    CurvaturePropagator,
    CurvatureState,
    GradientSeries1D,
    algorithm1_states,
    binned_g_1d,
    convergence_diagnostic,
    eval_g,
    rescale_curvature,
    run_algorithm1,
    step_curvature_raw,
    step_g_1d_straight,
    straight_manifold_g,
)
from srb_gradient.errors import DerivativeSingularity, DimensionMismatch, ZeroDerivative
from srb_gradient.linalg import qr_householder
from srb_gradient.maps import Sawtooth, build_map, sawtooth
from srb_gradient.tangent import init_frame


class SingularNearZero(Sawtooth):
    """Sawtooth whose derivative is declared singular on [0, 0.05)"""

    step_kernel = None

    def jacobian(self, x):
        if x[0] < 0.05:
            raise DerivativeSingularity(f"test singularity at {x[0]}")
        return super().jacobian(x)


class SingularOnce(Sawtooth):
    """Sawtooth whose first derivative evaluation is singular"""

    step_kernel = None

    def __init__(self, s):
        super().__init__(s)
        self.calls = 0

    def jacobian(self, x):
        self.calls += 1
        if self.calls == 1:
            raise DerivativeSingularity("test singularity")
        return super().jacobian(x)


class InterpretedSawtooth(Sawtooth):
    step_kernel = None


def _random_state(rng, n, m):
    full = rng.standard_normal((m, m, n))
    full = full + full.transpose(1, 0, 2)
    return CurvatureState.from_full(full)


def test_curvature_state_storage_is_symmetric(rng):
    state = _random_state(rng, 3, 3)
    assert state.packed.shape == (6, 3)
    full = state.full()
    for i in range(3):
        for j in range(3):
            assert np.array_equal(state.pair(i, j), state.pair(j, i))
            assert np.array_equal(full[i, j], full[j, i])


def test_raw_step_of_linear_map_is_linear(rng):
    q = qr_householder(rng.standard_normal((2, 1))).q
    jac = np.array([[2.0, 1.0], [1.0, 1.0]])
    zero_hess = lambda u, v: np.zeros(2)  # noqa: E731
    raw = step_curvature_raw(CurvatureState.zeros(2, 1), q, jac, zero_hess)
    assert np.array_equal(raw.packed, np.zeros((1, 2)))

    state = _random_state(rng, 2, 1)
    raw = step_curvature_raw(state, q, jac, zero_hess)
    assert np.allclose(raw.packed[0], jac @ state.packed[0], atol=1e-15)


def test_raw_step_rejects_mismatched_shapes(rng):
    with pytest.raises(DimensionMismatch):
        step_curvature_raw(CurvatureState.zeros(3, 2), np.eye(2, 1), np.eye(2), lambda u, v: np.zeros(2))


def test_rescale_with_identity_is_a_no_op(rng):
    state = _random_state(rng, 3, 2)
    out = rescale_curvature(state, np.eye(2))
    assert np.allclose(out.packed, state.packed, atol=1e-15)


def test_rescale_one_dimensional_divides_by_alpha_squared(rng):
    state = _random_state(rng, 2, 1)
    alpha = 1.7
    out = rescale_curvature(state, np.array([[1.0 / alpha]]))
    assert np.allclose(out.packed, state.packed / alpha ** 2, atol=1e-15)


def test_rescale_matches_explicit_double_sum(rng):
    n, m = 3, 2
    state = _random_state(rng, n, m)
    r_inv = np.triu(rng.standard_normal((m, m)))
    out = rescale_curvature(state, r_inv)
    for i in range(m):
        for j in range(m):
            expected = np.zeros(n)
            for p in range(m):
                for q in range(m):
                    expected += state.pair(p, q) * r_inv[p, i] * r_inv[q, j]
            assert np.allclose(out.pair(i, j), expected, atol=1e-13), f"pair ({i}, {j})"


def test_eval_g_matches_explicit_sum(rng):
    n, m = 3, 2
    q = qr_householder(rng.standard_normal((n, m))).q
    state = _random_state(rng, n, m)
    g = eval_g(q, state)
    for i in range(m):
        expected = -sum(q[:, j] @ state.pair(i, j) for j in range(m))
        assert g[i] == pytest.approx(expected, abs=1e-14)
    assert np.array_equal(eval_g(q, CurvatureState.zeros(n, m)), np.zeros(m))


@pytest.mark.parametrize("n, m", [(2, 1), (3, 2), (4, 3)])
def test_fused_advance_matches_separate_steps(rng, n, m):
    jac = rng.standard_normal((n, n)) + 3.0 * np.eye(n)
    weights = rng.standard_normal((n, n, n))

    def hess(u, v):
        return np.einsum("kij,i,j->k", weights, u, v)

    frame = init_frame(n, m, seed=4)
    state = _random_state(rng, n, m)
    prop = CurvaturePropagator(frame, state)
    g = prop.advance(jac, hess)

    r = qr_householder(jac @ frame.q).r
    expected_state = rescale_curvature(step_curvature_raw(state, frame.q, jac, hess), np.linalg.inv(r))
    expected_g = eval_g(prop.frame.q, expected_state)
    assert np.allclose(prop.state.packed, expected_state.packed, rtol=1e-10, atol=1e-12)
    assert np.allclose(g, expected_g, rtol=1e-10, atol=1e-12)
    assert prop.state.step == state.step + 1


def test_cat_map_gradient_is_identically_zero(cat_map):
    samples = list(run_algorithm1(cat_map, cat_map.random_point(0), 1, 500, burn_in=10))
    assert len(samples) == 500
    assert all(np.all(s.g == 0.0) for s in samples), "linear map produced a non-zero gradient"
    assert samples[0].step == 11


def test_general_scheme_matches_one_dimensional_chain(curved_baker):
    # for m = 1 the rescaling reduces to division by alpha_k^2
    x0 = curved_baker.random_point(4)
    general = list(run_algorithm1(curved_baker, x0, 1, 300, burn_in=0, seed=4))

    q = init_frame(2, 1, 4).q[:, 0]
    a = np.zeros(2)
    x = x0
    for sample in general:
        xe = curved_baker.nudge(x)
        jac = curved_baker.jacobian(xe)
        image = jac @ q
        alpha = np.linalg.norm(image)
        a = (curved_baker.hessian_bilinear(xe, q, q) + jac @ a) / alpha ** 2
        q = image / alpha
        x = curved_baker.apply(x)
        assert sample.g[0] == pytest.approx(-(q @ a), abs=1e-10), f"step {sample.step}"


def test_straight_baker_matches_scalar_recursion(straight_baker):
    x0 = straight_baker.random_point(2)
    general = list(algorithm1_states(straight_baker, x0, 1, 1000, burn_in=200, seed=2))
    scalar = list(straight_manifold_g(straight_baker, x0, 1000, burn_in=200))
    orient = np.sign(general[0][1].q[0, 0])
    for (g_sample, _), s_sample in zip(general, scalar):
        assert g_sample.step == s_sample.step
        assert np.array_equal(g_sample.point, s_sample.point)
        assert orient * g_sample.g[0] == pytest.approx(s_sample.g[0], abs=1e-10), f"step {s_sample.step}"


def test_gradient_is_independent_of_tangent_seed(curved_baker):
    x0 = curved_baker.random_point(6)
    runs = [list(algorithm1_states(curved_baker, x0, 1, 300, burn_in=200, seed=seed)) for seed in (0, 5)]
    for (s1, f1), (s2, f2) in zip(*runs):
        sign = np.sign(f1.q[:, 0] @ f2.q[:, 0])
        assert s1.g[0] == pytest.approx(sign * s2.g[0], abs=1e-10), f"step {s1.step}"


@pytest.mark.parametrize("g_k, d1, d2, expected", [
    (0.3, 2.0, 0.0, 0.15),
    (0.0, 2.0, 1.0, -0.25),
    (1.0, -2.0, 0.0, -0.5),
])
def test_scalar_recursion_examples(g_k, d1, d2, expected):
    assert step_g_1d_straight(g_k, d1, d2) == pytest.approx(expected, abs=1e-15)


def test_scalar_recursion_fixed_point():
    d1, d2 = 2.5, 0.7
    fixed = -d2 / (d1 * (d1 - 1.0))
    assert step_g_1d_straight(fixed, d1, d2) == pytest.approx(fixed, abs=1e-15)


def test_scalar_recursion_zero_derivative():
    with pytest.raises(ZeroDerivative):
        step_g_1d_straight(0.1, 0.0, 1.0)


def test_convergence_diagnostic_cat_map_is_zero(cat_map):
    norms = list(convergence_diagnostic(cat_map, cat_map.random_point(1), 1, 50, seed1=0, seed2=1))
    assert [k for k, _ in norms] == list(range(1, 51))
    assert all(v == 0.0 for _, v in norms)


def test_convergence_diagnostic_identical_seeds_is_zero(curved_baker):
    norms = convergence_diagnostic(curved_baker, curved_baker.random_point(1), 1, 50, seed1=3, seed2=3)
    assert all(v == 0.0 for _, v in norms)


# the 3-D map separates its two unstable exponents by only about 0.26 per step
@pytest.mark.parametrize("name, params, m, settled", [
    ("baker2d", [0.0, 0.4, 0.0, 0.0], 1, 80),
    ("baker2d", [0.0, 0.0, 0.0, 0.4], 1, 80),
    ("baker3d", [0.0, 0.9, 0.1], 2, 130),
])
def test_convergence_diagnostic_decays(name, params, m, settled):
    map_system = build_map(name, params)
    norms = dict(convergence_diagnostic(map_system, map_system.random_point(2), m, 160, seed1=0, seed2=1))
    late = [norms[k] for k in range(settled, 161)]
    assert max(late) < 1e-11, f"{name}: late differences {max(late):.3e}"


def test_gradient_series_bins():
    series = GradientSeries1D.empty(4)
    assert series.bin_of(0.0) == 0
    assert series.bin_of(0.25) == 1
    assert series.bin_of(1.0) == 3, "right end point belongs to the last bin"
    assert np.allclose(series.centers(), [0.125, 0.375, 0.625, 0.875])
    assert np.all(np.isnan(series.averages()))
    with pytest.raises(DimensionMismatch):
        series.merge(GradientSeries1D.empty(5))


def test_binned_sawtooth_without_perturbation_is_zero():
    series = binned_g_1d(sawtooth(0.0), 0.3, 2000, 16, burn_in=10)
    assert series.counts.sum() == 2000
    visited = series.counts > 0
    assert np.all(series.averages()[visited] == 0.0)


def test_binned_sawtooth_follows_perturbative_gradient():
    # to second order in s the invariant density is 1 + pi^2 s^2 cos(2 pi x)
    s = 0.05
    series = binned_g_1d(sawtooth(s), 0.123, 200_000, 16)
    centers = series.centers()
    amplitude = math.pi ** 2 * s ** 2
    expected = (-2.0 * math.pi * amplitude * np.sin(2 * math.pi * centers)
                / (1.0 + amplitude * np.cos(2 * math.pi * centers)))
    corr = np.corrcoef(series.averages(), expected)[0, 1]
    assert corr > 0.9, f"binned gradient does not follow the perturbative profile (r = {corr:.3f})"


def test_binned_skips_singular_samples():
    estimator = BinnedGradient1D(SingularNearZero(0.1), 0.3, 8)
    series = estimator.run(5000)
    assert series.skipped > 0, "no sample landed in the singular region"
    assert series.counts.sum() + series.skipped == 5000
    assert np.all(np.isfinite(series.averages()[series.counts > 0]))


def test_binned_requires_one_dimensional_map(cat_map):
    with pytest.raises(DimensionMismatch):
        BinnedGradient1D(cat_map, 0.1, 8)


def test_binned_runs_resume_the_same_orbit():
    whole = binned_g_1d(sawtooth(0.1), 0.4, 3000, 8, burn_in=0)
    estimator = BinnedGradient1D(sawtooth(0.1), 0.4, 8)
    estimator.run(1000)
    split = estimator.run(2000)
    assert np.array_equal(whole.counts, split.counts)
    assert np.allclose(whole.sums, split.sums, atol=1e-12)


def test_reset_leaves_settling_samples_out():
    estimator = BinnedGradient1D(SingularOnce(0.1), 0.3, 8)
    series = estimator.run(100)
    assert series.skipped == 1 + RESET_SETTLE_STEPS
    assert series.counts.sum() == 100 - 1 - RESET_SETTLE_STEPS


def test_compiled_and_interpreted_binning_agree():
    compiled = BinnedGradient1D(sawtooth(0.1), 0.3, 8)
    interpreted = BinnedGradient1D(InterpretedSawtooth(0.1), 0.3, 8)
    for estimator in (compiled, interpreted):
        estimator.run(20)
    assert np.array_equal(compiled.series.counts, interpreted.series.counts)
    assert np.allclose(compiled.series.sums, interpreted.series.sums, atol=1e-8)
    assert compiled.x[0] == pytest.approx(interpreted.x[0], abs=1e-8)
    assert compiled.steps == interpreted.steps == 20


def test_compiled_onion_skips_the_fold():
    estimator = BinnedGradient1D(build_map("onion", [0.4]), 0.5, 8)
    series = estimator.run(10)
    assert series.skipped >= 1
    assert series.counts.sum() + series.skipped == 10
