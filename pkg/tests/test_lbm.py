"""Tests for paths, the additive functional, time change, and estimators."""

import math

import numpy as np
import pytest
from scipy import stats

from liouville import exponents, gmc, lbm, torus_field


@pytest.fixture(scope="module")
def flat32():
    grid = torus_field.TorusGrid(32)
    return gmc.build_measure(torus_field.sample_gff(grid, cutoff=8, seed=2), 0.0)


@pytest.fixture(scope="module")
def rough32():
    grid = torus_field.TorusGrid(32)
    return gmc.build_measure(torus_field.sample_gff(grid, seed=7), 1.0)


@pytest.fixture(scope="module")
def flat128():
    grid = torus_field.TorusGrid(128)
    return gmc.build_measure(torus_field.sample_gff(grid, cutoff=8, seed=2), 0.0)


@pytest.fixture(scope="module")
def rough128():
    grid = torus_field.TorusGrid(128)
    return gmc.build_measure(torus_field.sample_gff(grid, seed=7), 1.0)


class TestBrownianPath:
    def test_same_seed_identical(self):
        a = lbm.simulate_bm((0.3, 0.7), 0.5, 0.5 / 64, seed=42)
        b = lbm.simulate_bm((0.3, 0.7), 0.5, 0.5 / 64, seed=42)
        np.testing.assert_array_equal(a.lift, b.lift)

    def test_wrapped_positions_in_unit_square(self):
        path = lbm.simulate_bm((0.9, 0.9), 4.0, 0.05, seed=1)
        pos = path.positions
        assert pos.min() >= 0.0 and pos.max() < 1.0
        assert np.abs(path.lift).max() > 1.0  # the lift really is unwrapped

    def test_displacement_second_moment(self):
        total = 0.5
        disp = []
        for seed in range(2000):
            path = lbm.simulate_bm((0.3, 0.7), total, total / 32, seed=seed)
            d = path.lift[-1] - path.lift[0]
            disp.append(float(d @ d))
        disp = np.array(disp)
        stderr = disp.std(ddof=1) / math.sqrt(disp.size)
        assert abs(disp.mean() - 2 * total) <= 3 * stderr

    def test_dt_refinement_distribution(self):
        coarse = np.array(
            [lbm.simulate_bm((0.3, 0.3), 0.5, 0.5 / 64, seed=s).lift[-1, 0] for s in range(4000)]
        )
        fine = np.array(
            [
                lbm.simulate_bm((0.3, 0.3), 0.5, 0.5 / 128, seed=10_000 + s).lift[-1, 0]
                for s in range(4000)
            ]
        )
        assert stats.ks_2samp(coarse, fine).pvalue > 0.01

    def test_step_validation(self):
        with pytest.raises(ValueError, match="dt"):
            lbm.simulate_bm((0.0, 0.0), 1.0, 0.0, seed=0)
        with pytest.raises(ValueError, match="dt"):
            lbm.simulate_bm((0.0, 0.0), 0.1, 0.2, seed=0)
        with pytest.raises(ValueError, match="whole number"):
            lbm.simulate_bm((0.0, 0.0), 1.0, 0.3, seed=0)


class TestBridge:
    def test_endpoint_exact_up_to_wrap(self):
        spec = lbm.BridgeSpec(x=(0.2, 0.2), y=(0.8, 0.9), t=0.2, dt=0.2 / 64)
        for seed in range(20):
            path = lbm.simulate_bridge(spec, seed)
            np.testing.assert_allclose(
                path.positions[-1], np.asarray(spec.y) % 1.0, atol=1e-12
            )

    def test_midpoint_moments(self):
        spec = lbm.BridgeSpec(x=(0.2, 0.2), y=(0.8, 0.9), t=0.2, dt=0.2 / 64)
        mids = np.array([lbm.simulate_bridge(spec, s).lift[32] for s in range(3000)])
        target_mean = 0.5 * (np.asarray(spec.x) + lbm.nearest_lift(spec.x, spec.y))
        target_var = spec.t / 4.0
        mean_se = mids.std(axis=0, ddof=1) / math.sqrt(mids.shape[0])
        var_se = target_var * math.sqrt(2.0 / (mids.shape[0] - 1))
        assert np.all(np.abs(mids.mean(axis=0) - target_mean) <= 3 * mean_se)
        assert np.all(np.abs(mids.var(axis=0, ddof=1) - target_var) <= 3 * var_se)

    def test_loop_excursion_scales_like_sqrt_t(self):
        lifetimes = (0.02, 0.08, 0.32)
        means = []
        for lifetime in lifetimes:
            spec = lbm.BridgeSpec(x=(0.5, 0.5), y=(0.5, 0.5), t=lifetime, dt=lifetime / 64)
            exc = [
                float(np.abs(lbm.simulate_bridge(spec, s).lift - 0.5).max())
                for s in range(400)
            ]
            means.append(np.mean(exc))
        slope = np.polyfit(np.log(lifetimes), np.log(means), 1)[0]
        assert abs(slope - 0.5) <= 0.1

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="t/16"):
            lbm.BridgeSpec(x=(0, 0), y=(0.5, 0.5), t=0.1, dt=0.05)
        with pytest.raises(ValueError, match="t/16"):
            lbm.BridgeSpec(x=(0, 0), y=(0.5, 0.5), t=0.1, dt=0.0)
        with pytest.raises(ValueError, match="homotopy"):
            lbm.BridgeSpec(x=(0, 0), y=(0.5, 0.5), t=0.1, dt=0.1 / 16, homotopy="all")

    def test_nearest_lift_picks_short_way(self):
        lifted = lbm.nearest_lift((0.9, 0.1), (0.1, 0.9))
        np.testing.assert_allclose(lifted, [1.1, -0.1])


class TestPcaf:
    def test_flat_functional_is_time(self, flat32):
        path = lbm.simulate_bm((0.1, 0.1), 0.25, 0.25 / 128, seed=3)
        func = lbm.pcaf(path, flat32)
        np.testing.assert_array_equal(func.values, func.times)

    def test_nondecreasing_and_zero_start(self, rough32):
        path = lbm.simulate_bm((0.4, 0.6), 0.25, 0.25 / 128, seed=4)
        func = lbm.pcaf(path, rough32)
        assert func.values[0] == 0.0
        assert np.all(np.diff(func.values) > 0)

    def test_additivity_under_path_shift(self, rough32):
        path = lbm.simulate_bm((0.4, 0.6), 0.25, 0.25 / 128, seed=5)
        func = lbm.pcaf(path, rough32)
        cut = 64
        shifted = lbm.BmPath(
            times=path.times[: path.times.size - cut] ,
            lift=path.lift[cut:],
            seed=path.seed,
        )
        tail = lbm.pcaf(shifted, rough32)
        np.testing.assert_allclose(
            tail.values, func.values[cut:] - func.values[cut], atol=1e-14
        )

    def test_mean_matches_time_over_replicas(self):
        grid = torus_field.TorusGrid(64)
        horizon = 0.1
        field_means = []
        for fidx in range(48):
            measure = gmc.build_measure(torus_field.sample_gff(grid, seed=3000 + fidx), 1.0)
            rng = np.random.default_rng(fidx)
            vals = []
            for k in range(4):
                start = tuple(rng.random(2))
                path = lbm.simulate_bm(start, horizon, horizon / 256, seed=60_000 + fidx * 16 + k)
                vals.append(lbm.pcaf(path, measure).values[-1])
            field_means.append(np.mean(vals))
        field_means = np.array(field_means)
        stderr = field_means.std(ddof=1) / math.sqrt(field_means.size)
        assert abs(field_means.mean() - horizon) <= 3 * stderr


class TestTimeChange:
    def test_flat_time_change_is_brownian_point(self, flat32):
        path = lbm.simulate_bm((0.1, 0.1), 0.25, 0.25 / 128, seed=3)
        func = lbm.pcaf(path, flat32)
        point = lbm.time_change(path, func, 0.125)
        np.testing.assert_allclose(point, path.positions[64], atol=1e-14)

    def test_inverse_identity_within_one_step(self, rough32):
        path = lbm.simulate_bm((0.4, 0.6), 0.25, 0.25 / 128, seed=6)
        func = lbm.pcaf(path, rough32)
        target = 0.6 * func.values[-1]
        k = int(np.searchsorted(func.values, target, side="right") - 1)
        step_mass = func.values[k + 1] - func.values[k]
        assert func.values[k] <= target <= func.values[k] + step_mass

    def test_monotone_in_intrinsic_time(self, rough32):
        path = lbm.simulate_bm((0.4, 0.6), 0.25, 0.25 / 128, seed=6)
        func = lbm.pcaf(path, rough32)
        final = func.values[-1]
        ks = [
            int(np.searchsorted(func.values, q * final, side="right"))
            for q in (0.2, 0.5, 0.8)
        ]
        assert ks[0] <= ks[1] <= ks[2]

    def test_extension_error(self, rough32):
        path = lbm.simulate_bm((0.4, 0.6), 0.25, 0.25 / 128, seed=6)
        func = lbm.pcaf(path, rough32)
        with pytest.raises(lbm.NeedsExtensionError, match="extend"):
            lbm.time_change(path, func, func.values[-1] * 2.0)
        with pytest.raises(ValueError, match="nonnegative"):
            lbm.time_change(path, func, -0.1)

    def test_flat_lbm_distribution_matches_bm(self, flat32):
        tau = 0.1003
        moved = []
        for seed in range(3000):
            path = lbm.simulate_bm((0.5, 0.5), 0.2, 0.2 / 128, seed=777000 + seed)
            func = lbm.pcaf(path, flat32)
            point = lbm.time_change(path, func, tau)
            delta = np.asarray(point) - 0.5
            delta -= np.round(delta)
            moved.append(delta)
        moved = np.array(moved)
        direct = []
        for seed in range(3000):
            path = lbm.simulate_bm((0.5, 0.5), tau, tau / 128, seed=888000 + seed)
            delta = path.positions[-1] - 0.5
            delta -= np.round(delta)
            direct.append(delta)
        direct = np.array(direct)
        assert stats.ks_2samp(moved[:, 0], direct[:, 0]).pvalue > 0.01
        assert stats.ks_2samp(moved[:, 1], direct[:, 1]).pvalue > 0.01


class TestExitTimes:
    def test_flat_mean_exit_time(self, flat128):
        r = 1.0 / 8.0
        _, t_exit = lbm.exit_samples((0.5, 0.5), r, flat128, 3000, dt=r * r / 1600, seed=11)
        assert abs(t_exit.mean() - r * r / 2.0) <= 0.05 * (r * r / 2.0)

    def test_flat_tau_equals_euclidean_clock(self, flat128):
        tau, t_exit = lbm.exit_samples((0.5, 0.5), 1.0 / 8.0, flat128, 200, seed=12)
        np.testing.assert_array_equal(tau, t_exit)

    def test_single_sample_fields(self, rough32):
        sample = lbm.exit_time((0.5, 0.5), 0.3, rough32, seed=13)
        assert sample.tau > 0 and sample.t_exit > 0
        assert sample.r == 0.3 and sample.x == (0.5, 0.5)

    def test_sampling_is_deterministic_and_chunk_invariant(self, rough32):
        a = lbm.exit_samples((0.5, 0.5), 0.3, rough32, 64, seed=14, chunk_steps=256)
        b = lbm.exit_samples((0.5, 0.5), 0.3, rough32, 64, seed=14, chunk_steps=512)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_radius_validation(self, rough32):
        with pytest.raises(ValueError, match="resolution floor"):
            lbm.exit_samples((0.5, 0.5), 1.0 / 16.0, rough32, 8, seed=0)
        with pytest.raises(ValueError, match="diameter"):
            lbm.exit_samples((0.5, 0.5), 0.75, rough32, 8, seed=0)

    def test_green_identity_for_mean_exit(self, flat128, rough128):
        for measure in (flat128, rough128):
            for r in (1.0 / 8.0, 1.0 / 16.0):
                tau, _ = lbm.exit_samples(
                    (0.5, 0.5), r, measure, 1500, dt=r * r / 1600, seed=11
                )
                log_part = gmc.log_kernel_integral(measure, (0.5, 0.5), r)
                ball = gmc.ball_mass(measure, (0.5, 0.5), r)
                quadrature = (log_part + math.log(r) * ball) / math.pi
                assert abs(tau.mean() - quadrature) <= 0.10 * quadrature

    def test_annealed_negative_moment_exponent(self):
        # fitted decay of E[tau^{-q}] across radii stays above the moment curve
        q = 0.5
        grid = torus_field.TorusGrid(128)
        radii = (1.0 / 8.0, 1.0 / 16.0)
        means = []
        for r in radii:
            acc = []
            for fidx in range(96):
                measure = gmc.build_measure(
                    torus_field.sample_gff(grid, seed=5000 + fidx), 1.0
                )
                tau, _ = lbm.exit_samples(
                    (0.5, 0.5), r, measure, 48, dt=r * r / 1024, seed=9000 + fidx
                )
                acc.append(tau**-q)
            means.append(float(np.concatenate(acc).mean()))
        slope = (math.log(means[1]) - math.log(means[0])) / (
            math.log(radii[1]) - math.log(radii[0])
        )
        assert slope >= exponents.zeta(1.0, -q) - 0.15

    def test_exit_probability_limits(self, flat128):
        prob_high = lbm.exit_probability(
            (0.5, 0.5), 1.0 / 8.0, 50.0, flat128, 200, dt=(1.0 / 64) ** 2, seed=15
        )
        prob_zero = lbm.exit_probability(
            (0.5, 0.5), 1.0 / 8.0, 0.0, flat128, 200, dt=(1.0 / 64) ** 2, seed=15
        )
        assert prob_high == 0.0
        assert prob_zero == 1.0


class TestBridgeLaplace:
    def test_zero_parameter_gives_one(self, rough32):
        spec = lbm.BridgeSpec(x=(0.2, 0.2), y=(0.7, 0.6), t=0.1, dt=0.1 / 64)
        est, stderr = lbm.bridge_laplace(spec, rough32, 0.0, 1000, seed=1)
        assert est == 1.0 and stderr == 0.0

    def test_flat_closed_form(self, flat32):
        spec = lbm.BridgeSpec(x=(0.2, 0.2), y=(0.7, 0.6), t=0.1, dt=0.1 / 64)
        for lam in (1.0, 5.0):
            est, _ = lbm.bridge_laplace(spec, flat32, lam, 1000, seed=1)
            assert abs(est - math.exp(-lam * 0.1)) <= 1e-12

    def test_decreasing_in_lambda(self, rough32):
        spec = lbm.BridgeSpec(x=(0.2, 0.2), y=(0.7, 0.6), t=0.1, dt=0.1 / 64)
        vals = [
            lbm.bridge_laplace(spec, rough32, lam, 1500, seed=1)[0]
            for lam in (0.5, 1.0, 2.0, 4.0)
        ]
        assert vals == sorted(vals, reverse=True)
        assert 0.0 < vals[-1] < vals[0] < 1.0

    def test_sample_floor(self, rough32):
        spec = lbm.BridgeSpec(x=(0.2, 0.2), y=(0.7, 0.6), t=0.1, dt=0.1 / 64)
        with pytest.raises(ValueError, match="1000"):
            lbm.bridge_laplace(spec, rough32, 1.0, 999, seed=1)


class TestMcResolvent:
    def test_flat_matches_continuum_closed_form(self, flat32):
        grid = flat32.grid
        for lam in (1.0, 10.0):
            est = lbm.mc_resolvent(
                (0.25, 0.25), (24, 8), flat32, lam, max(20.0 / lam, 2.0), 3000, seed=3
            )
            y = grid.cell_center(24, 8)
            d = np.asarray(y) - np.asarray((0.25, 0.25))
            d -= np.round(d)
            ref = lbm.standard_torus_resolvent(d[0], d[1], lam)
            assert abs(est - ref) <= 0.05 * ref

    def test_symmetry_in_endpoints(self, rough32):
        a = lbm.mc_resolvent((8.5 / 32, 8.5 / 32), (24, 8), rough32, 2.0, 10.0, 3000, seed=3)
        b = lbm.mc_resolvent((24.5 / 32, 8.5 / 32), (8, 8), rough32, 2.0, 10.0, 3000, seed=4)
        assert abs(a - b) <= 0.10 * max(a, b)

    def test_truncation_warning(self, flat32):
        with pytest.warns(UserWarning, match="t_max"):
            lbm.mc_resolvent((0.25, 0.25), (24, 8), flat32, 1.0, 5.0, 1000, seed=3)

    def test_rejects_diagonal_and_bad_lambda(self, flat32):
        with pytest.raises(ValueError, match="diagonal"):
            lbm.mc_resolvent((24.5 / 32, 8.5 / 32), (24, 8), flat32, 1.0, 20.0, 1000, seed=0)
        with pytest.raises(ValueError, match="positive"):
            lbm.mc_resolvent((0.25, 0.25), (24, 8), flat32, 0.0, 20.0, 1000, seed=0)


class TestMcHeatKernel:
    def test_flat_matches_standard_kernel(self, flat32):
        t = 0.1
        estimate = lbm.mc_heat_kernel((0.5, 0.5), t, flat32, 20000, dt=2.44e-4, seed=4)
        axis = (np.arange(32) + 0.5) / 32
        ref = lbm.standard_torus_kernel(axis[:, None] - 0.5, axis[None, :] - 0.5, t)
        bin_prob = ref * flat32.masses
        stderr = np.sqrt(np.maximum(bin_prob * (1 - bin_prob), 1e-12) / 20000) / flat32.masses
        assert float(np.max(np.abs(estimate - ref) / stderr)) <= 5.0

    def test_total_mass_exactly_one(self, rough32):
        estimate = lbm.mc_heat_kernel((0.5, 0.5), 0.05, rough32, 10000, seed=5)
        assert float((estimate * rough32.masses).sum()) == pytest.approx(1.0, abs=1e-12)
        assert estimate.min() >= 0.0

    def test_path_floor(self, rough32):
        with pytest.raises(ValueError, match="1e4"):
            lbm.mc_heat_kernel((0.5, 0.5), 0.05, rough32, 100, seed=5)


class TestStandardKernel:
    def test_branches_agree_at_switchover(self):
        # extrapolate each evaluation branch linearly to t = 0.1 so the
        # comparison is not polluted by the kernel's own time derivative
        deltas = [(0.0, 0.0), (0.3, 0.1), (0.5, 0.5)]
        for dx, dy in deltas:
            a1 = lbm.standard_torus_kernel(dx, dy, 0.0998)
            a2 = lbm.standard_torus_kernel(dx, dy, 0.0999)
            b1 = lbm.standard_torus_kernel(dx, dy, 0.1001)
            b2 = lbm.standard_torus_kernel(dx, dy, 0.1002)
            image = 2 * a2 - a1
            fourier = 2 * b1 - b2
            assert abs(image - fourier) <= 1e-6 * max(float(fourier), 1.0)

    def test_integrates_to_one(self):
        axis = (np.arange(64) + 0.5) / 64
        for t in (0.02, 0.5):
            vals = lbm.standard_torus_kernel(axis[:, None] - 0.37, axis[None, :] - 0.81, t)
            assert abs(float(vals.sum()) / 64**2 - 1.0) <= 1e-6

    def test_rejects_bad_time(self):
        with pytest.raises(ValueError, match="positive"):
            lbm.standard_torus_kernel(0.1, 0.1, 0.0)


class TestIntervalDensities:
    def test_killed_mass_below_one_and_decreasing(self):
        halfwidth = 0.1
        ys = np.linspace(-halfwidth * 0.9995, halfwidth * 0.9995, 1601)
        masses = []
        for s in (0.0005, 0.002, 0.02, 0.05):
            vals = np.array([lbm.killed_density(s, 0.02, y, halfwidth) for y in ys])
            assert vals.min() >= 0.0
            masses.append(float(np.trapezoid(vals, ys)))
        assert all(m <= 1.0 + 1e-10 for m in masses)
        assert masses == sorted(masses, reverse=True)

    def test_conditioned_integrates_to_one(self):
        halfwidth = 0.1
        ys = np.linspace(-halfwidth * 0.99995, halfwidth * 0.99995, 4001)
        for s in (0.002, 0.02, 0.5):
            vals = np.array([lbm.conditioned_density(s, 0.02, y, halfwidth) for y in ys])
            assert abs(float(np.trapezoid(vals, ys)) - 1.0) <= 1e-8

    def test_killed_symmetric(self):
        assert lbm.killed_density(0.01, 0.03, -0.05, 0.1) == pytest.approx(
            lbm.killed_density(0.01, -0.05, 0.03, 0.1), rel=1e-12
        )

    def test_large_time_profile(self):
        halfwidth = 0.1
        s = 2.0 * halfwidth**2
        ys = np.linspace(-halfwidth * 0.9, halfwidth * 0.9, 101)
        vals = np.array([lbm.conditioned_density(s, 0.02, y, halfwidth) for y in ys])
        ref = (1.0 / halfwidth) * np.cos(math.pi * ys / (2 * halfwidth)) ** 2
        ratio = vals / ref
        assert ratio.max() <= 1.05 and ratio.min() >= 1 / 1.05

    def test_domain_validation(self):
        with pytest.raises(ValueError, match="inside"):
            lbm.killed_density(0.01, 0.2, 0.0, 0.1)
        with pytest.raises(ValueError, match="positive"):
            lbm.conditioned_density(0.0, 0.0, 0.0, 0.1)

    def test_occupation_bounded_by_linear_rate(self):
        halfwidth = 0.1
        configs = [(0.02, 0.0), (0.05, 0.03)]
        for s, x0 in configs:
            occ = lbm.conditioned_occupation(
                s, halfwidth, x0, epsilon=0.02, n_walkers=600, n_steps=32, seed=5
            )
            assert 0.0 < occ <= 1.5 * (s / halfwidth + halfwidth)


class TestArtifactFormats:
    def test_path_csv_shape(self, flat32):
        path = lbm.simulate_bm((0.1, 0.1), 0.01, 0.01 / 8, seed=3)
        func = lbm.pcaf(path, flat32)
        text = lbm.path_to_csv(path, func)
        lines = text.strip().split("\n")
        assert lines[0] == "step,time,x,y,F"
        assert len(lines) == path.times.size + 1
        assert text.endswith("\n")
        bare = lbm.path_to_csv(path)
        assert bare.strip().split("\n")[1].endswith(",")

    def test_estimate_row_format(self):
        row = lbm.format_estimate_row("exit_mean", {"r": 0.125, "gamma": 1.0}, 0.5, 0.01, 64)
        assert row == "exit_mean,gamma=1.0;r=0.125,0.5,0.01,64\n"
