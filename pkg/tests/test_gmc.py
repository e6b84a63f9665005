"""Chaos-measure construction, scaling fits, censuses and the box suite."""

import math

import numpy as np
import pytest

from liouville import gmc
from liouville import torus_field as tf

RADII = [0.25, 0.125, 0.0625, 0.03125]


@pytest.fixture(scope="module")
def pool():
    """512 gamma=1 measures on a shared n=256 grid."""
    g = tf.TorusGrid(256)
    return [gmc.build_measure(tf.sample_gff(g, seed=2000 + s), 1.0) for s in range(512)]


@pytest.fixture(scope="module")
def flat512():
    g = tf.TorusGrid(512)
    return gmc.build_measure(tf.sample_gff(g, seed=1), 0.0)


def test_flat_total_exact(flat512):
    assert flat512.total == 1.0
    assert np.all(flat512.masses == flat512.grid.h**2)


def test_masses_immutable(flat512):
    with pytest.raises(ValueError):
        flat512.masses[0, 0] = 2.0


def test_mean_total_near_one(pool):
    totals = np.array([m.total for m in pool])
    stderr = totals.std(ddof=1) / math.sqrt(len(totals))
    assert abs(totals.mean() - 1.0) < 3.0 * stderr


def test_gamma_reweighting_monotone_in_field():
    g = tf.TorusGrid(64)
    f = tf.sample_gff(g, seed=9)
    m1 = gmc.build_measure(f, 0.5)
    m2 = gmc.build_measure(f, 1.0)
    # ln m2 - ln m1 = 0.5 X - 0.375 sigma^2, sign decided by the field
    pivot = 0.75 * f.sigma2
    grew = m2.masses > m1.masses
    assert np.array_equal(grew, f.values > pivot)


def test_build_measure_domain():
    g = tf.TorusGrid(16)
    f = tf.sample_gff(g, seed=0)
    with pytest.raises(ValueError):
        gmc.build_measure(f, 2.0)
    with pytest.raises(ValueError):
        gmc.build_measure(f, -0.3)


def test_ball_mass_flat_area(flat512):
    val = gmc.ball_mass(flat512, (0.5, 0.5), 0.25)
    assert abs(val - math.pi / 16.0) < math.pi * flat512.grid.h
    assert gmc.ball_mass(flat512, (0.3, 0.9), math.sqrt(2.0) / 2.0) == pytest.approx(
        flat512.total, abs=1e-15
    )


def test_ball_mass_monotone_and_domain(flat512):
    m1 = gmc.ball_mass(flat512, (0.2, 0.7), 0.1)
    m2 = gmc.ball_mass(flat512, (0.2, 0.7), 0.2)
    assert m1 <= m2
    for bad in (0.0, -0.1, 0.8):
        with pytest.raises(ValueError):
            gmc.ball_mass(flat512, (0.5, 0.5), bad)


def test_ball_mass_grid_matches_pointwise(pool):
    m = pool[0]
    field = gmc.ball_mass_grid(m, 0.0625)
    ax = m.grid.axis()
    for i, j in ((0, 0), (31, 200), (255, 128)):
        direct = gmc.ball_mass(m, (ax[i], ax[j]), 0.0625)
        assert field[i, j] == pytest.approx(direct, rel=1e-10, abs=1e-14)


def test_moment_scaling_flat():
    g = tf.TorusGrid(256)
    reps = [gmc.build_measure(tf.sample_gff(g, seed=2000 + s), 0.0) for s in range(64)]
    rep = gmc.moment_scaling(reps, 0.0, 0.7, RADII)
    assert rep.zeta_hat == pytest.approx(1.4, abs=0.02)
    assert rep.zeta_ref == pytest.approx(1.4, abs=1e-14)
    assert not rep.moment_warning


def test_moment_scaling_first_moment(pool):
    rep = gmc.moment_scaling(pool, 1.0, 1.0, RADII)
    assert rep.zeta_hat == pytest.approx(2.0, abs=0.05)
    assert rep.zeta_stderr > 0.0


def test_moment_scaling_half_moment(pool):
    rep = gmc.moment_scaling(pool, 1.0, 0.5, RADII)
    assert rep.zeta_ref == pytest.approx(1.125, abs=1e-14)
    assert rep.zeta_hat == pytest.approx(1.125, abs=0.1)


def test_moment_scaling_flags_and_errors(pool):
    rep = gmc.moment_scaling(pool[:64], 1.0, 5.0, RADII)
    assert rep.moment_warning  # p >= 4/gamma^2
    with pytest.raises(ValueError):
        gmc.moment_scaling(pool[:32], 1.0, 1.0, RADII)
    with pytest.raises(ValueError):
        gmc.moment_scaling(pool[:64], 1.0, 1.0, [0.25, 0.125, 0.0625])
    with pytest.raises(ValueError):
        gmc.moment_scaling(pool[:64], 1.0, 1.0, [0.25, 0.2, 0.1, 0.05])
    csv = rep.to_csv()
    assert csv.splitlines()[0] == gmc.MomentScalingReport.CSV_HEADER
    assert len(csv.splitlines()) == 5


def test_chernoff_tail_flat_and_trivial():
    g = tf.TorusGrid(256)
    reps = [gmc.build_measure(tf.sample_gff(g, seed=2000 + s), 0.0) for s in range(64)]
    rep = gmc.chernoff_tail(reps, 0.0, 0.5, RADII)
    assert rep.probabilities == [0.0, 0.0, 0.0, 0.0]  # pi r^2 < (2r)^2
    assert math.isnan(rep.fitted_exponent)


def test_chernoff_tail_gamma1(pool):
    rep = gmc.chernoff_tail(pool, 1.0, 1.0, RADII)
    assert rep.reference_exponent == pytest.approx(0.5, abs=1e-14)
    for r, p in zip(rep.radii, rep.probabilities):
        assert 0.0 <= p <= 1.0
        if p > 0:
            assert math.log(p) / math.log(r) >= 0.5 - 0.15
    assert rep.fitted_exponent >= 0.5 - 0.15


def test_chernoff_monotone_in_a(pool):
    reps = pool[:128]
    probs = [
        gmc.chernoff_tail(reps, 1.0, a, RADII).probabilities for a in (0.0, 0.5, 1.0)
    ]
    for col in range(len(RADII)):
        assert probs[0][col] >= probs[1][col] >= probs[2][col]


def test_chernoff_errors(pool):
    with pytest.raises(ValueError):
        gmc.chernoff_tail(pool[:16], 1.0, 1.0, RADII)
    with pytest.raises(ValueError):
        gmc.chernoff_tail(pool[:64], 1.0, -0.5, RADII)


def test_holder_envelope_flat(flat512):
    sup_fit, inf_fit = gmc.holder_envelope(flat512, RADII)
    assert sup_fit == pytest.approx(2.0, abs=0.05)
    assert inf_fit == pytest.approx(2.0, abs=0.05)


def test_holder_envelope_gamma1():
    g = tf.TorusGrid(512)
    m = gmc.build_measure(tf.sample_gff(g, seed=77), 1.0)
    sup_fit, inf_fit = gmc.holder_envelope(m, RADII)
    assert sup_fit >= 0.5 - 0.25  # alpha(1) - tolerance
    assert inf_fit > 0.0


def test_log_kernel_integral_flat(flat512):
    val = gmc.log_kernel_integral(flat512, (0.5, 0.5), 0.25)
    # radial oracle: 2 pi int_0^r ln(1/s) s ds
    oracle = 2.0 * math.pi * (0.25**2 / 2.0 * math.log(4.0) + 0.25**2 / 4.0)
    assert val == pytest.approx(oracle, rel=0.02)


def test_log_kernel_bound_and_monotone(pool):
    m = pool[1]
    x = (0.37, 0.81)
    v1 = gmc.log_kernel_integral(m, x, 0.0625)
    v2 = gmc.log_kernel_integral(m, x, 0.125)
    assert 0.0 <= v1 <= v2
    n = m.grid.n
    ix, iy = m.grid.cell_of(*x)
    bound = math.log(n) * gmc.ball_mass(m, x, 0.125) + math.log(2 * n) * m.masses[ix, iy]
    assert v2 <= bound + 1e-12


def test_census_flat_counts_zero(flat512):
    for a in (0.0, 0.5, 1.5):
        rep = gmc.thick_box_census(flat512, 2.0**-5, a)
        assert rep.counts == 0
        assert rep.n_boxes == 17
        assert np.allclose(rep.box_masses, (2.0 * 2.0**-5) ** 2)


def test_census_monotonicities(pool):
    m = pool[2]
    t = 2.0**-5
    counts_a = [gmc.thick_box_census(m, t, a).counts for a in (0.0, 0.5, 1.0, 1.5)]
    assert all(c1 >= c2 for c1, c2 in zip(counts_a, counts_a[1:]))
    tube = gmc.thick_box_census(m, t, 0.5, window="tube")
    mid = gmc.thick_box_census(m, t, 0.5, window="midpoint")
    assert mid.counts <= tube.counts
    assert mid.n_boxes < tube.n_boxes
    assert isinstance(tube.counts, int)
    assert tube.counts <= tube.n_boxes


def test_census_majority_at_zero_thickness(pool):
    counts = [gmc.thick_box_census(m, 2.0**-5, 0.0).counts for m in pool[:32]]
    n_boxes = gmc.thick_box_census(pool[0], 2.0**-5, 0.0).n_boxes
    assert np.mean(counts) >= 0.5 * n_boxes


def test_census_supercritical_thickness_vanishes(pool):
    a = math.sqrt(2.0) + 0.2
    for t in (2.0**-4, 2.0**-5):
        counts = [gmc.thick_box_census(m, t, a).counts for m in pool[:32]]
        assert np.mean(counts) <= 0.25
    rep = gmc.thick_box_census(pool[0], 2.0**-5, a)
    assert rep.predicted_exponent == pytest.approx(a * a / 2.0 - 1.0, abs=1e-14)


def test_census_errors(flat512):
    with pytest.raises(ValueError):
        gmc.thick_box_census(flat512, 1.5 * flat512.grid.h, 0.5)  # 2t < 4h
    with pytest.raises(ValueError):
        gmc.thick_box_census(flat512, 0.3, 0.5)  # 1/(2t) not integer
    with pytest.raises(ValueError):
        gmc.thick_box_census(flat512, 2.0**-5, 0.5, window="left")


def test_assumption_suite_flat_below_threshold():
    g = tf.TorusGrid(512)
    m = gmc.build_measure(tf.sample_gff(g, seed=4), 0.0)
    tstar = gmc.flat_suite_threshold(1.0, 0.1, 0.5)
    assert tstar == pytest.approx(0.25, abs=1e-12)
    for t in (2.0**-4, 2.0**-5, 2.0**-6):
        assert t < tstar
        rep = gmc.assumption_suite(m, (0.25, 0.25), (0.75, 0.25), t, 1.0, 0.1)
        assert rep.all_pass, rep.passes


def test_assumption_suite_w_invariant(pool):
    rep = gmc.assumption_suite(pool[3], (0.25, 0.25), (0.75, 0.25), 2.0**-5, 0.5, 1.0)
    W = rep.W
    n = len(W) - 1
    assert W[0] == W[1] == W[n - 1] == W[n] == 0.0
    nz = W[W > 0]
    assert np.all(nz >= 1.0 / 2.0**-5 - 1e-9)
    assert rep.a5_ok


def test_assumption_suite_pass_fraction_improves(pool):
    reps = pool[:48]
    x, y = (0.25, 0.25), (0.75, 0.25)
    fracs = []
    for t in (2.0**-3, 2.0**-4, 2.0**-5):
        fracs.append(
            np.mean([gmc.assumption_suite(m, x, y, t, 1.0, 1.0).all_pass for m in reps])
        )
    assert fracs[-1] >= fracs[0] - 0.05
    assert fracs[-1] >= 0.7


def test_assumption_suite_errors(flat512):
    x = (0.25, 0.25)
    with pytest.raises(ValueError):
        gmc.assumption_suite(flat512, x, (0.27, 0.25), 2.0**-5, 1.0, 1.0)  # too close
    with pytest.raises(ValueError):
        gmc.assumption_suite(flat512, x, (0.75, 0.25), 0.07, 1.0, 1.0)  # not integer
    with pytest.raises(ValueError):
        gmc.assumption_suite(flat512, x, (0.75, 0.25), 2.0**-5, -1.0, 1.0)


def test_sample_measure_points(pool):
    m = pool[4]
    rng = np.random.Generator(np.random.PCG64(123))
    pts = gmc.sample_measure_points(m, 50, rng, region=((0.5, 0.5), 0.1))
    assert pts.shape == (50, 2)
    for p in pts:
        assert tf.TorusGrid.distance(p, (0.5, 0.5)) <= 0.1 + 1e-12
    rng2 = np.random.Generator(np.random.PCG64(123))
    pts2 = gmc.sample_measure_points(m, 50, rng2, region=((0.5, 0.5), 0.1))
    assert np.array_equal(pts, pts2)
    with pytest.raises(ValueError):
        gmc.sample_measure_points(m, 5, rng, region=((0.0, 0.0), 1e-6))
