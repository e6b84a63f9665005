"""Multiplicative chaos measures on the torus grid and their diagnostics.

A measure is built from one field sample by exponential reweighting of the
uniform cell masses; everything downstream (moment scaling, tail censuses,
envelope fits, the box assumption suite) reads the immutable mass grid.

Threshold conventions: exceedance thresholds are powers of the set's
*diameter* (``2r`` for balls, ``2t`` for boxes), and box censuses count
strict exceedance, so the flat measure (whose box masses hit the threshold
exactly) censuses to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import exponents
from .torus_field import FieldSample, TorusGrid

__all__ = [
    "ChaosMeasure",
    "MomentScalingReport",
    "ChernoffReport",
    "ThickBoxReport",
    "AssumptionReport",
    "build_measure",
    "ball_mass",
    "ball_mass_grid",
    "moment_scaling",
    "chernoff_tail",
    "holder_envelope",
    "log_kernel_integral",
    "thick_box_census",
    "assumption_suite",
    "flat_suite_threshold",
    "sample_measure_points",
]

MAX_BALL_RADIUS = math.sqrt(2.0) / 2.0


@dataclass
class ChaosMeasure:
    """Cell masses ``m_i = exp(gamma X_i - gamma^2 sigma^2 / 2) h^2``."""

    grid: TorusGrid
    gamma: float
    masses: np.ndarray  # shape (n, n), read-only
    total: float


def build_measure(field: FieldSample, gamma: float) -> ChaosMeasure:
    """Reweight the uniform measure by the exponentiated field.

    ``gamma = 0`` returns the uniform measure with total exactly 1; the
    ensemble mean of ``total`` over field replicas is 1 for every gamma
    (the normalization term is the exact pointwise variance).
    """
    exponents.check_gamma(gamma)
    g = float(gamma)
    h2 = field.grid.h * field.grid.h
    masses = np.exp(g * field.values - 0.5 * g * g * field.sigma2) * h2
    masses.flags.writeable = False
    return ChaosMeasure(grid=field.grid, gamma=g, masses=masses, total=float(masses.sum()))


def _check_radius(r):
    if not 0.0 < r <= MAX_BALL_RADIUS:
        raise ValueError(f"ball radius must lie in (0, sqrt(2)/2], got {r!r}")


def _center_distances(grid, x, y):
    """Torus distance from ``(x, y)`` to every cell center, shape (n, n)."""
    ax = grid.axis()
    dx = ax - x
    dx -= np.round(dx)
    dy = ax - y
    dy -= np.round(dy)
    return np.sqrt(dx[:, None] ** 2 + dy[None, :] ** 2)


def ball_mass(measure: ChaosMeasure, x, r) -> float:
    """Mass of cells whose centers lie within torus distance ``r`` of ``x``."""
    _check_radius(r)
    d = _center_distances(measure.grid, x[0], x[1])
    return float(measure.masses[d <= r].sum())


def _disc_indicator(grid, r):
    """Displacement-indexed indicator of ``|displacement| <= r``."""
    n = grid.n
    idx = np.arange(n)
    d = np.minimum(idx, n - idx) * grid.h
    d2 = d[:, None] ** 2 + d[None, :] ** 2
    return (d2 <= r * r).astype(float)


def ball_mass_grid(measure: ChaosMeasure, r) -> np.ndarray:
    """Ball masses centered at every cell center simultaneously (periodic
    convolution with the disc indicator); entry ``[i, j]`` equals
    ``ball_mass`` at the center of cell ``(i, j)``."""
    _check_radius(r)
    disc = _disc_indicator(measure.grid, r)
    conv = np.fft.irfft2(
        np.fft.rfft2(measure.masses) * np.fft.rfft2(disc), s=measure.masses.shape
    )
    return np.maximum(conv, 0.0)


def _check_dyadic_radii(radii, grid):
    radii = [float(r) for r in radii]
    if len(radii) < 4:
        raise ValueError("need at least 4 dyadic scales")
    for a, b in zip(radii, radii[1:]):
        if not b < a:
            raise ValueError("radii must be strictly decreasing")
        if abs(b / a - 0.5) > 1e-12:
            raise ValueError("radii must halve between consecutive scales")
    if radii[0] > 0.25 + 1e-12 or radii[-1] < 8.0 * grid.h - 1e-12:
        raise ValueError(f"radii must lie in [8h, 0.25] = [{8 * grid.h}, 0.25]")
    return radii


def _slope(logx, logy):
    design = np.vstack([logx, np.ones_like(logx)]).T
    return float(np.linalg.lstsq(design, logy, rcond=None)[0][0])


@dataclass
class MomentScalingReport:
    """Power-law fit of the p-th ball-mass moment against the radius."""

    p: float
    radii: list
    log_mean_moments: list
    zeta_hat: float
    zeta_stderr: float
    zeta_ref: float
    moment_warning: bool
    n_replicas: int

    CSV_HEADER = "radius,log_mean_moment"

    def to_csv(self):
        lines = [self.CSV_HEADER]
        for r, v in zip(self.radii, self.log_mean_moments):
            lines.append(f"{r!r},{v!r}")
        return "\n".join(lines) + "\n"


def moment_scaling(replicas, gamma, p, radii, center=(0.5, 0.5)) -> MomentScalingReport:
    """Fit ``log E[M(B(x0, r))^p]`` against ``log r`` over an ensemble.

    Parameters
    ----------
    replicas : sequence of ChaosMeasure
        At least 64 independent measures with matching gamma.
    p : float
        Moment order; ``p >= 4/gamma^2`` flags the report (the moment does
        not exist in the continuum) but still produces the fit.
    radii : sequence of float
        Strictly decreasing, halving, within ``[8h, 0.25]``.

    Returns
    -------
    MomentScalingReport
        ``zeta_hat`` is the fitted slope with a jackknife standard error;
        ``zeta_ref`` is the closed-form exponent.
    """
    replicas = list(replicas)
    if len(replicas) < 64:
        raise ValueError(f"need at least 64 replicas, got {len(replicas)}")
    grid = replicas[0].grid
    radii = _check_dyadic_radii(radii, grid)
    for m in replicas:
        if abs(m.gamma - gamma) > 1e-12:
            raise ValueError("replica gamma does not match the requested gamma")

    dist = _center_distances(grid, center[0], center[1])
    flat = [m.masses.reshape(-1) for m in replicas]
    powers = np.empty((len(radii), len(replicas)))
    for i, r in enumerate(radii):
        idx = np.nonzero(dist.reshape(-1) <= r)[0]
        for j, masses in enumerate(flat):
            powers[i, j] = masses[idx].sum() ** p

    log_r = np.log(np.asarray(radii))
    log_means = np.log(powers.mean(axis=1))
    zeta_hat = _slope(log_r, log_means)

    # leave-one-replica-out jackknife on the fitted slope
    nrep = len(replicas)
    totals = powers.sum(axis=1, keepdims=True)
    jack = np.empty(nrep)
    for j in range(nrep):
        lm = np.log((totals[:, 0] - powers[:, j]) / (nrep - 1))
        jack[j] = _slope(log_r, lm)
    stderr = float(np.sqrt((nrep - 1) * np.var(jack, ddof=0)))

    return MomentScalingReport(
        p=float(p),
        radii=radii,
        log_mean_moments=[float(v) for v in log_means],
        zeta_hat=zeta_hat,
        zeta_stderr=stderr,
        zeta_ref=exponents.zeta(gamma, p),
        moment_warning=not exponents.moment_exists(gamma, p),
        n_replicas=nrep,
    )


@dataclass
class ChernoffReport:
    """Empirical exceedance probabilities of diameter-power mass thresholds."""

    gamma: float
    a: float
    radii: list
    probabilities: list
    fitted_exponent: float
    reference_exponent: float
    n_replicas: int


def chernoff_tail(replicas, gamma, a, radii, center=(0.5, 0.5)) -> ChernoffReport:
    """Tail census: fraction of replicas with ``M(B(x0,r)) >= (2r)^(2+g^2/2-ga)``.

    The fitted exponent is the slope of ``log P`` against ``log r`` over the
    radii with nonzero counts (``nan`` when fewer than two); the reference
    is the quadratic rate ``a^2/2``.
    """
    if a < 0:
        raise ValueError(f"thickness parameter a must be >= 0, got {a!r}")
    replicas = list(replicas)
    if len(replicas) < 64:
        raise ValueError(
            f"insufficient replicas for tail estimation: need >= 64, got {len(replicas)}"
        )
    grid = replicas[0].grid
    radii = _check_dyadic_radii(radii, grid)
    g = float(gamma)
    exponents.check_gamma(g)

    dist = _center_distances(grid, center[0], center[1]).reshape(-1)
    flat = [m.masses.reshape(-1) for m in replicas]
    probs = []
    for r in radii:
        idx = np.nonzero(dist <= r)[0]
        thr = (2.0 * r) ** (2.0 + g * g / 2.0 - g * a)
        hits = sum(1 for masses in flat if masses[idx].sum() >= thr)
        probs.append(hits / len(replicas))

    pos = [(math.log(r), math.log(p)) for r, p in zip(radii, probs) if p > 0.0]
    if len(pos) >= 2:
        fitted = _slope(np.array([u for u, _ in pos]), np.array([v for _, v in pos]))
    else:
        fitted = float("nan")
    return ChernoffReport(
        gamma=g,
        a=float(a),
        radii=radii,
        probabilities=probs,
        fitted_exponent=fitted,
        reference_exponent=a * a / 2.0,
        n_replicas=len(replicas),
    )


def holder_envelope(measure: ChaosMeasure, radii):
    """Fit the growth exponents of ``sup_x M(B(x,r))`` and ``inf_x M(B(x,r))``.

    Returns ``(sup_exponent_fit, inf_exponent_fit)``; the flat measure gives
    2 for both, reweighting pushes the sup fit down toward the occupation
    exponent and keeps the inf fit positive.
    """
    radii = _check_dyadic_radii(radii, measure.grid)
    sups, infs = [], []
    spec = np.fft.rfft2(measure.masses)
    for r in radii:
        disc = _disc_indicator(measure.grid, r)
        conv = np.fft.irfft2(spec * np.fft.rfft2(disc), s=measure.masses.shape)
        conv = np.maximum(conv, 1e-300)
        sups.append(float(conv.max()))
        infs.append(float(conv.min()))
    log_r = np.log(np.asarray(radii))
    return _slope(log_r, np.log(sups)), _slope(log_r, np.log(infs))


def _log_kernel_sum(measure, x, r, scale):
    """``sum ln_+(scale / d(x, z_i)) m_i`` over centers in the ball, with the
    cell containing ``x`` contributing at ``d = h/2``."""
    grid = measure.grid
    d = _center_distances(grid, x[0], x[1])
    ix, iy = grid.cell_of(x[0], x[1])
    d = d.copy()
    d[ix, iy] = grid.h / 2.0
    mask = d <= r
    vals = np.zeros_like(d)
    np.divide(scale, d, out=vals, where=mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(vals > 1.0, np.log(np.maximum(vals, 1.0)), 0.0)
    return float((lg * measure.masses)[mask].sum())


def log_kernel_integral(measure: ChaosMeasure, x, r) -> float:
    """Logarithmic potential of the ball: ``int_B(x,r) ln_+(1/d) M(dz)``.

    Discretized over cell centers; the self cell (the one containing ``x``)
    uses the half-cell distance ``h/2``.
    """
    _check_radius(r)
    return _log_kernel_sum(measure, x, r, 1.0)


@dataclass
class ThickBoxReport:
    """Census of boxes along the horizontal unit segment whose mass strictly
    exceeds the diameter-power threshold ``(2t)^(2+g^2/2-ag)``."""

    t: float
    a: float
    counts: int
    predicted_exponent: float
    window: str
    n_boxes: int
    box_masses: np.ndarray = dc_field(repr=False, default=None)


def _segment_box_masses(measure, t):
    """Masses of the boxes ``S_k``, k = 0..n, tiling the horizontal segment.

    ``S_k`` is the square of side ``2t`` centered at ``(2kt, 0)``;
    ``n = 1/(2t)`` must be an integer and ``S_0`` coincides with ``S_n``
    (torus wrap); both ends are reported separately to keep the paper's
    indexing.
    """
    grid = measure.grid
    if 2.0 * t < 4.0 * grid.h - 1e-12:
        raise ValueError(f"box side 2t = {2 * t} under-resolves the grid (needs >= 4h = {4 * grid.h})")
    n_boxes = 1.0 / (2.0 * t)
    n = int(round(n_boxes))
    if abs(n_boxes - n) > 1e-9:
        raise ValueError(f"1/(2t) must be an integer box count, got {n_boxes}")
    ax = grid.axis()
    dy = ax - 0.0
    dy -= np.round(dy)
    rows = np.abs(dy) <= t
    col_mass = measure.masses[:, rows].sum(axis=1)
    masses = np.empty(n + 1)
    for k in range(n + 1):
        dx = ax - 2.0 * k * t
        dx -= np.round(dx)
        masses[k] = col_mass[np.abs(dx) <= t].sum()
    return masses, n


def thick_box_census(measure: ChaosMeasure, t, a, window="tube") -> ThickBoxReport:
    """Count boxes with ``M(S_k) > (2t)^(2 + g^2/2 - a g)`` in a window.

    ``window`` is "tube" (all boxes) or "midpoint" (boxes meeting the
    sqrt(t)-neighborhood of the segment midpoint).  Counting is strict, so
    the flat measure — every box mass exactly at the a-independent
    threshold — censuses to zero.
    """
    if window not in ("tube", "midpoint"):
        raise ValueError(f"window must be 'tube' or 'midpoint', got {window!r}")
    masses, n = _segment_box_masses(measure, t)
    g = measure.gamma
    thr = (2.0 * t) ** (2.0 + g * g / 2.0 - a * g)
    if window == "tube":
        sel = np.ones(n + 1, dtype=bool)
        predicted = a * a / 2.0 - 1.0
    else:
        centers = 2.0 * t * np.arange(n + 1)
        sel = np.abs(centers - 0.5) <= t + math.sqrt(t)
        predicted = (a * a - 1.0) / 2.0
    counts = int(np.count_nonzero(masses[sel] > thr))
    return ThickBoxReport(
        t=float(t),
        a=float(a),
        counts=counts,
        predicted_exponent=predicted,
        window=window,
        n_boxes=int(np.count_nonzero(sel)),
        box_masses=masses,
    )


@dataclass
class AssumptionReport:
    """Evaluation of the five box conditions along the segment from x to y."""

    t: float
    eta: float
    epsilon: float
    a1_lhs: float
    a1_threshold: float
    a2_lhs: float
    a2_threshold: float
    a3_count: int
    a3_threshold: float
    a4_lhs: float
    a4_threshold: float
    a5_ok: bool
    W: np.ndarray = dc_field(repr=False, default=None)

    @property
    def passes(self):
        return {
            "A1": self.a1_lhs <= self.a1_threshold,
            "A2": self.a2_lhs <= self.a2_threshold,
            "A3": self.a3_count <= self.a3_threshold,
            "A4": self.a4_lhs <= self.a4_threshold,
            "A5": self.a5_ok,
        }

    @property
    def all_pass(self):
        return all(self.passes.values())


def _log_tail_field(measure, t):
    """Grid of ``sum_z ln_+(t / d(c, z)) m_z`` restricted to ``d <= t``,
    for every cell center ``c`` at once (periodic convolution)."""
    grid = measure.grid
    n = grid.n
    idx = np.arange(n)
    d1 = np.minimum(idx, n - idx) * grid.h
    d = np.sqrt(d1[:, None] ** 2 + d1[None, :] ** 2)
    d[0, 0] = grid.h / 2.0
    kern = np.where(d <= t, np.log(np.maximum(t / d, 1.0)), 0.0)
    conv = np.fft.irfft2(np.fft.rfft2(measure.masses) * np.fft.rfft2(kern), s=(n, n))
    return np.maximum(conv, 0.0)


def assumption_suite(measure: ChaosMeasure, x, y, t, eta, epsilon) -> AssumptionReport:
    """Evaluate the five speed-up conditions for the segment from x to y.

    Boxes of side ``2t`` (torus units) tile the segment; box ``k`` sits at
    arclength ``2kt`` from ``x``, so ``|y - x| / (2t)`` must be an integer.
    The rescaled square roots ``W'_k = t^(-2 - g^2/8 + eta/2) sqrt(M(S_k))``
    are thresholded at ``1/t`` and zeroed in the two end boxes at each end;
    the five reported conditions are the speed-up cost bound, the expected
    clock bound, the midpoint bad-box count, the endpoint log-tail
    potentials, and the end-box zeros.
    """
    grid = measure.grid
    if eta <= 0 or epsilon <= 0:
        raise ValueError("eta and epsilon must be positive")
    dx = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    dx -= np.round(dx)
    dist = float(np.hypot(dx[0], dx[1]))
    if dist < 4.0 * t:
        raise ValueError("x and y must be at macroscopic distance (>= 4t)")
    if 2.0 * t < 4.0 * grid.h - 1e-12:
        raise ValueError(f"box side 2t = {2 * t} under-resolves the grid (needs >= 4h = {4 * grid.h})")
    n_boxes = dist / (2.0 * t)
    n = int(round(n_boxes))
    if abs(n_boxes - n) > 1e-6:
        raise ValueError(f"|y - x| / (2t) must be an integer box count, got {n_boxes}")

    ux, uy = dx[0] / dist, dx[1] / dist
    ax = grid.axis()
    cx = ax[:, None] - x[0]
    cy = ax[None, :] - x[1]
    cx = cx - np.round(cx)
    cy = cy - np.round(cy)
    par = cx * ux + cy * uy
    perp = -cx * uy + cy * ux
    in_tube = np.abs(perp) <= t
    k_of = np.floor((par + t) / (2.0 * t)).astype(np.int64)
    sel = in_tube & (k_of >= 0) & (k_of <= n)
    masses = np.bincount(k_of[sel], weights=measure.masses[sel], minlength=n + 1)

    g = measure.gamma
    w_prime = t ** (-2.0 - g * g / 8.0 + eta / 2.0) * np.sqrt(masses)
    W = np.where(w_prime >= 1.0 / t, w_prime, 0.0)
    ends = [0, 1, n - 1, n]
    W[ends] = 0.0

    a1_lhs = float(t * W.sum())
    a2_lhs = float((1.0 / t) * np.sum(masses / (1.0 / t + W)))
    mass_bad = masses >= t ** (2.0 + g * g / 4.0 - eta)
    bad = (W != 0.0) | mass_bad
    centers = 2.0 * t * np.arange(n + 1)
    window = np.abs(centers - dist / 2.0) <= t + math.sqrt(t)
    a3_count = int(np.count_nonzero(bad & window))

    tail = _log_tail_field(measure, t)
    dist_x = _center_distances(grid, x[0], x[1])
    dist_y = _center_distances(grid, y[0], y[1])
    a4_lhs = float(tail[dist_x <= t].max() + tail[dist_y <= t].max())

    thr_scale = t ** (1.0 + g * g / 4.0 - eta)
    return AssumptionReport(
        t=float(t),
        eta=float(eta),
        epsilon=float(epsilon),
        a1_lhs=a1_lhs,
        a1_threshold=1.0 / t,
        a2_lhs=a2_lhs,
        a2_threshold=thr_scale,
        a3_count=a3_count,
        a3_threshold=epsilon / (6.0 * math.sqrt(t)),
        a4_lhs=a4_lhs,
        a4_threshold=thr_scale,
        a5_ok=bool(np.all(W[ends] == 0.0)),
        W=W,
    )


def flat_suite_threshold(eta, epsilon, distance):
    """Largest ``t`` below which the flat measure passes all five conditions.

    Closed-form evaluation at ``gamma = 0`` (box masses are exactly
    ``(2t)^2``): the bad-box mass test demands ``4 t^eta < 1``, the
    thresholding ``2 t^(eta/2) < 1``, the clock bound
    ``2 D t^eta + 4 t^(1+eta) <= 1``, and the endpoint potentials
    ``pi t^(1+eta) <= 1`` with a 1.5 discretization allowance.  All are
    monotone in ``t``, so the minimum of the individual solutions is the
    threshold.
    """
    if eta <= 0 or epsilon <= 0 or not 0 < distance <= math.sqrt(2.0) / 2.0:
        raise ValueError("need eta, epsilon > 0 and 0 < distance <= sqrt(2)/2")
    t_mass = 4.0 ** (-1.0 / eta)
    t_w = 2.0 ** (-2.0 / eta)

    def a2_margin(t):
        return 2.0 * distance * t**eta + 4.0 * t ** (1.0 + eta) - 1.0

    lo, hi = 1e-9, 0.5
    if a2_margin(hi) <= 0:
        t_a2 = hi
    else:
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if a2_margin(mid) <= 0:
                lo = mid
            else:
                hi = mid
        t_a2 = lo
    t_a4 = (1.5 * math.pi) ** (-1.0 / (1.0 + eta))
    return min(t_mass, t_w, t_a2, t_a4)


def sample_measure_points(measure: ChaosMeasure, count, rng, region=None):
    """Draw cell-center points with probability proportional to cell mass.

    ``region`` restricts the draw to a ball ``(center, radius)``; ``rng`` is
    a numpy Generator.  Returns an array of shape ``(count, 2)``.
    """
    grid = measure.grid
    w = measure.masses
    if region is not None:
        (px, py), r = region
        _check_radius(r)
        mask = _center_distances(grid, px, py) <= r
        w = np.where(mask, w, 0.0)
    flat = w.reshape(-1)
    total = flat.sum()
    if total <= 0:
        raise ValueError("selected region carries no mass")
    idx = rng.choice(flat.size, size=int(count), p=flat / total)
    ax = grid.axis()
    return np.column_stack([ax[idx // grid.n], ax[idx % grid.n]])
