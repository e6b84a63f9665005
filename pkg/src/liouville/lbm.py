"""Path-level machinery: torus Brownian motion, bridges, the additive
functional F, its inverse time change, exit times, and bridge estimators.

Paths live on the planar lift (so displacement moments are well defined) and
wrap into ``[0,1)^2`` for every cell lookup.  The additive functional along a
path accumulates the measure's cell density ``rho = m / h^2`` with
left-endpoint steps,

    F(t_k) = sum_{j<k} rho(B_{t_j}) dt,

and the time-changed process reads the path at ``F^{-1}``.  The flat measure
(``gamma = 0``) collapses everything to standard Brownian motion: ``F(t) = t``
exactly, which the estimators exploit as an oracle regime.

The last section carries the one-dimensional interval densities used by the
crossing estimates: the killed density (Dirichlet eigenseries) and its
ground-state conditioning, plus a grid sampler for the conditioned walk.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _backend
from .gmc import ChaosMeasure

__all__ = [
    "BmPath",
    "Pcaf",
    "BridgeSpec",
    "ExitTimeSample",
    "NeedsExtensionError",
    "simulate_bm",
    "simulate_bridge",
    "pcaf",
    "time_change",
    "exit_time",
    "exit_samples",
    "exit_probability",
    "bridge_laplace",
    "mc_resolvent",
    "mc_heat_kernel",
    "standard_torus_kernel",
    "standard_torus_resolvent",
    "killed_density",
    "conditioned_density",
    "conditioned_occupation",
    "path_to_csv",
    "format_estimate_row",
]


class NeedsExtensionError(RuntimeError):
    """The simulated path is too short for the requested time change."""


@dataclass
class BmPath:
    """Uniform-step path: ``lift`` is the unwrapped planar trajectory."""

    times: np.ndarray  # shape (k+1,), starting at 0
    lift: np.ndarray  # shape (k+1, 2), lift[0] = start point
    seed: int

    @property
    def positions(self) -> np.ndarray:
        """Wrapped view of the trajectory, in [0, 1)^2."""
        return self.lift - np.floor(self.lift)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass
class Pcaf:
    """The additive functional sampled on the driving path's grid."""

    times: np.ndarray
    values: np.ndarray  # F(t_k), nondecreasing, values[0] = 0


@dataclass
class BridgeSpec:
    """Bridge from ``x`` to ``y`` with lifetime ``t``, step ``dt``."""

    x: tuple
    y: tuple
    t: float
    dt: float
    homotopy: str = "nearest"

    def __post_init__(self):
        if not (0 < self.dt <= self.t / 16.0):
            raise ValueError(
                f"bridge step must satisfy 0 < dt <= t/16, got dt={self.dt}, t={self.t}"
            )
        if self.homotopy != "nearest":
            raise ValueError(f"unknown homotopy selector {self.homotopy!r}")

    @property
    def n_steps(self) -> int:
        n = int(round(self.t / self.dt))
        if abs(n * self.dt - self.t) > 1e-9 * max(self.t, 1.0):
            raise ValueError(f"lifetime {self.t} is not a whole number of steps dt={self.dt}")
        return n


@dataclass
class ExitTimeSample:
    """First exit from the ball: Euclidean clock and its F-image."""

    x: tuple
    r: float
    tau: float  # F at the exit step
    t_exit: float  # Euclidean exit time


def _check_steps(total, dt):
    if not (0 < dt <= total):
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={total}")
    n = int(round(total / dt))
    if abs(n * dt - total) > 1e-9 * max(total, 1.0):
        raise ValueError(f"horizon {total} is not a whole number of steps dt={dt}")
    return n


def simulate_bm(x, T, dt, seed) -> BmPath:
    """Gaussian-increment torus Brownian motion started at ``x``."""
    n = _check_steps(T, dt)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    steps = rng.standard_normal((n, 2)) * math.sqrt(dt)
    lift = np.empty((n + 1, 2))
    lift[0] = x
    np.cumsum(steps, axis=0, out=lift[1:])
    lift[1:] += np.asarray(x)[None, :]
    return BmPath(times=np.arange(n + 1) * dt, lift=lift, seed=seed)


def nearest_lift(x, y):
    """The planar representative of ``y`` closest to ``x``."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(y, dtype=float) - x
    d -= np.round(d)
    return x + d


def simulate_bridge(spec: BridgeSpec, seed) -> BmPath:
    """Brownian bridge to the nearest lift of ``y``; endpoint hit exactly.

    Sequential conditional sampling: given the current point with time
    ``rem`` remaining, the next point is Gaussian with mean pulled toward
    the target by ``dt/rem`` and variance ``dt (rem - dt) / rem`` per
    coordinate — exact for every step, so the final step has variance zero.
    """
    n = spec.n_steps
    target = nearest_lift(spec.x, spec.y)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    noise = rng.standard_normal((n, 2))
    lift = np.empty((n + 1, 2))
    lift[0] = spec.x
    for k in range(n):
        rem = spec.t - k * spec.dt
        mean = lift[k] + (target - lift[k]) * (spec.dt / rem)
        sd = math.sqrt(spec.dt * max(rem - spec.dt, 0.0) / rem)
        lift[k + 1] = mean + sd * noise[k]
    lift[n] = target
    return BmPath(times=np.arange(n + 1) * spec.dt, lift=lift, seed=seed)


def _cells_of(positions, n):
    cix = np.clip((positions[:, 0] * n).astype(np.int64), 0, n - 1)
    ciy = np.clip((positions[:, 1] * n).astype(np.int64), 0, n - 1)
    return cix, ciy


def pcaf(path: BmPath, measure: ChaosMeasure) -> Pcaf:
    """Left-endpoint accumulation of the cell density along the path."""
    grid = measure.grid
    rho = measure.masses / grid.h**2
    pos = path.positions
    cix, ciy = _cells_of(pos[:-1], grid.n)
    acc = np.empty(cix.shape[0])
    _backend.rho_cumsum(rho, cix, ciy, acc)
    values = np.empty(path.times.shape[0])
    values[0] = 0.0
    values[1:] = acc * path.dt
    return Pcaf(times=path.times.copy(), values=values)


def time_change(path: BmPath, functional: Pcaf, t_liouville):
    """Position of the time-changed process at intrinsic time ``t_liouville``.

    Reads the path at ``s* = F^{-1}(t_liouville)``, linearly interpolating
    both the functional and the trajectory inside a step.
    """
    if t_liouville < 0:
        raise ValueError("intrinsic time must be nonnegative")
    values = functional.values
    if t_liouville > values[-1]:
        raise NeedsExtensionError(
            f"F reaches only {values[-1]:.6g} < {t_liouville:.6g}; extend the path"
        )
    k = int(np.searchsorted(values, t_liouville, side="right") - 1)
    if k >= values.shape[0] - 1:
        point = path.lift[-1]
    else:
        gain = values[k + 1] - values[k]
        frac = 0.0 if gain == 0.0 else (t_liouville - values[k]) / gain
        point = path.lift[k] + frac * (path.lift[k + 1] - path.lift[k])
    wrapped = point - np.floor(point)
    return (float(wrapped[0]), float(wrapped[1]))


def _default_dt(measure):
    return measure.grid.h**2 / 4.0


def _validate_ball(measure, r):
    h = measure.grid.h
    if r < 8 * h:
        raise ValueError(f"ball radius {r} below the resolution floor 8h = {8 * h}")
    if r >= math.sqrt(2.0) / 2.0:
        raise ValueError(f"ball radius {r} not smaller than the torus diameter sqrt(2)/2")


def exit_samples(x, r, measure: ChaosMeasure, n_paths, dt=None, seed=0, chunk_steps=512):
    """Batch of first-exit samples from ``B(x, r)``: arrays ``(tau, t_exit)``.

    Paths advance in Gaussian chunks through the compiled stepping kernel;
    each path freezes at the first step whose torus distance from the centre
    reaches ``r``, recording the Euclidean clock and the accumulated
    functional there.
    """
    if dt is None:
        dt = _default_dt(measure)
    _validate_ball(measure, r)
    if n_paths < 1:
        raise ValueError("need at least one path")
    grid = measure.grid
    rho = measure.masses / grid.h**2
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cx, cy = float(x[0]), float(x[1])
    xs = np.full(n_paths, cx)
    ys = np.full(n_paths, cy)
    ts = np.zeros(n_paths)
    fs = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=np.uint8)
    out_t = np.zeros(n_paths)
    out_f = np.zeros(n_paths)
    sqdt = math.sqrt(dt)
    max_chunks = int(math.ceil(200.0 * (r * r / 2.0) / (dt * chunk_steps))) + 64
    for _ in range(max_chunks):
        normals = rng.standard_normal((chunk_steps, n_paths, 2))
        n_alive = _backend.exit_chunk(
            xs, ys, ts, fs, alive, rho, sqdt, dt, cx, cy, r * r, normals, out_t, out_f
        )
        if n_alive == 0:
            break
    else:
        raise RuntimeError(
            f"{int(alive.sum())} paths failed to exit B({x}, {r}) within the step budget"
        )
    return out_f, out_t


def exit_time(x, r, measure: ChaosMeasure, dt=None, seed=0) -> ExitTimeSample:
    """One first-exit sample from the periodic ball ``B(x, r)``."""
    tau, t_exit = exit_samples(x, r, measure, 1, dt=dt, seed=seed)
    return ExitTimeSample(x=(float(x[0]), float(x[1])), r=float(r), tau=float(tau[0]), t_exit=float(t_exit[0]))


def exit_probability(x, r, beta_exp, measure: ChaosMeasure, n_paths, dt=None, seed=0):
    """Empirical ``P(tau <= r^beta_exp)`` over ``n_paths`` exits."""
    tau, _ = exit_samples(x, r, measure, n_paths, dt=dt, seed=seed)
    return float(np.mean(tau <= r**beta_exp))


def _bridge_f_totals(spec: BridgeSpec, measure: ChaosMeasure, n_samples, rng):
    """Final F-values of ``n_samples`` bridges, streamed step by step."""
    n = spec.n_steps
    grid_n = measure.grid.n
    rho = measure.masses / measure.grid.h**2
    target = nearest_lift(spec.x, spec.y)
    pos = np.tile(np.asarray(spec.x, dtype=float), (n_samples, 1))
    totals = np.zeros(n_samples)
    for k in range(n):
        wrapped = pos - np.floor(pos)
        cix, ciy = _cells_of(wrapped, grid_n)
        totals += rho[cix, ciy] * spec.dt
        rem = spec.t - k * spec.dt
        sd = math.sqrt(spec.dt * max(rem - spec.dt, 0.0) / rem)
        pos += (target[None, :] - pos) * (spec.dt / rem)
        pos += sd * rng.standard_normal((n_samples, 2))
    return totals


def bridge_laplace(spec: BridgeSpec, measure: ChaosMeasure, lam, n_samples, seed):
    """Monte Carlo ``E[exp(-lam F(t))]`` over bridges: ``(estimate, stderr)``."""
    if n_samples < 1000:
        raise ValueError(f"need at least 1000 bridge samples, got {n_samples}")
    if lam < 0:
        raise ValueError("laplace parameter must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    totals = _bridge_f_totals(spec, measure, n_samples, rng)
    vals = np.exp(-lam * totals)
    est = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(n_samples))
    return est, stderr


def standard_torus_kernel(dx, dy, t):
    """Wrapped heat kernel of the standard torus walk (variance ``t`` per
    coordinate): image sum for small ``t``, Fourier sum otherwise."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if t <= 0:
        raise ValueError("time must be positive")
    if t < 0.1:
        acc = np.zeros(np.broadcast(dx, dy).shape)
        for wx in range(-3, 4):
            for wy in range(-3, 4):
                acc = acc + np.exp(-((dx + wx) ** 2 + (dy + wy) ** 2) / (2.0 * t))
        return acc / (2.0 * math.pi * t)
    kmax = int(math.ceil(math.sqrt(40.0 / (2.0 * math.pi**2 * t)))) + 1
    ks = np.arange(-kmax, kmax + 1)
    acc = np.zeros(np.broadcast(dx, dy).shape)
    for k1 in ks:
        for k2 in ks:
            acc = acc + math.exp(-2.0 * math.pi**2 * (k1 * k1 + k2 * k2) * t) * np.cos(
                2.0 * math.pi * (k1 * dx + k2 * dy)
            )
    return acc


def standard_torus_resolvent(dx, dy, lam, n_nodes=140):
    """Continuum-walk resolvent ``int_0^inf e^{-lam t} p_t dt`` off the
    diagonal, by Gauss-Legendre quadrature in log-time."""
    if lam <= 0:
        raise ValueError("resolvent parameter must be positive")
    t_min, t_max = 1e-12, 80.0 / lam
    u0, u1 = math.log(t_min), math.log(t_max)
    xs, ws = np.polynomial.legendre.leggauss(n_nodes)
    total = 0.0
    for xq, wq in zip(xs, ws):
        t = math.exp(0.5 * (u1 - u0) * xq + 0.5 * (u1 + u0))
        total += 0.5 * (u1 - u0) * wq * math.exp(-lam * t) * t * float(
            standard_torus_kernel(dx, dy, t)
        )
    return total


def mc_resolvent(x, y_cell, measure: ChaosMeasure, lam, t_max, n_samples, seed, n_t=28):
    """Bridge estimate of the reweighted resolvent at ``(x, centre of y_cell)``.

    Quadrature in lifetime of ``E[e^{-lam F(t)}] p_t(x, y)`` with the
    standard torus kernel as weight, geometric lifetime grid, trapezoid in
    log-time.  Warns when ``lam * t_max < 20`` (truncated tail may matter).
    """
    if lam <= 0:
        raise ValueError("resolvent parameter must be positive")
    if lam * t_max < 20.0:
        warnings.warn(
            f"mc_resolvent: lam*t_max = {lam * t_max:.3g} < 20; truncation tail may bias the estimate"
        )
    grid = measure.grid
    y = grid.cell_center(*y_cell)
    d = np.asarray(y) - np.asarray(x)
    d -= np.round(d)
    dist2 = float(d @ d)
    if dist2 == 0.0:
        raise ValueError("diagonal evaluation is not supported (short-time divergence)")
    t_lo = max(dist2 / 40.0, 1e-6)
    ts = np.geomspace(t_lo, t_max, n_t)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    per_t = max(int(math.ceil(n_samples / n_t)), 64)
    phi = np.empty(n_t)
    for i, t in enumerate(ts):
        spec = BridgeSpec(x=tuple(x), y=tuple(y), t=float(t), dt=float(t) / 64.0)
        totals = _bridge_f_totals(spec, measure, per_t, rng)
        phi[i] = float(np.mean(np.exp(-lam * totals)))
    weight = np.array([standard_torus_kernel(d[0], d[1], t) for t in ts])
    integrand = phi * weight * ts  # extra t from the log-time substitution
    us = np.log(ts)
    return float(np.trapezoid(integrand, us))


def mc_heat_kernel(x, t, measure: ChaosMeasure, n_paths, dt=None, seed=0, chunk_steps=256):
    """Histogram estimate of the reweighted kernel ``p_t(x, .)`` per cell.

    Runs driving paths until the functional crosses ``t``, interpolates the
    crossing position inside the step, bins the wrapped position, and
    divides by cell masses; the estimate integrates to one exactly.
    """
    if n_paths < 10**4:
        raise ValueError(f"need at least 1e4 paths, got {n_paths}")
    if dt is None:
        dt = _default_dt(measure)
    grid = measure.grid
    n = grid.n
    rho = measure.masses / grid.h**2
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pos = np.tile(np.asarray(x, dtype=float), (n_paths, 1))
    fvals = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    counts = np.zeros((n, n))
    sqdt = math.sqrt(dt)
    budget = 400 * max(int(math.ceil(t / dt)), 1)
    steps_done = 0
    while alive.any():
        if steps_done >= budget:
            raise NeedsExtensionError(
                f"{int(alive.sum())} paths failed to reach F = {t} within the step budget"
            )
        block = min(chunk_steps, budget - steps_done)
        normals = rng.standard_normal((block, n_paths, 2))
        for s in range(block):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            cur = pos[idx]
            wrapped = cur - np.floor(cur)
            cix, ciy = _cells_of(wrapped, n)
            rate = rho[cix, ciy]
            gain = rate * dt
            new_f = fvals[idx] + gain
            step = sqdt * normals[s, idx]
            crossed = new_f >= t
            if crossed.any():
                sel = idx[crossed]
                frac = (t - fvals[sel]) / gain[crossed]
                land = cur[crossed] + frac[:, None] * step[crossed]
                land -= np.floor(land)
                bx, by = _cells_of(land, n)
                np.add.at(counts, (bx, by), 1.0)
                alive[sel] = False
            go = ~crossed
            sel = idx[go]
            pos[sel] = cur[go] + step[go]
            fvals[sel] = new_f[go]
        steps_done += block
    return counts / (n_paths * measure.masses)


_SERIES_CAP = 4000


def _interval_series(s, x, y, halfwidth, shift, tol):
    """Shared eigenseries: ``(1/t) sum_k e^{-(k^2 - shift) pi^2 s / (8 t^2)}
    sin(k pi (x+t)/(2t)) sin(k pi (y+t)/(2t))``."""
    t = halfwidth
    if s <= 0:
        raise ValueError("time must be positive")
    if not (-t < x < t and -t < y < t):
        raise ValueError(f"points must lie inside (-{t}, {t})")
    decay = math.pi**2 * s / (8.0 * t * t)
    # smallest K with envelope e^{-(K^2 - shift) decay} / t below tol
    need = (math.log(max(1.0 / (tol * t), 1.0)) / decay + max(shift, 0.0)) ** 0.5
    kmax = min(int(math.ceil(need)) + 2, _SERIES_CAP)
    if kmax == _SERIES_CAP and math.exp(-(kmax**2 - shift) * decay) / t > tol:
        warnings.warn(
            f"interval density series truncated at {kmax} terms above tolerance {tol:.1e}"
        )
    k = np.arange(1, kmax + 1, dtype=float)
    amp = np.exp(-(k * k - shift) * decay)
    sx = np.sin(k * math.pi * (x + t) / (2.0 * t))
    sy = np.sin(k * math.pi * (y + t) / (2.0 * t))
    return float(np.sum(amp * sx * sy) / t)


def killed_density(s, x, y, halfwidth, tol=1e-12):
    """Transition density of the walk killed at ``±halfwidth``."""
    return max(_interval_series(s, x, y, halfwidth, 0.0, tol), 0.0)


def conditioned_density(s, x, y, halfwidth, tol=1e-12):
    """Transition density of the walk conditioned to stay in the interval
    (ground-state transform); integrates to one in ``y``.

    The ground-state growth factor is folded into the series exponent
    (``k^2 - 1``), so large ``s`` stays finite.
    """
    t = halfwidth
    base = _interval_series(s, x, y, halfwidth, 1.0, tol)
    ratio = math.cos(math.pi * y / (2.0 * t)) / math.cos(math.pi * x / (2.0 * t))
    return max(base * ratio, 0.0)


def conditioned_occupation(s, halfwidth, x0, epsilon, n_walkers, n_steps, seed, grid_cells=256):
    """Empirical occupation density of ``[x0 - eps, x0 + eps]`` for the
    conditioned walk up to time ``s``, per unit length.

    The walk is discretized to a Markov chain on interval cells whose
    transition rows are the conditioned density over one substep.
    """
    t = halfwidth
    if not -t < x0 < t:
        raise ValueError("center must lie inside the interval")
    ds = s / n_steps
    centers = (np.arange(grid_cells) + 0.5) * (2.0 * t / grid_cells) - t
    width = 2.0 * t / grid_cells
    trans = np.empty((grid_cells, grid_cells))
    for i, xi in enumerate(centers):
        row = np.array([conditioned_density(ds, xi, yj, t) for yj in centers])
        trans[i] = row / row.sum()
    cdf = np.cumsum(trans, axis=1)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    state = np.full(n_walkers, int((x0 + t) / width))
    in_band = np.abs(centers - x0) <= epsilon
    occupied = np.zeros(n_walkers)
    for _ in range(n_steps):
        occupied += in_band[state] * ds
        u = rng.random(n_walkers)
        state = np.array([np.searchsorted(cdf[st], uu) for st, uu in zip(state, u)])
        np.clip(state, 0, grid_cells - 1, out=state)
    return float(occupied.mean() / (2.0 * epsilon))


def path_to_csv(path: BmPath, functional: Pcaf = None) -> str:
    """Debug dump ``step,time,x,y,F`` (F blank without a functional)."""
    pos = path.positions
    lines = ["step,time,x,y,F"]
    for k in range(path.times.shape[0]):
        fval = "" if functional is None else repr(float(functional.values[k]))
        lines.append(f"{k},{path.times[k]!r},{pos[k, 0]!r},{pos[k, 1]!r},{fval}")
    return "\n".join(lines) + "\n"


def format_estimate_row(quantity, params, estimate, stderr, n) -> str:
    """Canonical estimator CSV row: ``quantity,params...,estimate,stderr,n``."""
    keys = ";".join(f"{k}={params[k]!r}" for k in sorted(params))
    return f"{quantity},{keys},{estimate!r},{stderr!r},{n}\n"
