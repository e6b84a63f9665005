"""Generator, Green operator and heat kernel of the measure-weighted walk.

The generator is ``L = (1/2) rho^{-1} Delta_h`` with ``Delta_h`` the periodic
five-point Laplacian and ``rho_i = m_i / h^2`` the cell density: a walk with
Gaussian-unit clock run against the reweighted volume.  ``L`` is self-adjoint
in the mass inner product ``<f, g>_m = sum f_i g_i m_i``; its mean-zero
sector carries the spectral series for the heat kernel

    p_t(x, y) = 1/M(T) + sum_n exp(-lambda_n t) e_n(x) e_n(y).

Two decomposition routes are provided and must agree: the symmetrized
generator itself, and the inverse of the Green operator ``T``, whose kernel
is *twice* the measure-recentered Green table (the table solves the unit
five-point problem while the walk carries the 1/2 speed factor; doubling the
kernel makes ``T = (-L)^{-1}`` exact on the mean-zero sector).
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gmc import ChaosMeasure
from .torus_field import GreenTable, TorusGrid

__all__ = [
    "LiouvilleOperator",
    "SpectralDecomposition",
    "HeatKernelMatrix",
    "liouville_operator",
    "green_gamma",
    "t_gamma_apply",
    "t_gamma_hs_norm",
    "decompose",
    "heat_kernel",
    "resolvent",
    "heat_kernel_point",
    "resolvent_point",
    "weyl_count",
    "WeylReport",
    "eigenfunction_bound",
    "continuity_modulus",
    "ContinuityReport",
    "positivity_check",
    "flat_eigenvalues",
    "flat_heat_kernel",
    "flat_resolvent",
    "save_decomposition",
    "load_decomposition",
]

DENSE_LIMIT = 64  # largest grid side for full dense eigensolves


@dataclass
class LiouvilleOperator:
    """The generator ``L = (1/2) rho^{-1} Delta_h`` acting on cell fields."""

    measure: ChaosMeasure

    @property
    def grid(self) -> TorusGrid:
        return self.measure.grid

    def apply(self, f):
        """``L f`` for a field of shape ``(n, n)`` (or flat ``n^2``)."""
        grid = self.grid
        shape = np.shape(f)
        arr = np.asarray(f, dtype=float).reshape(grid.n, grid.n)
        lap = (
            np.roll(arr, 1, 0)
            + np.roll(arr, -1, 0)
            + np.roll(arr, 1, 1)
            + np.roll(arr, -1, 1)
            - 4.0 * arr
        ) / grid.h**2
        rho = self.measure.masses / grid.h**2
        out = 0.5 * lap / rho
        return out.reshape(shape)

    def symmetrized(self):
        """Sparse ``H = D^{-1/2} A D^{-1/2}`` with ``-L = D^{-1} A``.

        ``A = (4I - Adj)/2`` is the halved five-point stencil (flat,
        symmetric, PSD) and ``D = diag(m)``; ``H`` is similar to ``-L`` and
        symmetric, so it feeds both dense and iterative eigensolvers.
        """
        n = self.grid.n
        N = n * n
        idx = np.arange(N).reshape(n, n)
        rows = np.repeat(np.arange(N), 4)
        cols = np.concatenate(
            [
                np.roll(idx, 1, 0).reshape(-1)[:, None],
                np.roll(idx, -1, 0).reshape(-1)[:, None],
                np.roll(idx, 1, 1).reshape(-1)[:, None],
                np.roll(idx, -1, 1).reshape(-1)[:, None],
            ],
            axis=1,
        ).reshape(-1)
        data = np.full(rows.shape, -0.5)
        adj = sp.coo_matrix((data, (rows, cols)), shape=(N, N)).tocsr()
        a_mat = sp.eye(N, format="csr") * 2.0 + adj
        d_isqrt = 1.0 / np.sqrt(self.measure.masses.reshape(-1))
        scale = sp.diags(d_isqrt)
        return (scale @ a_mat @ scale).tocsc()


def liouville_operator(measure: ChaosMeasure) -> LiouvilleOperator:
    return LiouvilleOperator(measure=measure)


def green_gamma(green: GreenTable, measure: ChaosMeasure) -> np.ndarray:
    """Measure-recentered Green kernel ``G(x,y) - int G(z,y) M(dz) / M(T)``.

    Dense ``(n^2, n^2)`` matrix indexed by flattened cells.  The recentering
    is applied symmetrically in both arguments (which agrees with the
    one-sided version on the mean-zero sector but keeps the kernel
    symmetric), so the measure-weighted column sums *and* row sums vanish
    and the kernel's Hilbert-Schmidt norm matches the sector spectrum.
    With the flat measure the recentering is a no-op (the table is already
    mean-zero).
    """
    if green.grid.n != measure.grid.n:
        raise ValueError("green table and measure must share a grid")
    n = green.grid.n
    N = n * n
    ii, jj = np.divmod(np.arange(N), n)
    di = (ii[:, None] - ii[None, :]) % n
    dj = (jj[:, None] - jj[None, :]) % n
    kernel = green.values[di, dj]
    mflat = measure.masses.reshape(-1)
    means = (mflat[:, None] * kernel).sum(axis=0) / measure.total
    grand = float(means @ mflat) / measure.total
    return kernel - means[None, :] - means[:, None] + grand


def t_gamma_apply(green_gamma_kernel: np.ndarray, measure: ChaosMeasure, f) -> np.ndarray:
    """Green operator: ``(T f)_i = 2 sum_j K(x_i, x_j) f_j m_j``.

    The doubled recentered kernel inverts ``-L`` exactly on the mean-zero
    sector.  ``f`` is projected onto that sector first (with a warning when
    the projection is not negligible); the output is mean-zero again.
    """
    mflat = measure.masses.reshape(-1)
    vec = np.asarray(f, dtype=float).reshape(-1)
    mean = float(vec @ mflat) / measure.total
    if abs(mean) > 1e-12 * max(1.0, float(np.abs(vec).max())):
        warnings.warn("t_gamma_apply: input had a mass-mean component; projected away")
        vec = vec - mean
    out = 2.0 * (green_gamma_kernel @ (vec * mflat))
    out -= (out @ mflat) / measure.total
    return out.reshape(np.shape(f))


def t_gamma_hs_norm(green_gamma_kernel: np.ndarray, measure: ChaosMeasure) -> float:
    """Squared Hilbert-Schmidt norm of the doubled kernel,
    ``sum_ij (2 K_ij)^2 m_i m_j``; equals ``sum_n lambda_n^{-2}``."""
    mflat = measure.masses.reshape(-1)
    scaled = 2.0 * green_gamma_kernel * np.sqrt(mflat)[:, None] * np.sqrt(mflat)[None, :]
    return float(np.sum(scaled * scaled))


@dataclass
class SpectralDecomposition:
    """Mean-zero-sector eigenpairs, ascending, orthonormal in ``<.,.>_m``."""

    grid: TorusGrid
    gamma: float
    eigenvalues: np.ndarray  # shape (K,)
    eigenvectors: np.ndarray  # shape (N, K), column n is e_n flattened
    total_mass: float
    masses: np.ndarray  # flattened cell masses, shape (N,)


def _fix_signs(vecs):
    # deterministic sign: largest-magnitude entry positive
    piv = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[piv, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def decompose(source, measure: ChaosMeasure, n_eigs=None) -> SpectralDecomposition:
    """Eigendecomposition of the walk on the mean-zero sector.

    ``source`` selects the route: a :class:`LiouvilleOperator` decomposes
    the symmetrized generator; a dense recentered Green kernel (the output
    of :func:`green_gamma`) decomposes the Green operator and inverts its
    eigenvalues.  Exact Green tables make the two spectra coincide — the
    module's central internal consistency oracle.

    Grids larger than ``64`` use a shift-invert iterative solve for the
    smallest ``n_eigs`` generator eigenvalues (``n_eigs`` required there).
    """
    n = measure.grid.n
    N = n * n
    if n_eigs is not None and not 1 <= n_eigs <= N - 1:
        raise ValueError(f"n_eigs must lie in [1, n^2 - 1], got {n_eigs}")
    mflat = measure.masses.reshape(-1)
    sqrt_m = np.sqrt(mflat)

    if isinstance(source, LiouvilleOperator):
        ham = source.symmetrized()
        if n <= DENSE_LIMIT:
            dense = ham.toarray()
            vals, vecs = np.linalg.eigh(dense)
            vals, vecs = vals[1:], vecs[:, 1:]  # drop the constant mode
        else:
            if n_eigs is None:
                raise ValueError(f"grids beyond n={DENSE_LIMIT} need an explicit n_eigs")
            k = n_eigs + 1
            vals, vecs = spla.eigsh(ham, k=k, sigma=-1.0, which="LM")
            order = np.argsort(vals)
            vals, vecs = vals[order][1:], vecs[:, order][:, 1:]
    elif isinstance(source, np.ndarray):
        if source.shape != (N, N):
            raise ValueError(f"kernel shape {source.shape} does not match grid {(N, N)}")
        sym = 2.0 * source * sqrt_m[:, None] * sqrt_m[None, :]
        w = sqrt_m / math.sqrt(measure.total)
        sym = sym - np.outer(w, w @ sym)
        sym = sym - np.outer(sym @ w, w)
        sym = 0.5 * (sym + sym.T)
        tvals, tvecs = np.linalg.eigh(sym)
        keep = tvals > 1e-12 * tvals.max()
        vals = 1.0 / tvals[keep][::-1]
        vecs = tvecs[:, keep][:, ::-1]
    else:
        raise TypeError(f"cannot decompose source of type {type(source).__name__}")

    if np.any(vals <= 0):
        raise ArithmeticError(
            f"eigensolve returned nonpositive sector eigenvalues (min {vals.min():.3e})"
        )
    if n_eigs is not None:
        vals, vecs = vals[:n_eigs], vecs[:, :n_eigs]
    vecs = _fix_signs(vecs / sqrt_m[:, None])
    return SpectralDecomposition(
        grid=measure.grid,
        gamma=measure.gamma,
        eigenvalues=np.ascontiguousarray(vals),
        eigenvectors=np.ascontiguousarray(vecs),
        total_mass=measure.total,
        masses=mflat.copy(),
    )


@dataclass
class HeatKernelMatrix:
    """Heat-kernel values against the measure: ``p_t[i, j]`` densities."""

    t: float
    values: np.ndarray


def _series_tail_bound(decomp, t):
    lam_max = float(decomp.eigenvalues[-1])
    amp = float(np.abs(decomp.eigenvectors[:, -1]).max()) ** 2
    return math.exp(-lam_max * t) * amp


def heat_kernel(decomp: SpectralDecomposition, t, tail_tol=1e-10) -> HeatKernelMatrix:
    """Assemble ``p_t = 1/M + sum_n exp(-lambda_n t) e_n e_n^T``.

    Warns when the decomposition is truncated and the last retained term
    still exceeds ``tail_tol`` (the series tail may then matter).
    """
    if t <= 0:
        raise ValueError(f"time must be positive, got {t!r}")
    N = decomp.eigenvectors.shape[0]
    truncated = decomp.eigenvalues.shape[0] < N - 1
    if truncated and _series_tail_bound(decomp, t) > tail_tol:
        warnings.warn(
            f"heat kernel at t={t}: truncated series tail est. "
            f"{_series_tail_bound(decomp, t):.2e} above {tail_tol:.1e}"
        )
    weights = np.exp(-decomp.eigenvalues * t)
    scaled = decomp.eigenvectors * weights[None, :]
    values = scaled @ decomp.eigenvectors.T
    values += 1.0 / decomp.total_mass
    return HeatKernelMatrix(t=float(t), values=values)


def resolvent(decomp: SpectralDecomposition, lam) -> np.ndarray:
    """Assemble ``r_lam = 1/(lam M) + sum_n (lam + lambda_n)^{-1} e_n e_n^T``."""
    if lam <= 0:
        raise ValueError(f"resolvent parameter must be positive, got {lam!r}")
    weights = 1.0 / (lam + decomp.eigenvalues)
    scaled = decomp.eigenvectors * weights[None, :]
    values = scaled @ decomp.eigenvectors.T
    values += 1.0 / (lam * decomp.total_mass)
    return values


def _talbot_nodes(t, n_nodes):
    """Nodes and weights of the cotangent Talbot contour for time ``t``.

    Returns ``(z, w)`` with the inverse transform approximated by
    ``Im(sum w_k R(z_k)) / n_nodes`` for ``R(z) = e^{zt} (zI + H)^{-1} u``
    summed over the upper-half nodes only (conjugate symmetry).
    """
    k = np.arange(n_nodes // 2)
    theta = (k + 0.5) * (2.0 * math.pi / n_nodes)
    cot = np.cos(0.6407 * theta) / np.sin(0.6407 * theta)
    z = (n_nodes / t) * (-0.6122 + 0.5017 * theta * cot + 0.2645j * theta)
    dz = (n_nodes / t) * (
        0.5017 * cot
        - 0.5017 * 0.6407 * theta / np.sin(0.6407 * theta) ** 2
        + 0.2645j
    )
    return z, dz


def _expm_apply_talbot(ham, t, rhs, n_nodes=32):
    """``exp(-t H) rhs`` by Talbot-contour Laplace inversion.

    One complex sparse LU per node (conjugate pairs halve the count);
    ``rhs`` may have several columns.
    """
    z, dz = _talbot_nodes(t, n_nodes)
    acc = np.zeros(rhs.shape, dtype=complex)
    eye = sp.identity(ham.shape[0], format="csc")
    for zk, dzk in zip(z, dz):
        solve = spla.splu((ham + zk * eye).astype(complex))
        acc += np.exp(zk * t) * dzk * solve.solve(rhs.astype(complex))
    # midpoint rule over theta in (-pi, pi); the lower-half nodes are the
    # conjugates and contribute 2i Im(g), cancelling the 1/i prefactor
    return (2.0 / n_nodes) * np.imag(acc)


def heat_kernel_point(measure: ChaosMeasure, x_cell, y_cell, t, n_nodes=32):
    """Single heat-kernel value on grids too large for dense decomposition.

    Splits the time in half (Chapman-Kolmogorov) and takes the mass-weighted
    inner product of the two half-kernels, so the tiny off-diagonal values
    keep relative accuracy:

        p_t(x, y) = <exp(-(t/2)H) d_x, exp(-(t/2)H) d_y> / sqrt(m_x m_y).
    """
    grid = measure.grid
    n = grid.n
    ham = liouville_operator(measure).symmetrized()
    mflat = measure.masses.reshape(-1)
    ix = x_cell[0] * n + x_cell[1]
    iy = y_cell[0] * n + y_cell[1]
    rhs = np.zeros((n * n, 2))
    rhs[ix, 0] = 1.0
    rhs[iy, 1] = 1.0
    half = _expm_apply_talbot(ham, 0.5 * t, rhs, n_nodes=n_nodes)
    return float(half[:, 0] @ half[:, 1]) / math.sqrt(mflat[ix] * mflat[iy])


def resolvent_point(measure: ChaosMeasure, x_cell, y_cell, lam):
    """``r_lam(x, y)`` by one sparse solve of ``(lam I + H)`` — exact up to
    solver tolerance, independent of any eigendecomposition."""
    grid = measure.grid
    n = grid.n
    ham = liouville_operator(measure).symmetrized()
    mflat = measure.masses.reshape(-1)
    ix = x_cell[0] * n + x_cell[1]
    iy = y_cell[0] * n + y_cell[1]
    rhs = np.zeros(n * n)
    rhs[ix] = 1.0
    eye = sp.identity(n * n, format="csc")
    sol = spla.splu((ham + lam * eye).tocsc()).solve(rhs)
    return float(sol[iy]) / math.sqrt(mflat[ix] * mflat[iy])


@dataclass
class WeylReport:
    """Eigenvalue counting over a lambda window."""

    lambda_grid: np.ndarray
    counts: np.ndarray
    slope: float
    growth_exponent: float
    tail_sum_fraction: float
    n_resolved: int


def weyl_count(decomp: SpectralDecomposition, lambda_grid, delta=0.5) -> WeylReport:
    """Counting function ``N(lambda)`` with a log-log slope fit.

    Also reports the fitted growth exponent of ``lambda_n`` against ``n``
    over the window and the fraction of ``sum lambda_n^{-(1+delta)}``
    carried by the second half of the window (a plateau proxy: small means
    the partial sums have flattened).
    """
    lam = np.asarray(sorted(lambda_grid), dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        raise ValueError("lambda grid must be positive")
    evs = decomp.eigenvalues
    n_resolved = int(np.searchsorted(evs, lam[-1], side="right"))
    if n_resolved < 100:
        raise ValueError(
            f"too few resolved eigenvalues below the window ceiling: {n_resolved} < 100"
        )
    counts = np.searchsorted(evs, lam, side="right").astype(float)
    pos = counts > 0
    design = np.vstack([np.log(lam[pos]), np.ones(pos.sum())]).T
    slope = float(np.linalg.lstsq(design, np.log(counts[pos]), rcond=None)[0][0])

    first = int(np.searchsorted(evs, lam[0], side="left"))
    band = evs[first:n_resolved]
    if band.size < 10:
        raise ValueError(f"window band holds too few eigenvalues: {band.size} < 10")
    ns = np.arange(first + 1, n_resolved + 1, dtype=float)
    design_n = np.vstack([np.log(ns), np.ones(band.size)]).T
    growth = float(np.linalg.lstsq(design_n, np.log(band), rcond=None)[0][0])

    terms = band ** -(1.0 + delta)
    half = band.size // 2
    tail_fraction = float(terms[half:].sum() / terms.sum())
    return WeylReport(
        lambda_grid=lam,
        counts=counts.astype(int),
        slope=slope,
        growth_exponent=growth,
        tail_sum_fraction=tail_fraction,
        n_resolved=n_resolved,
    )


def eigenfunction_bound(decomp: SpectralDecomposition, delta) -> float:
    """``max_n max_x |e_n(x)| / lambda_n^{(1+delta)/2}`` over the window."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta!r}")
    amps = np.abs(decomp.eigenvectors).max(axis=0)
    return float((amps / decomp.eigenvalues ** ((1.0 + delta) / 2.0)).max())


@dataclass
class ContinuityReport:
    max_ratio: float
    n_tuples: int
    t_floor: float


def continuity_modulus(
    decomp: SpectralDecomposition,
    green: GreenTable,
    measure: ChaosMeasure,
    t,
    pairs,
    t_floor=0.01,
) -> ContinuityReport:
    """Empirical modulus constant for the kernel's space-time continuity.

    For sampled tuples ``((x, y, t1), (x', y', t2))`` with ``t1, t2 >= t``
    computes ``|p_t1(x,y) - p_t2(x',y')| / (|t1 - t2| + h(x,x') + h(y,y'))``
    where ``h(a, b) = sum_z |G(a,z) - G(b,z)| m_z``, and reports the largest
    ratio.  Degenerate tuples (zero denominator) are skipped.
    """
    if t < t_floor:
        raise ValueError(f"time {t} below the continuity floor t0 = {t_floor}")
    n = measure.grid.n
    mflat = measure.masses.reshape(-1)

    kernels = {}

    def kern(tv):
        if tv not in kernels:
            kernels[tv] = heat_kernel(decomp, tv).values
        return kernels[tv]

    def green_row(cell):
        di = (np.arange(n)[:, None] - cell[0]) % n
        dj = (np.arange(n)[None, :] - cell[1]) % n
        return green.values[di, dj].reshape(-1)

    gcache = {}

    def hdist(a, b):
        key = (a, b)
        if key not in gcache:
            gcache[key] = float(np.abs(green_row(a) - green_row(b)) @ mflat)
        return gcache[key]

    max_ratio = 0.0
    used = 0
    for (x1, y1, t1), (x2, y2, t2) in pairs:
        if t1 < t or t2 < t:
            raise ValueError("tuple time below the configured floor")
        denom = abs(t1 - t2) + hdist(x1, x2) + hdist(y1, y2)
        if denom == 0.0:
            continue
        p1 = kern(t1)[x1[0] * n + x1[1], y1[0] * n + y1[1]]
        p2 = kern(t2)[x2[0] * n + x2[1], y2[0] * n + y2[1]]
        ratio = abs(p1 - p2) / denom
        max_ratio = max(max_ratio, ratio)
        used += 1
    return ContinuityReport(max_ratio=max_ratio, n_tuples=used, t_floor=t_floor)


def positivity_check(decomp: SpectralDecomposition, t_grid) -> float:
    """Minimum heat-kernel entry over the grid of times; must be positive."""
    best = math.inf
    for t in t_grid:
        best = min(best, float(heat_kernel(decomp, t).values.min()))
    return best


def flat_eigenvalues(grid: TorusGrid) -> np.ndarray:
    """Closed-form generator spectrum with the flat measure, ascending,
    zero mode dropped: ``(1/h^2)(2 - cos 2 pi k1 h - cos 2 pi k2 h)``."""
    n = grid.n
    k = np.fft.fftfreq(n, d=1.0 / n)
    c = np.cos(2.0 * math.pi * k / n)
    vals = (2.0 - c[:, None] - c[None, :]) * (n * n)
    return np.sort(vals.reshape(-1))[1:]


def _flat_kernel_table(grid, weights_of_symbol):
    n = grid.n
    k = np.fft.fftfreq(n, d=1.0 / n)
    c = np.cos(2.0 * math.pi * k / n)
    symbol = (2.0 - c[:, None] - c[None, :]) * (n * n)
    table = np.fft.ifft2(weights_of_symbol(symbol)).real * (n * n)
    return table


def flat_heat_kernel(grid: TorusGrid, t) -> np.ndarray:
    """Exact flat heat kernel as a full matrix (Fourier symbol route)."""
    table = _flat_kernel_table(grid, lambda s: np.exp(-s * t))
    n = grid.n
    ii, jj = np.divmod(np.arange(n * n), n)
    return table[(ii[:, None] - ii[None, :]) % n, (jj[:, None] - jj[None, :]) % n]


def flat_resolvent(grid: TorusGrid, lam) -> np.ndarray:
    """Exact flat resolvent as a full matrix (Fourier symbol route)."""
    table = _flat_kernel_table(grid, lambda s: 1.0 / (lam + s))
    n = grid.n
    ii, jj = np.divmod(np.arange(n * n), n)
    return table[(ii[:, None] - ii[None, :]) % n, (jj[:, None] - jj[None, :]) % n]


def save_decomposition(decomp: SpectralDecomposition, path, seed=None):
    """JSON header + eigenvalues (f64le) + eigenvectors (f64le, row-major)."""
    header = {
        "n": decomp.grid.n,
        "gamma": decomp.gamma,
        "seed": seed,
        "n_eigs": int(decomp.eigenvalues.shape[0]),
        "total_mass": decomp.total_mass,
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        fh.write(np.ascontiguousarray(decomp.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(decomp.eigenvectors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(decomp.masses, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_decomposition(path) -> SpectralDecomposition:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        n = int(header["n"])
        k = int(header["n_eigs"])
        N = n * n
        vals = np.frombuffer(fh.read(k * 8), dtype="<f8").copy()
        vecs = np.frombuffer(fh.read(N * k * 8), dtype="<f8").reshape(N, k).copy()
        masses = np.frombuffer(fh.read(N * 8), dtype="<f8").copy()
    return SpectralDecomposition(
        grid=TorusGrid(n),
        gamma=float(header["gamma"]),
        eigenvalues=vals,
        eigenvectors=vecs,
        total_mass=float(header["total_mass"]),
        masses=masses,
    )
