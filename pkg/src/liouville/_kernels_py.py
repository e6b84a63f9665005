"""Pure-NumPy fallback for the hot path kernels.

Same contracts as the compiled module ``liouville._kernels``; the arithmetic
is ordered identically so both backends agree to rounding noise.  Which one
is active is decided once at import in :mod:`liouville._backend`.
"""

import numpy as np

BACKEND = "python"


def rho_total(w, ix, iy):
    """Sum of ``w[ix[j], iy[j]]`` over a visited-cell sequence."""
    return float(np.add.reduce(w[ix, iy]))


def rho_cumsum(w, ix, iy, out):
    """Cumulative sums of ``w`` along a visited-cell sequence, into ``out``."""
    np.cumsum(w[ix, iy], out=out)
    return out


def exit_chunk(x, y, t, f, alive, w, sqdt, dt, cx, cy, r2, normals, out_t, out_f):
    """Advance paths through one chunk of Gaussian steps, freezing exits.

    State arrays ``x, y, t, f`` (shape ``(m,)``) and the ``alive`` uint8 mask
    are updated in place.  Each step adds ``dt * w[cell]`` at the current
    position (left endpoint), then moves by ``sqdt`` times the Gaussian pair,
    wraps into ``[0, 1)``, advances ``t`` and tests the torus distance to
    ``(cx, cy)``; a path whose distance squared reaches ``r2`` records
    ``(t, f)`` into ``out_t/out_f`` at its slot and stops moving.

    Parameters
    ----------
    normals : ndarray, shape (s, m, 2)
        Standard-normal increments for this chunk.
    w : ndarray, shape (n, n)
        Cell weights; looked up by ``floor(pos * n)``.

    Returns
    -------
    int
        Number of paths still alive after the chunk.
    """
    n = w.shape[0]
    steps = normals.shape[0]
    for s in range(steps):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        xs = x[idx]
        ys = y[idx]
        cix = (xs * n).astype(np.int64)
        ciy = (ys * n).astype(np.int64)
        np.clip(cix, 0, n - 1, out=cix)
        np.clip(ciy, 0, n - 1, out=ciy)
        f[idx] += dt * w[cix, ciy]
        xs = xs + sqdt * normals[s, idx, 0]
        ys = ys + sqdt * normals[s, idx, 1]
        xs -= np.floor(xs)
        ys -= np.floor(ys)
        x[idx] = xs
        y[idx] = ys
        t[idx] += dt
        dxs = xs - cx
        dys = ys - cy
        dxs -= np.round(dxs)
        dys -= np.round(dys)
        hit = dxs * dxs + dys * dys >= r2
        if np.any(hit):
            ex = idx[hit]
            out_t[ex] = t[ex]
            out_f[ex] = f[ex]
            alive[ex] = 0
    return int(np.count_nonzero(alive))
