# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled path kernels: weight gathers along visited cells and the ball
exit scan.  Contracts mirror ``liouville._kernels_py`` exactly."""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, round as c_round

cnp.import_array()

BACKEND = "cython"


def rho_total(double[:, ::1] w, long[::1] ix, long[::1] iy):
    """Sum of ``w[ix[j], iy[j]]`` over a visited-cell sequence."""
    cdef Py_ssize_t j, m = ix.shape[0]
    cdef double acc = 0.0
    for j in range(m):
        acc += w[ix[j], iy[j]]
    return acc


def rho_cumsum(double[:, ::1] w, long[::1] ix, long[::1] iy, double[::1] out):
    """Cumulative sums of ``w`` along a visited-cell sequence, into ``out``."""
    cdef Py_ssize_t j, m = ix.shape[0]
    cdef double acc = 0.0
    for j in range(m):
        acc += w[ix[j], iy[j]]
        out[j] = acc
    return np.asarray(out)


def exit_chunk(double[::1] x, double[::1] y, double[::1] t, double[::1] f,
               unsigned char[::1] alive, double[:, ::1] w,
               double sqdt, double dt, double cx, double cy, double r2,
               double[:, :, ::1] normals, double[::1] out_t, double[::1] out_f):
    """Advance paths through one chunk of Gaussian steps, freezing exits.

    See the fallback implementation for the full contract; the per-step
    arithmetic (left-endpoint weight, move, wrap, distance test) is ordered
    identically here.
    """
    cdef Py_ssize_t s, j
    cdef Py_ssize_t steps = normals.shape[0]
    cdef Py_ssize_t m = x.shape[0]
    cdef long n = w.shape[0]
    cdef long ci, cj
    cdef double xs, ys, dxs, dys
    cdef long n_alive = 0
    for j in range(m):
        if alive[j] != 0:
            n_alive += 1
    for s in range(steps):
        n_alive = 0
        for j in range(m):
            if alive[j] == 0:
                continue
            xs = x[j]
            ys = y[j]
            ci = <long>(xs * n)
            cj = <long>(ys * n)
            if ci >= n: ci = n - 1
            elif ci < 0: ci = 0
            if cj >= n: cj = n - 1
            elif cj < 0: cj = 0
            f[j] += dt * w[ci, cj]
            xs = xs + sqdt * normals[s, j, 0]
            ys = ys + sqdt * normals[s, j, 1]
            xs -= floor(xs)
            ys -= floor(ys)
            x[j] = xs
            y[j] = ys
            t[j] += dt
            dxs = xs - cx
            dys = ys - cy
            dxs -= c_round(dxs)
            dys -= c_round(dys)
            if dxs * dxs + dys * dys >= r2:
                out_t[j] = t[j]
                out_f[j] = f[j]
                alive[j] = 0
            else:
                n_alive += 1
        if n_alive == 0:
            break
    return int(n_alive)
