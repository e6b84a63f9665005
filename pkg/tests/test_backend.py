"""Parity checks between the compiled kernels and the NumPy fallback."""

import numpy as np
import pytest

from liouville import _backend
from liouville import _kernels_py as py_impl

cy_impl = pytest.importorskip(
    "liouville._kernels", reason="compiled kernels not built"
)


def _exit_state(m=256, n=16, seed=0):
    rng = np.random.default_rng(seed)
    state = {
        "x": rng.random(m),
        "y": rng.random(m),
        "t": np.zeros(m),
        "f": np.zeros(m),
        "alive": np.ones(m, dtype=np.uint8),
        "w": rng.gamma(1.5, 1.0, size=(n, n)),
        "normals": rng.standard_normal((80, m, 2)),
        "out_t": np.full(m, np.nan),
        "out_f": np.full(m, np.nan),
    }
    return state


def _run_exit(impl, state):
    s = {k: v.copy() for k, v in state.items()}
    left = impl.exit_chunk(
        s["x"], s["y"], s["t"], s["f"], s["alive"], s["w"],
        0.02, 4e-4, 0.5, 0.5, 0.09, s["normals"], s["out_t"], s["out_f"],
    )
    return left, s


class TestParity:
    def test_active_backend_reported(self):
        assert _backend.BACKEND in ("cython", "python")
        assert "python" in _backend.available_backends()
        assert "cython" in _backend.available_backends()

    def test_rho_total(self):
        rng = np.random.default_rng(1)
        w = rng.random((32, 32))
        ix = rng.integers(0, 32, size=5000)
        iy = rng.integers(0, 32, size=5000)
        a = cy_impl.rho_total(w, ix, iy)
        b = py_impl.rho_total(w, ix, iy)
        assert a == pytest.approx(b, rel=1e-12)

    def test_rho_total_empty(self):
        w = np.ones((4, 4))
        empty = np.empty(0, dtype=np.int64)
        assert cy_impl.rho_total(w, empty, empty) == 0.0
        assert py_impl.rho_total(w, empty, empty) == 0.0

    def test_rho_cumsum(self):
        rng = np.random.default_rng(2)
        w = rng.random((32, 32))
        ix = rng.integers(0, 32, size=4096)
        iy = rng.integers(0, 32, size=4096)
        a = cy_impl.rho_cumsum(w, ix, iy, np.empty(4096))
        b = py_impl.rho_cumsum(w, ix, iy, np.empty(4096))
        np.testing.assert_allclose(a, b, rtol=1e-12)
        assert a[-1] == pytest.approx(py_impl.rho_total(w, ix, iy), rel=1e-12)

    def test_exit_chunk_states_agree(self):
        state = _exit_state()
        left_cy, s_cy = _run_exit(cy_impl, state)
        left_py, s_py = _run_exit(py_impl, state)
        assert left_cy == left_py
        np.testing.assert_array_equal(s_cy["alive"], s_py["alive"])
        for key in ("x", "y", "t", "f", "out_t", "out_f"):
            np.testing.assert_allclose(
                s_cy[key], s_py[key], rtol=1e-12, atol=0, equal_nan=True
            )

    def test_exit_chunk_zero_steps_is_noop(self):
        state = _exit_state(m=32)
        state["normals"] = np.empty((0, 32, 2))
        for impl in (cy_impl, py_impl):
            left, s = _run_exit(impl, state)
            assert left == 32
            np.testing.assert_array_equal(s["x"], state["x"])
            np.testing.assert_array_equal(s["f"], state["f"])
            assert np.all(np.isnan(s["out_t"]))

    def test_exit_chunk_respects_dead_slots(self):
        state = _exit_state(m=64, seed=3)
        state["alive"][::2] = 0
        frozen_x = state["x"][::2].copy()
        for impl in (cy_impl, py_impl):
            _, s = _run_exit(impl, state)
            np.testing.assert_array_equal(s["x"][::2], frozen_x)
