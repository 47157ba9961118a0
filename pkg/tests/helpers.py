"""Shared test utilities: finite-difference gradient oracle, toy data."""

from __future__ import annotations

import numpy as np

from mosgsl import autodiff as ad

# tolerances used by every gradient check in the suite
FD_STEP = 1e-3
REL_TOL = 1e-4
ABS_FLOOR = 1e-6


def numeric_grad(forward, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar-valued forward() wrt x (in place)."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = forward()
        flat[i] = orig - h
        fm = forward()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_match(analytic: np.ndarray, numeric: np.ndarray, label: str = "") -> None:
    analytic = np.asarray(analytic, dtype=np.float64)
    err = np.abs(analytic - numeric)
    tol = ABS_FLOOR + REL_TOL * np.abs(numeric)
    worst = (err - tol).max()
    assert np.all(err <= tol), (
        f"gradient mismatch {label}: worst excess {worst:.3e}\n"
        f"analytic={analytic}\nnumeric={numeric}")


def check_op_grads(build, tensors: list[ad.Tensor], label: str = "") -> None:
    """Verify analytic grads of scalar build() against finite differences.

    build() must recompute the scalar loss Tensor from the current .data of
    the given tensors each time it is called.
    """
    loss = build()
    for t in tensors:
        t.grad = None
    ad.backward(loss)
    for t in tensors:
        assert t.grad is not None, f"no gradient reached {label}"
        num = numeric_grad(lambda: float(build().data), t.data)
        assert_grads_match(t.grad, num, label)


def random_symmetric(rng: np.random.Generator, n: int, density: float = 0.7) -> np.ndarray:
    """Random symmetric nonneg matrix with zero diagonal, entries in [0, 1]."""
    raw = rng.random((n, n)) * (rng.random((n, n)) < density)
    sym = (raw + raw.T) / 2.0
    np.fill_diagonal(sym, 0.0)
    return sym
