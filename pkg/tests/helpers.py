"""Shared test utilities: finite-difference oracles and small builders."""

import numpy as np

from profiti import autodiff as ad


def finite_difference(fn, x0, step=1e-5):
    """Central finite-difference gradient of scalar ``fn`` at ``x0``.

    ``fn`` receives a plain numpy array shaped like ``x0`` and returns a
    float.  Independent oracle for the analytic gradients under test.
    """
    x = np.array(x0, dtype=np.float64)  # private copy; fn sees only this buffer
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for j in range(xf.size):
        orig = xf[j]
        xf[j] = orig + step
        fp = fn(x)
        xf[j] = orig - step
        fm = fn(x)
        xf[j] = orig
        flat[j] = (fp - fm) / (2.0 * step)
    return grad


def gradcheck(build_scalar, x0, step=1e-5, rtol=1e-6):
    """Compare analytic gradient of ``build_scalar`` against finite differences.

    ``build_scalar`` maps a Tensor to a scalar Tensor.  Returns the maximum
    relative error over all entries.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    leaf = ad.parameter(x0.copy(), name="x")
    loss = build_scalar(leaf)
    grads = ad.backward(loss, accumulate=False)
    analytic = grads.get(leaf, np.zeros_like(x0))

    def numeric_fn(arr):
        return float(build_scalar(ad.tensor(arr)).data)

    numeric = finite_difference(numeric_fn, x0, step=step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    max_rel = float(np.max(np.abs(analytic - numeric) / scale))
    assert max_rel < rtol, f"gradient mismatch: max rel err {max_rel:.3e}"
    return max_rel


def rk4_solve(field, v0, t1=1.0, n_steps=1000):
    """Classic fixed-step RK4 for dv/dt = field(v), v(0) = v0."""
    v = float(v0)
    h = t1 / n_steps
    for _ in range(n_steps):
        k1 = field(v)
        k2 = field(v + 0.5 * h * k1)
        k3 = field(v + 0.5 * h * k2)
        k4 = field(v + h * k3)
        v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return v
