"""The Shiesh activation: a smooth, strictly increasing bijection of the
real line with analytic inverse and derivative.

    shiesh(u; b)     = asinh(e^b * sinh(b u)) / b
    shiesh_inv(v; b) = asinh(e^-b * sinh(b v)) / b
    shiesh_deriv(u;b)= e^b cosh(b u) / sqrt(1 + (e^b sinh(b u))^2)

It is the time-1 map of the scalar field dv/dtau = tanh(b v), is odd, and
its derivative lies in (1, e^b] with the maximum at u = 0.  Evaluating
sinh at large arguments overflows, so beyond |u| = 5 the exact map is
replaced by its asymptote u + sign(u) (derivative 1).  The inverse switches
branches at |v| = 6 since the forward map sends |u| = 5 to roughly 6 for
b = 1; with these thresholds the two branches compose to an exact round
trip.  The branch switch itself introduces a jump of about 4e-5 at b = 1,
the size of the asymptote's truncation error at 5.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

FWD_THRESHOLD = 5.0
INV_THRESHOLD = 6.0
_CLAMP = 5.5  # keeps sinh well inside float64 range on the dead branch


def shiesh(u, b=1.0):
    """Forward map, elementwise on arrays."""
    u = np.asarray(u, dtype=np.float64)
    safe = np.clip(u, -_CLAMP, _CLAMP)
    core = np.arcsinh(np.exp(b) * np.sinh(b * safe)) / b
    return np.where(np.abs(u) <= FWD_THRESHOLD, core, u + np.sign(u))


def shiesh_inv(v, b=1.0):
    """Analytic inverse, elementwise on arrays."""
    v = np.asarray(v, dtype=np.float64)
    safe = np.clip(v, -INV_THRESHOLD, INV_THRESHOLD)
    core = np.arcsinh(np.exp(-b) * np.sinh(b * safe)) / b
    return np.where(np.abs(v) <= INV_THRESHOLD, core, v - np.sign(v))


def shiesh_deriv(u, b=1.0):
    """d shiesh / du, elementwise; in (1, e^b] on the inner branch, 1 outside."""
    u = np.asarray(u, dtype=np.float64)
    safe = np.clip(u, -_CLAMP, _CLAMP)
    s = np.exp(b) * np.sinh(b * safe)
    core = np.exp(b) * np.cosh(b * safe) / np.sqrt(1.0 + s * s)
    return np.where(np.abs(u) <= FWD_THRESHOLD, core, 1.0)


def shiesh_t(u: "ad.Tensor", b=1.0):
    """Graph version of the forward map."""
    mask = np.abs(u.data) <= FWD_THRESHOLD
    safe = ad.clip(u, -_CLAMP, _CLAMP)
    core = ad.asinh(ad.sinh(safe * b) * float(np.exp(b))) * (1.0 / b)
    outer = u + np.sign(u.data)
    return ad.where(mask, core, outer)


def shiesh_log_deriv_t(u: "ad.Tensor", b=1.0):
    """Graph version of log(d shiesh / du); zero on the outer branch."""
    mask = np.abs(u.data) <= FWD_THRESHOLD
    safe = ad.clip(u, -_CLAMP, _CLAMP)
    s = ad.sinh(safe * b) * float(np.exp(b))
    core = ad.log(ad.cosh(safe * b) * float(np.exp(b)) / ad.sqrt(s * s + 1.0))
    return ad.where(mask, core, ad.tensor(np.zeros_like(u.data)))
