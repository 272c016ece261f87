"""Small circular-arithmetic helpers shared by the phase engine and the statistics."""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_angle(x):
    """Wrap angle(s) to the interval (-pi, pi]."""
    w = np.mod(x, TWO_PI)
    if np.isscalar(w) or w.ndim == 0:
        return float(w - TWO_PI) if w > np.pi else float(w)
    w = np.asarray(w, dtype=float).copy()
    w[w > np.pi] -= TWO_PI
    return w


def circ_diff(a, b):
    """Signed circular difference a - b, wrapped to (-pi, pi]."""
    return wrap_angle(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def circular_mean(angles) -> float:
    """Direction of the mean resultant vector, in (-pi, pi]."""
    angles = np.asarray(angles, dtype=float)
    return wrap_angle(float(np.angle(np.mean(np.exp(1j * angles)))))


def resultant_length(angles) -> float:
    """Mean resultant length R in [0, 1]; R=1 for identical angles, 0 for balance."""
    angles = np.asarray(angles, dtype=float)
    return float(np.abs(np.mean(np.exp(1j * angles))))


def circular_sd(angles) -> float:
    """Circular standard deviation sqrt(-2 ln R) in radians."""
    r = resultant_length(angles)
    if r <= 0.0:
        return float("inf")
    return float(np.sqrt(-2.0 * np.log(min(r, 1.0))))
