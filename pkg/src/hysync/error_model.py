"""Two-dimensional clock-error system.

The error is ``eps = (eps_tau, eps_a)``: offset and rate difference between
the reference clock and the corrected clock. Between message events it flows
under the nilpotent matrix ``A_f``; a complete exchange followed by the
corrections acts on it through ``A_g``.

Vectors and matrices are plain numpy arrays of shape (2,) and (2, 2).
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidParams

A_F = np.array([[0.0, 1.0], [0.0, 0.0]])


def offset_gain(c: float, d: float) -> float:
    """Coefficient of eps_a left in the offset after a correction, (3c+4d)/2."""
    return 0.5 * (3.0 * c + 4.0 * d)


def rate_gain(c: float, d: float) -> float:
    """Clock time between the two rate samples of one exchange, 2(c+d)."""
    return 2.0 * (c + d)


def round_duration(c: float, d: float) -> float:
    return 3.0 * c + 3.0 * d


def check_params(c: float, d: float, mu: float) -> None:
    if not (np.isfinite(c) and np.isfinite(d) and np.isfinite(mu)):
        raise InvalidParams("c, d and mu must be finite")
    if c <= 0:
        raise InvalidParams(f"residence delay must be positive, got c={c}")
    if d < c:
        raise InvalidParams(f"need c <= d, got c={c}, d={d}")
    if mu <= 0:
        raise InvalidParams(f"gain must be positive, got mu={mu}")


def exp_af(t: float) -> np.ndarray:
    # A_f squared is zero, so the series stops after the linear term
    return np.array([[1.0, t], [0.0, 1.0]])


def a_g(c: float, d: float, mu: float) -> np.ndarray:
    check_params(c, d, mu)
    return np.array([[0.0, offset_gain(c, d)], [0.0, 1.0 - mu * rate_gain(c, d)]])


def round_map(eps, c: float, d: float, mu: float) -> np.ndarray:
    """Error right after a correction, given the error at the correction instant.

    Starting from one correction instant, flowing a full exchange and
    correcting again gives ``a_g @ exp_af(3c+3d) @ eps``; this function is
    the correction step that closes the round.
    """
    return a_g(c, d, mu) @ np.asarray(eps, dtype=float)


def spectral_radius_round(c: float, d: float, mu: float) -> float:
    check_params(c, d, mu)
    return abs(1.0 - mu * rate_gain(c, d))


def deadbeat_gain(c: float, d: float) -> float:
    """Gain that removes the rate error in a single exchange."""
    return 1.0 / rate_gain(c, d)
