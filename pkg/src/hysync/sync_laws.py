"""Offset and rate corrections computed from exchanged timestamps.

Both laws read only the timestamp buffer of the reference node (plus the
corrected node's own clock for the rate law). Buffer slots are stored
0-based here: ``mem[0]`` is the newest entry, ``mem[4]`` the oldest one
used by the laws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import InvalidGain


@dataclass(frozen=True)
class CorrectionPair:
    k_offset: float
    k_rate: float


def k_offset(mem_i: Sequence[float]) -> float:
    """Two-way offset estimate.

    Averages the two one-way differences (arrival at k minus departure from
    i, and departure from k minus arrival at i). With symmetric delays the
    propagation terms cancel.
    """
    m2, m3, m4, m5 = mem_i[1], mem_i[2], mem_i[3], mem_i[4]
    return 0.5 * (m4 - m5 - m2 + m3)


def k_rate(mem_i: Sequence[float], tau_k: float, mu: float) -> float:
    """Adaptive rate correction.

    Compares how far each clock advanced between the first message
    departure and the final arrival: ``m1 - m5`` on the reference clock,
    ``tau_k - m4`` on the corrected clock.
    """
    if not mu > 0:
        raise InvalidGain(f"gain must be positive, got mu={mu}")
    return mu * ((mem_i[0] - mem_i[4]) - (tau_k - mem_i[3]))


def corrections(mem_i: Sequence[float], tau_k: float, mu: float) -> CorrectionPair:
    return CorrectionPair(k_offset(mem_i), k_rate(mem_i, tau_k, mu))
