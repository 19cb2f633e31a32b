"""One reference node synchronizing N children in round-robin order.

Only one exchange is in progress at a time. The exchange with the active
child runs the same six events as the two-node engine (the reference plays
node i, the child plays node k); the correction at the last event touches
that child only, then the next child becomes active.

Each child also carries a cycle timer that counts down at unit rate and is
reloaded with the exchange duration 3c+3d when the child is corrected (and,
as a free-running timer, whenever it has run down to zero at a correction
instant). Timers are clamped at zero so they stay in [0, 3c+3d] even when an
exchange is stretched by delay noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .certificate import LmiResult, check_lmi, design_p, multi_horizon
from .error_model import round_duration
from .sim_engine import (
    ZERO_BUFFER,
    Horizon,
    HybridState,
    NoiseHooks,
    ProtocolParams,
    Trajectory,
    apply_jump,
    drive,
    memory_class,
)
from .errors import FlowDomainViolation

CYCLE_TOL = 1e-9


@dataclass(frozen=True)
class MultiState:
    tau_R: float
    tau_S: tuple
    a_R: float
    a: tuple
    tau: float
    tau_cycle: tuple
    mem_R: tuple = ZERO_BUFFER
    mem_S: tuple = ZERO_BUFFER
    active: int = 1  # 1-based child index
    p: int = 0
    q: int = 0
    eps: tuple = ()

    @classmethod
    def initial(
        cls, tau_R: float, tau_S: Sequence[float], a_R: float, a: Sequence[float], c: float, d: float
    ) -> "MultiState":
        if len(tau_S) != len(a) or len(a) < 1:
            raise ValueError("need one clock and one rate per child, at least one child")
        tau_S = tuple(float(x) for x in tau_S)
        a = tuple(float(x) for x in a)
        period = round_duration(c, d)
        return cls(
            tau_R=float(tau_R),
            tau_S=tau_S,
            a_R=float(a_R),
            a=a,
            tau=float(c),
            tau_cycle=(period,) * len(a),
            eps=tuple((float(tau_R) - ts, float(a_R) - ak) for ts, ak in zip(tau_S, a)),
        )

    @property
    def n_children(self) -> int:
        return len(self.tau_S)

    def pair_view(self) -> HybridState:
        """The reference and the active child seen as a two-node state."""
        k = self.active - 1
        return HybridState(
            tau_i=self.tau_R,
            tau_k=self.tau_S[k],
            a_i=self.a_R,
            a_k=self.a[k],
            tau=self.tau,
            mem_i=self.mem_R,
            mem_k=self.mem_S,
            p=self.p,
            q=self.q,
            eps_tau=self.eps[k][0],
            eps_a=self.eps[k][1],
        )


def _set(seq: tuple, k: int, value) -> tuple:
    return seq[:k] + (value,) + seq[k + 1 :]


def advance_multi(state: MultiState, delta: float, rate_offset: float = 0.0) -> MultiState:
    if delta < 0 or delta > state.tau:
        raise FlowDomainViolation(f"flow of {delta} outside [0, {state.tau}]")
    if delta == 0:
        return state
    return replace(
        state,
        tau_R=state.tau_R + (state.a_R + rate_offset) * delta,
        tau_S=tuple(ts + (ak + rate_offset) * delta for ts, ak in zip(state.tau_S, state.a)),
        tau=state.tau - delta,
        tau_cycle=tuple(max(tc - delta, 0.0) for tc in state.tau_cycle),
        eps=tuple((et + ea * delta, ea) for et, ea in state.eps),
    )


def jump_multi(state: MultiState, delay_draw: float, params: ProtocolParams) -> MultiState:
    k = state.active - 1
    pre_phase = state.p
    pair = apply_jump(state.pair_view(), delay_draw, params)
    out = replace(
        state,
        tau_S=_set(state.tau_S, k, pair.tau_k),
        a=_set(state.a, k, pair.a_k),
        tau=pair.tau,
        mem_R=pair.mem_i,
        mem_S=pair.mem_k,
        p=pair.p,
        q=pair.q,
        eps=_set(state.eps, k, (pair.eps_tau, pair.eps_a)),
    )
    if pre_phase != 5:
        return out
    period = round_duration(params.c, params.d)
    cycle = tuple(
        period if (i == k or tc <= CYCLE_TOL * period) else tc for i, tc in enumerate(state.tau_cycle)
    )
    return replace(out, tau_cycle=cycle, active=state.active % state.n_children + 1)


def child_value(state: MultiState, k: int, P) -> float:
    """Quadratic form of child ``k`` (0-based) evaluated with its cycle timer."""
    et, ea = state.eps[k]
    z0 = et + state.tau_cycle[k] * ea
    Pm = np.asarray(P, dtype=float).reshape(2, 2)
    return float(Pm[0, 0] * z0 * z0 + 2.0 * Pm[0, 1] * z0 * ea + Pm[1, 1] * ea * ea)


def lyapunov_multi(state: MultiState, P) -> float:
    return math.fsum(child_value(state, k, P) for k in range(state.n_children))


def pair_memory_class(state: MultiState, c: float, d: float) -> Optional[int]:
    return memory_class(state.pair_view(), c, d)


def check_lmi_multi(P, c: float, d: float, mu: float) -> LmiResult:
    return check_lmi(P, c, d, mu, horizon=multi_horizon(c, d))


def design_p_multi(c: float, d: float, mu: float, q_scale: float = 1.0) -> np.ndarray:
    return design_p(c, d, mu, q_scale, horizon=multi_horizon(c, d))


def run_multi(
    initial: MultiState,
    params: ProtocolParams,
    horizon: Horizon = Horizon(),
    noise: Optional[NoiseHooks] = None,
    seed: int = 0,
    P=None,
    flow_samples: int = 4,
) -> Trajectory:
    value = None
    if P is not None:
        Pm = np.asarray(P, dtype=float)

        def total_value(s):
            return lyapunov_multi(s, Pm)

        value = total_value

    samples = drive(
        initial,
        horizon,
        params.d,
        advance=advance_multi,
        jump=lambda s, delay: jump_multi(s, delay, params),
        value=value,
        noise=noise,
        seed=seed,
        flow_samples=flow_samples,
    )
    return Trajectory(
        samples,
        params.c,
        params.d,
        params.mu,
        nominal=noise is None,
        topology="multi_agent",
        meta={"n_children": initial.n_children, "a_ref": initial.a_R},
    )
