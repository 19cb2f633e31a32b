"""Event-driven simulation of the two-node sender/receiver exchange.

Clocks are affine between events and the protocol timer counts down at
unit rate, so every flow interval is computed in closed form and jumps
happen exactly when the timer reaches zero. One exchange is six events:

    p=0  i sends            (timer := propagation delay, in transit)
    p=1  k receives         (timer := c, residence)
    p=2  k replies          (timer := propagation delay)
    p=3  i receives         (timer := c)
    p=4  i sends receipt    (timer := propagation delay)
    p=5  k receives, then corrects its offset and rate   (timer := c, p := 0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from . import sync_laws
from .error_model import check_params
from .errors import CorruptPhase, FlowDomainViolation, NotInJumpSet

TOL_MEM = 1e-9
BUFFER_LEN = 6
ZERO_BUFFER = (0.0,) * BUFFER_LEN

# phases whose jump puts a message in transit (q becomes 1)
SEND_PHASES = (0, 2, 4)


@dataclass(frozen=True)
class ProtocolParams:
    c: float
    d: float
    mu: float

    def __post_init__(self):
        check_params(self.c, self.d, self.mu)


@dataclass(frozen=True)
class HybridState:
    tau_i: float
    tau_k: float
    a_i: float
    a_k: float
    tau: float
    mem_i: tuple = ZERO_BUFFER
    mem_k: tuple = ZERO_BUFFER
    p: int = 0
    q: int = 0
    eps_tau: float = 0.0
    eps_a: float = 0.0

    @classmethod
    def initial(cls, tau_i: float, tau_k: float, a_i: float, a_k: float, c: float) -> "HybridState":
        """Start of an exchange with empty buffers (no buffer constraint applies)."""
        return cls(
            tau_i=float(tau_i),
            tau_k=float(tau_k),
            a_i=float(a_i),
            a_k=float(a_k),
            tau=float(c),
            eps_tau=float(tau_i) - float(tau_k),
            eps_a=float(a_i) - float(a_k),
        )

    @property
    def eps(self) -> np.ndarray:
        return np.array([self.eps_tau, self.eps_a])


@dataclass(frozen=True)
class HybridTime:
    t: float
    j: int


@dataclass(frozen=True)
class Horizon:
    t_max: float = math.inf
    j_max: int = 600


@dataclass(frozen=True)
class Sample:
    t: float
    j: int
    state: object
    V: float = math.nan


@dataclass
class Trajectory:
    samples: list
    c: float
    d: float
    mu: float
    nominal: bool = True
    topology: str = "two_agent"
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def jump_pairs(self):
        """(pre, post) sample pairs for every recorded jump."""
        out = []
        for k in range(1, len(self.samples)):
            if self.samples[k].j == self.samples[k - 1].j + 1:
                out.append((self.samples[k - 1], self.samples[k]))
        return out

    def flow_segments(self):
        """Lists of consecutive samples sharing the same jump counter."""
        segs = []
        cur = []
        for s in self.samples:
            if cur and s.j != cur[-1].j:
                segs.append(cur)
                cur = []
            cur.append(s)
        if cur:
            segs.append(cur)
        return segs


class NoiseHooks(Protocol):
    def draw_delay(self, rng: np.random.Generator, d: float) -> float: ...

    def draw_rate(self, rng: np.random.Generator) -> float: ...


def _push(value: float, src: Sequence[float]) -> tuple:
    return (value,) + tuple(src[: BUFFER_LEN - 1])


def advance_flow(state: HybridState, delta: float, rate_offset: float = 0.0) -> HybridState:
    """Flow for ``delta`` seconds. ``rate_offset`` is added to both clock rates."""
    if delta < 0 or delta > state.tau:
        raise FlowDomainViolation(f"flow of {delta} outside [0, {state.tau}]")
    if delta == 0:
        return state
    return replace(
        state,
        tau_i=state.tau_i + (state.a_i + rate_offset) * delta,
        tau_k=state.tau_k + (state.a_k + rate_offset) * delta,
        tau=state.tau - delta,
        eps_tau=state.eps_tau + state.eps_a * delta,
    )


def apply_jump(state: HybridState, delay_draw: float, params: ProtocolParams) -> HybridState:
    if state.tau != 0:
        raise NotInJumpSet(f"timer is {state.tau}, jumps need 0")
    p = state.p
    if p not in (0, 1, 2, 3, 4, 5) or state.q not in (0, 1):
        raise CorruptPhase(f"invalid phase p={p}, q={state.q}")
    c = params.c
    if p == 0:
        return replace(state, tau=delay_draw, q=1, p=1, mem_i=_push(state.tau_i, state.mem_i))
    if p == 1:
        # k stamps the arrival; the message carries i's stamps along
        return replace(state, tau=c, q=0, p=2, mem_k=_push(state.tau_k, state.mem_i))
    if p == 2:
        return replace(state, tau=delay_draw, q=1, p=3, mem_k=_push(state.tau_k, state.mem_k))
    if p == 3:
        return replace(state, tau=c, q=0, p=4, mem_i=_push(state.tau_i, state.mem_k))
    if p == 4:
        return replace(state, tau=delay_draw, q=1, p=5, mem_i=_push(state.tau_i, state.mem_i))
    # p == 5: both laws use the state at the arrival instant
    k_off = sync_laws.k_offset(state.mem_i)
    k_a = sync_laws.k_rate(state.mem_i, state.tau_k, params.mu)
    return replace(
        state,
        tau=c,
        q=0,
        p=0,
        mem_k=_push(state.tau_k, state.mem_i),
        tau_k=state.tau_k - k_off,
        a_k=state.a_k + k_a,
        eps_tau=state.eps_tau + k_off,
        eps_a=state.eps_a - k_a,
    )


def next_event(state) -> float:
    return state.tau


def _elapsed(state, c: float, d: float) -> float:
    # time since the last jump, assuming the nominal timer value was installed
    return (d if state.q else c) - state.tau


def rho_i(state: HybridState, c: float, d: float, beta: float) -> float:
    """Node i's clock ``beta`` seconds before the last jump."""
    return state.tau_i - state.a_i * (_elapsed(state, c, d) + beta)


def rho_k(state: HybridState, c: float, d: float, beta: float) -> float:
    return state.tau_k - state.a_k * (_elapsed(state, c, d) + beta)


def _memory_predicates(state: HybridState, c: float, d: float):
    """Residuals that must vanish for the buffers to be consistent, keyed by class."""
    mi, mk = state.mem_i, state.mem_k
    ri = lambda b: rho_i(state, c, d, b)  # noqa: E731
    rk = lambda b: rho_k(state, c, d, b)  # noqa: E731
    p, q = state.p, state.q
    if p == 0 and q == 0:
        return 1, []
    if p == 1 and q == 1:
        return 2, [mi[0] - ri(0.0)]
    if p == 2 and q == 0:
        return 3, [mk[0] - rk(0.0), mk[1] - ri(d)]
    if p == 3 and q == 1:
        return 4, [mk[0] - rk(0.0), mk[1] - rk(c), mk[2] - ri(c + d)]
    if p == 4 and q == 0:
        return 5, [mi[0] - ri(0.0), mi[1] - rk(d), mi[2] - rk(c + d), mi[3] - ri(2 * d + c)]
    if p == 5 and q == 1:
        return 6, [
            mi[0] - ri(0.0),
            mi[1] - ri(c),
            mi[2] - rk(c + d),
            mi[3] - rk(2 * c + d),
            mi[4] - ri(2 * c + 2 * d),
        ]
    return None, None


def memory_class(state: HybridState, c: float, d: float, tol: float = TOL_MEM) -> Optional[int]:
    """Index 1..6 of the memory class containing ``state``, or None."""
    cls, residuals = _memory_predicates(state, c, d)
    if cls is None:
        return None
    if all(abs(r) <= tol for r in residuals):
        return cls
    return None


def drive(
    initial,
    horizon: Horizon,
    d: float,
    advance: Callable,
    jump: Callable,
    value: Optional[Callable] = None,
    noise: Optional[NoiseHooks] = None,
    seed: int = 0,
    flow_samples: int = 4,
) -> list:
    """Generic event loop shared by the two-node and multi-node engines.

    Records the initial state, ``flow_samples`` evenly spaced points of every
    flow interval (the last one is the pre-jump state) and every post-jump
    state.
    """
    if flow_samples < 1:
        raise ValueError("flow_samples must be >= 1")
    rng = np.random.default_rng(seed) if noise is not None else None
    val = value if value is not None else (lambda s: math.nan)
    t_max = horizon.t_max
    t_tol = 1e-9 * max(1.0, t_max) if math.isfinite(t_max) else 0.0

    t, j = 0.0, 0
    state = initial
    samples = [Sample(t, j, state, val(state))]

    while j < horizon.j_max:
        dt = next_event(state)
        partial = False
        if t + dt > t_max + t_tol:
            dt = t_max - t
            partial = True
            if dt <= t_tol:
                break
        m = noise.draw_rate(rng) if noise is not None else 0.0
        start = state
        for n in range(1, flow_samples + 1):
            step = dt if n == flow_samples else dt * n / flow_samples
            s = advance(start, step, m)
            samples.append(Sample(t + step, j, s, val(s)))
        state = s
        t = t + dt
        if partial:
            break
        if state.p in SEND_PHASES and noise is not None:
            delay = noise.draw_delay(rng, d)
        else:
            delay = d
        state = jump(state, delay)
        j += 1
        samples.append(Sample(t, j, state, val(state)))
    return samples


def run(
    initial: HybridState,
    params: ProtocolParams,
    horizon: Horizon = Horizon(),
    noise: Optional[NoiseHooks] = None,
    seed: int = 0,
    P=None,
    flow_samples: int = 4,
) -> Trajectory:
    """Simulate until ``horizon.t_max`` or ``horizon.j_max`` jumps.

    With ``P`` given, each sample carries the Lyapunov value for that P.
    """
    c, d = params.c, params.d
    value = None
    if P is not None:
        from .certificate import lyapunov_value

        Pm = np.asarray(P, dtype=float)

        def pair_value(s):
            return lyapunov_value((s.eps_tau, s.eps_a), s.tau, s.p, s.q, Pm, c, d)

        value = pair_value

    samples = drive(
        initial,
        horizon,
        d,
        advance=advance_flow,
        jump=lambda s, delay: apply_jump(s, delay, params),
        value=value,
        noise=noise,
        seed=seed,
        flow_samples=flow_samples,
    )
    return Trajectory(samples, c, d, params.mu, nominal=noise is None)
