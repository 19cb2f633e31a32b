from __future__ import annotations

import numpy as np
import pytest

from hysync.sim_engine import HybridState

EX1 = (0.1, 0.2, 0.833)
EX1_REFERENCE_P = np.array([[6.2594, -0.5219], [-0.5219, 11.4302]])
EX2 = (0.2, 0.5, 0.3571)

ACCEPTANCE_LINES: list[str] = []


def random_params(rng, mu_lo=0.02, mu_hi=1.98):
    c = rng.uniform(0.01, 1.0)
    d = rng.uniform(c, 1.0)
    mu = rng.uniform(mu_lo, mu_hi) / (2 * (c + d))
    return c, d, mu


# (p, q) of each memory class, and what each buffer slot must hold:
# (buffer, slot, node, event) where event counts back from the last jump
# (0 = the last jump itself).
CLASS_PHASE = {1: (0, 0), 2: (1, 1), 3: (2, 0), 4: (3, 1), 5: (4, 0), 6: (5, 1)}
CLASS_SLOTS = {
    1: [],
    2: [("i", 0, "i", 0)],
    3: [("k", 0, "k", 0), ("k", 1, "i", 1)],
    4: [("k", 0, "k", 0), ("k", 1, "k", 1), ("k", 2, "i", 2)],
    5: [("i", 0, "i", 0), ("i", 1, "k", 1), ("i", 2, "k", 2), ("i", 3, "i", 3)],
    6: [("i", 0, "i", 0), ("i", 1, "i", 1), ("i", 2, "k", 2), ("i", 3, "k", 3), ("i", 4, "i", 4)],
}


def event_times(now, p, q, tau, c, d):
    """Times of the jumps G_p, G_{p-1}, ..., G_1 of the current exchange, newest first."""
    # the jump that produced phase p installed d after a send (q=1), c after a receive
    times = [now - ((d if q else c) - tau)]
    # gap between consecutive jumps G_m and G_{m+1}: d when G_m was a send (m odd)
    for m in range(p - 1, 0, -1):
        gap = d if m % 2 == 1 else c
        times.append(times[-1] - gap)
    return times


def state_in_class(k, rng, c, d, offset_scale=10.0):
    """Random state of memory class k, buffers filled from an explicit event history."""
    p, q = CLASS_PHASE[k]
    a_i, a_k = rng.uniform(0.5, 1.5, 2)
    tau_i0, tau_k0 = rng.uniform(-offset_scale, offset_scale, 2)
    now = rng.uniform(5.0, 50.0)
    tau = rng.uniform(0.0, d if q else c)
    clock = {"i": lambda t: a_i * t + tau_i0, "k": lambda t: a_k * t + tau_k0}
    bufs = {"i": list(rng.normal(size=6) * 10), "k": list(rng.normal(size=6) * 10)}
    times = event_times(now, p, q, tau, c, d) if p > 0 else []
    for buf, slot, node, ev in CLASS_SLOTS[k]:
        bufs[buf][slot] = clock[node](times[ev])
    ti, tk = clock["i"](now), clock["k"](now)
    return HybridState(
        tau_i=ti,
        tau_k=tk,
        a_i=a_i,
        a_k=a_k,
        tau=tau,
        mem_i=tuple(bufs["i"]),
        mem_k=tuple(bufs["k"]),
        p=p,
        q=q,
        eps_tau=ti - tk,
        eps_a=a_i - a_k,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
