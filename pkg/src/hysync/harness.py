"""Scenario configuration, noise injection, trajectory files, verification and CLI.

Scenario files are JSON. Minimal two-node example::

    {"c": 0.1, "d": 0.2, "mu": 0.833, "a_i": 1.0, "a_k": 1.8, "tau_i0": 2.5}

Multi-node scenarios set ``"topology": "multi_agent"`` and give ``a_R``/``a``
(one rate per child) plus optional ``tau_R0``/``tau_S0``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .certificate import (
    Certificate,
    NoCertificate,
    convergence_factors,
    design_p,
    envelope,
    lyapunov_value,
    multi_horizon,
    sigma_of,
)
from .errors import (
    ConfigInvalid,
    HysyncError,
    Infeasible,
    InvalidCertificateInput,
    InvalidParams,
    IoError,
    VerifyInputMismatch,
)
from .multi_agent import (
    MultiState,
    child_value,
    jump_multi,
    lyapunov_multi,
    run_multi,
)
from .sim_engine import (
    ZERO_BUFFER,
    Horizon,
    HybridState,
    ProtocolParams,
    Sample,
    Trajectory,
    apply_jump,
    memory_class,
    run,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFY = 4

EPS_TOL = 1e-12
FLOW_TOL = 1e-12
JUMP_SLACK = 1e-9

TWO_AGENT_HEADER = ["t", "j", "p", "q", "tau", "tau_i", "tau_k", "a_i", "a_k", "eps_tau", "eps_a", "V"]


# ---------------------------------------------------------------- noise


@dataclass(frozen=True)
class NoiseModel:
    """Delay jitter and common-mode rate noise.

    Delay draws are uniform on ``delay_jitter`` and used whenever a message
    goes in transit. Rate noise is a Gaussian truncated to (-bound, bound) by
    rejection, drawn once per flow interval and added to both clocks.
    """

    delay_jitter: Optional[tuple] = None
    rate_std: Optional[float] = None
    rate_bound: Optional[float] = None
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return self.delay_jitter is not None or self.rate_bound is not None

    def draw_delay(self, rng: np.random.Generator, d: float) -> float:
        if self.delay_jitter is None:
            return d
        lo, hi = self.delay_jitter
        return float(rng.uniform(lo, hi))

    def draw_rate(self, rng: np.random.Generator) -> float:
        if self.rate_bound is None:
            return 0.0
        while True:
            x = float(rng.normal(0.0, self.rate_std))
            if abs(x) < self.rate_bound:
                return x


# ---------------------------------------------------------------- config


@dataclass
class ScenarioConfig:
    c: float
    d: float
    mu: float
    topology: str = "two_agent"
    a_i: float = 1.0
    a_k: float = 1.0
    tau_i0: float = 0.0
    tau_k0: float = 0.0
    a_R: float = 1.0
    a_S: list = field(default_factory=list)
    tau_R0: float = 0.0
    tau_S0: list = field(default_factory=list)
    horizon: Horizon = Horizon()
    noise: NoiseModel = NoiseModel()
    seed: int = 0
    flow_samples: int = 4
    certificate: Optional[Path] = None
    outputs: dict = field(default_factory=dict)
    terminal_tol: Optional[float] = None

    @property
    def params(self) -> ProtocolParams:
        return ProtocolParams(self.c, self.d, self.mu)

    @property
    def n_children(self) -> int:
        return len(self.a_S) if self.topology == "multi_agent" else 1


def _num(data: dict, key: str, default=None, positive=False) -> float:
    if key not in data or data[key] is None:
        if default is None:
            raise ConfigInvalid(key, "required")
        return default
    v = data[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigInvalid(key, f"expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise ConfigInvalid(key, f"must be positive, got {v}")
    return float(v)


def _num_list(data: dict, key: str, length: Optional[int] = None) -> list:
    v = data.get(key)
    if not isinstance(v, list) or not v:
        raise ConfigInvalid(key, "expected a non-empty list of numbers")
    out = []
    for k, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigInvalid(f"{key}[{k}]", f"expected a finite number, got {x!r}")
        out.append(float(x))
    if length is not None and len(out) != length:
        raise ConfigInvalid(key, f"expected {length} entries, got {len(out)}")
    return out


def _parse_noise(data, d: float, seed: int) -> NoiseModel:
    if data is None:
        return NoiseModel(seed=seed)
    if not isinstance(data, dict):
        raise ConfigInvalid("noise", "expected an object")
    jitter = None
    if data.get("delay_jitter") is not None:
        j = data["delay_jitter"]
        if not isinstance(j, list) or len(j) != 2:
            raise ConfigInvalid("noise.delay_jitter", "expected [d1, d2]")
        lo, hi = _num({"d1": j[0]}, "d1"), _num({"d2": j[1]}, "d2")
        if not (0 < lo <= d <= hi):
            raise ConfigInvalid("noise.delay_jitter", f"need 0 < d1 <= d <= d2, got [{lo}, {hi}] with d={d}")
        jitter = (lo, hi)
    std = bound = None
    if data.get("rate_noise") is not None:
        rn = data["rate_noise"]
        if not isinstance(rn, dict):
            raise ConfigInvalid("noise.rate_noise", "expected an object with bound and std")
        try:
            bound = _num(rn, "bound", positive=True)
            std = _num(rn, "std", default=bound / 3.0, positive=True)
        except ConfigInvalid as exc:
            raise ConfigInvalid(f"noise.rate_noise.{exc.field}", str(exc).split(": ", 1)[1]) from None
    return NoiseModel(jitter, std, bound, seed)


def config_from_dict(data: dict, base_dir: Path = Path(".")) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigInvalid("<root>", "expected a JSON object")
    c = _num(data, "c", positive=True)
    d = _num(data, "d", positive=True)
    mu = _num(data, "mu")
    if c > d:
        raise ConfigInvalid("c", "c ≤ d violated")
    if mu <= 0:
        raise ConfigInvalid("mu", "mu > 0 violated")
    topology = data.get("topology", "two_agent")
    if topology not in ("two_agent", "multi_agent"):
        raise ConfigInvalid("topology", f"expected two_agent or multi_agent, got {topology!r}")

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigInvalid("seed", "expected a non-negative integer")

    hz = data.get("horizon") or {}
    if not isinstance(hz, dict):
        raise ConfigInvalid("horizon", "expected an object with t_max and/or j_max")
    t_max = math.inf if hz.get("t_max") is None else _num(hz, "t_max", positive=True)
    j_max = hz.get("j_max", 600)
    if isinstance(j_max, bool) or not isinstance(j_max, int) or j_max <= 0:
        raise ConfigInvalid("horizon.j_max", "expected a positive integer")

    flow_samples = data.get("flow_samples", 4)
    if isinstance(flow_samples, bool) or not isinstance(flow_samples, int) or flow_samples < 1:
        raise ConfigInvalid("flow_samples", "expected an integer >= 1")

    cfg = ScenarioConfig(
        c=c,
        d=d,
        mu=mu,
        topology=topology,
        horizon=Horizon(t_max, j_max),
        noise=_parse_noise(data.get("noise"), d, seed),
        seed=seed,
        flow_samples=flow_samples,
    )
    if topology == "two_agent":
        cfg.a_i = _num(data, "a_i")
        cfg.a_k = _num(data, "a_k")
        cfg.tau_i0 = _num(data, "tau_i0", 0.0)
        cfg.tau_k0 = _num(data, "tau_k0", 0.0)
    else:
        cfg.a_R = _num(data, "a_R")
        cfg.a_S = _num_list(data, "a")
        cfg.tau_R0 = _num(data, "tau_R0", 0.0)
        if data.get("tau_S0") is None:
            cfg.tau_S0 = [0.0] * len(cfg.a_S)
        else:
            cfg.tau_S0 = _num_list(data, "tau_S0", len(cfg.a_S))

    if data.get("certificate") is not None:
        if not isinstance(data["certificate"], str):
            raise ConfigInvalid("certificate", "expected a path")
        cfg.certificate = base_dir / data["certificate"]
    outputs = data.get("outputs") or {}
    if not isinstance(outputs, dict):
        raise ConfigInvalid("outputs", "expected an object")
    cfg.outputs = {k: base_dir / v for k, v in outputs.items() if isinstance(v, str)}
    if data.get("terminal_tol") is not None:
        cfg.terminal_tol = _num(data, "terminal_tol", positive=True)
    return cfg


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if not text.strip():
        raise IoError(f"{path} is empty")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IoError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(data, path.parent)


# ---------------------------------------------------------------- running


def initial_state(cfg: ScenarioConfig):
    if cfg.topology == "two_agent":
        return HybridState.initial(cfg.tau_i0, cfg.tau_k0, cfg.a_i, cfg.a_k, cfg.c)
    return MultiState.initial(cfg.tau_R0, cfg.tau_S0, cfg.a_R, cfg.a_S, cfg.c, cfg.d)


def _same_params(traj_or_cfg, cert: Certificate) -> bool:
    return all(
        math.isclose(getattr(traj_or_cfg, k), getattr(cert, k), rel_tol=1e-12, abs_tol=0.0)
        for k in ("c", "d", "mu")
    )


def simulate(cfg: ScenarioConfig, cert: Optional[Certificate] = None) -> Trajectory:
    noise = cfg.noise if cfg.noise.enabled else None
    P = cert.P_matrix if cert is not None else None
    runner = run if cfg.topology == "two_agent" else run_multi
    traj = runner(
        initial_state(cfg),
        cfg.params,
        cfg.horizon,
        noise=noise,
        seed=cfg.seed,
        P=P,
        flow_samples=cfg.flow_samples,
    )
    return traj


def run_scenario(cfg: ScenarioConfig, cert: Optional[Certificate] = None):
    """Simulate a scenario and verify it. Returns (trajectory, report)."""
    if cert is None and cfg.certificate is not None:
        cert = Certificate.load(cfg.certificate)
    if cert is not None and not _same_params(cfg, cert):
        raise VerifyInputMismatch("certificate (c, d, mu) differ from the scenario")
    traj = simulate(cfg, cert)
    return traj, verify_trajectory(traj, cert, terminal_tol=cfg.terminal_tol)


# ---------------------------------------------------------------- trajectory files


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def _multi_header(n: int) -> list:
    return (
        ["t", "j", "p", "q", "active", "tau", "tau_R"]
        + [f"tau_S_{i}" for i in range(1, n + 1)]
        + [f"eps_tau_{i}" for i in range(1, n + 1)]
        + [f"eps_a_{i}" for i in range(1, n + 1)]
        + ["V"]
    )


def _row(sample: Sample, topology: str) -> list:
    s = sample.state
    if topology == "two_agent":
        vals = [sample.t, sample.j, s.p, s.q, s.tau, s.tau_i, s.tau_k, s.a_i, s.a_k, s.eps_tau, s.eps_a, sample.V]
    else:
        vals = [sample.t, sample.j, s.p, s.q, s.active, s.tau, s.tau_R]
        vals += list(s.tau_S) + [e[0] for e in s.eps] + [e[1] for e in s.eps] + [sample.V]
    return [_fmt(v) for v in vals]


def _trajectory_meta(traj: Trajectory) -> dict:
    meta = {"topology": traj.topology, "c": traj.c, "d": traj.d, "mu": traj.mu, "nominal": traj.nominal}
    if traj.topology == "multi_agent" and traj.samples:
        s0 = traj.samples[0].state
        meta.update(n_children=s0.n_children, a_R=s0.a_R, a0=list(s0.a), tau_cycle0=list(s0.tau_cycle))
    return meta


def write_trajectory(traj: Trajectory, path) -> None:
    """CSV of all samples plus a small JSON sidecar with (c, d, mu) and topology."""
    if traj.topology == "two_agent":
        header = TWO_AGENT_HEADER
    else:
        n = traj.meta.get("n_children") or (traj.samples[0].state.n_children if traj.samples else 1)
        header = _multi_header(n)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for s in traj.samples:
                w.writerow(_row(s, traj.topology))
        meta_path(path).write_text(json.dumps(_trajectory_meta(traj), indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None


def _replayed_buffers(pre, post_tau: float, params: ProtocolParams, jump):
    """Buffers after a jump, recomputed from the pre-jump state."""
    try:
        return jump(pre, post_tau, params)
    except HysyncError as exc:
        raise IoError(f"trajectory file is not a valid run: {exc}") from None


def read_trajectory(path, meta: Optional[dict] = None) -> Trajectory:
    """Load a trajectory written by :func:`write_trajectory`.

    Timestamp buffers are not stored in the CSV; they are rebuilt by replaying
    the buffer writes of every jump, starting from empty buffers. For
    multi-node files the child rates and cycle timers are rebuilt the same way
    from the sidecar's initial values.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise IoError(f"{path} is empty")
    if meta is None:
        mp = meta_path(path)
        try:
            meta = json.loads(mp.read_text())
        except OSError:
            raise IoError(f"missing sidecar {mp} (needed for c, d, mu)") from None
        except json.JSONDecodeError as exc:
            raise IoError(f"{mp}: not valid JSON ({exc})") from None
    header, body = rows[0], rows[1:]
    try:
        c, d, mu = float(meta["c"]), float(meta["d"]), float(meta["mu"])
        topology = meta.get("topology", "two_agent")
        nominal = bool(meta.get("nominal", True))
    except (KeyError, TypeError, ValueError) as exc:
        raise IoError(f"bad trajectory metadata: {exc}") from None
    params = ProtocolParams(c, d, mu)
    try:
        if topology == "two_agent":
            if header != TWO_AGENT_HEADER:
                raise IoError(f"unexpected header {header}")
            samples = _read_two_agent(body, params)
        else:
            n = int(meta["n_children"])
            if header != _multi_header(n):
                raise IoError(f"unexpected header {header}")
            samples = _read_multi(body, params, n, meta)
    except (ValueError, IndexError, KeyError) as exc:
        raise IoError(f"malformed trajectory row: {exc}") from None
    out = Trajectory(samples, c, d, mu, nominal=nominal, topology=topology)
    if topology == "multi_agent":
        out.meta = {"n_children": int(meta["n_children"]), "a_ref": float(meta["a_R"])}
    return out


def _read_two_agent(body, params) -> list:
    samples = []
    prev = None
    for r in body:
        t, j = float(r[0]), int(r[1])
        p, q = int(r[2]), int(r[3])
        tau, tau_i, tau_k, a_i, a_k, e_tau, e_a, V = (float(x) for x in r[4:12])
        if prev is None:
            mem_i = mem_k = ZERO_BUFFER
        elif j == prev.j:
            mem_i, mem_k = prev.state.mem_i, prev.state.mem_k
        else:
            post = _replayed_buffers(replace(prev.state, tau=0.0), tau, params, apply_jump)
            mem_i, mem_k = post.mem_i, post.mem_k
        state = HybridState(tau_i, tau_k, a_i, a_k, tau, mem_i, mem_k, p, q, e_tau, e_a)
        prev = Sample(t, j, state, V)
        samples.append(prev)
    return samples


def _read_multi(body, params, n: int, meta: dict) -> list:
    samples = []
    prev = None
    seg_t0 = 0.0
    seg_cycle = tuple(float(x) for x in meta["tau_cycle0"])
    a_R = float(meta["a_R"])
    rates = tuple(float(x) for x in meta["a0"])
    for r in body:
        t, j, p, q, active = float(r[0]), int(r[1]), int(r[2]), int(r[3]), int(r[4])
        tau, tau_R = float(r[5]), float(r[6])
        tau_S = tuple(float(x) for x in r[7 : 7 + n])
        e_tau = [float(x) for x in r[7 + n : 7 + 2 * n]]
        e_a = [float(x) for x in r[7 + 2 * n : 7 + 3 * n]]
        V = float(r[7 + 3 * n])
        eps = tuple(zip(e_tau, e_a))
        if prev is None:
            mem_R = mem_S = ZERO_BUFFER
            cycle = seg_cycle
        elif j == prev.j:
            mem_R, mem_S = prev.state.mem_R, prev.state.mem_S
            cycle = tuple(max(tc - (t - seg_t0), 0.0) for tc in seg_cycle)
        else:
            post = _replayed_buffers(replace(prev.state, tau=0.0), tau, params, jump_multi)
            mem_R, mem_S, rates, cycle = post.mem_R, post.mem_S, post.a, post.tau_cycle
            seg_t0, seg_cycle = t, cycle
        state = MultiState(tau_R, tau_S, a_R, rates, tau, cycle, mem_R, mem_S, active, p, q, eps)
        prev = Sample(t, j, state, V)
        samples.append(prev)
    return samples


# ---------------------------------------------------------------- verification


@dataclass(frozen=True)
class CheckResult:
    applicable: bool
    passed: bool
    margin: float = math.inf
    detail: str = ""


@dataclass
class VerificationReport:
    checks: dict

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.checks.values() if r.applicable)

    def lines(self) -> list:
        out = []
        for name, r in self.checks.items():
            if not r.applicable:
                status = "n/a "
            else:
                status = "PASS" if r.passed else "FAIL"
            out.append(f"{status} {name:32s} margin={r.margin:.3e} {r.detail}".rstrip())
        return out


def _na(detail: str) -> CheckResult:
    return CheckResult(False, True, math.nan, detail)


def _result(worst_margin: float, detail: str = "") -> CheckResult:
    return CheckResult(True, worst_margin >= 0, worst_margin, detail)


def _norm(v) -> float:
    return math.hypot(v[0], v[1])


def _eps_list(state) -> list:
    if isinstance(state, MultiState):
        return list(state.eps)
    return [(state.eps_tau, state.eps_a)]


def _check_eps(traj: Trajectory) -> CheckResult:
    worst = 0.0
    for s in traj.samples:
        st = s.state
        if isinstance(st, MultiState):
            for k, (et, ea) in enumerate(st.eps):
                worst = max(worst, abs(et - (st.tau_R - st.tau_S[k])), abs(ea - (st.a_R - st.a[k])))
        else:
            worst = max(worst, abs(st.eps_tau - (st.tau_i - st.tau_k)), abs(st.eps_a - (st.a_i - st.a_k)))
    return _result(EPS_TOL - worst, f"max deviation {worst:.3e}")


def _first_correction_index(traj: Trajectory) -> Optional[int]:
    for k in range(1, len(traj.samples)):
        a, b = traj.samples[k - 1], traj.samples[k]
        if b.j == a.j + 1 and a.state.p == 5:
            return k
    return None


def _check_membership(traj: Trajectory) -> CheckResult:
    start = _first_correction_index(traj)
    if start is None:
        return _result(0.0, "no correction reached; nothing to check")
    bad = 0
    for s in traj.samples[start:]:
        st = s.state
        view = st.pair_view() if isinstance(st, MultiState) else st
        if memory_class(view, traj.c, traj.d) is None:
            bad += 1
    return CheckResult(True, bad == 0, -float(bad) if bad else 0.0, f"{bad} samples outside the memory set")


def _values(traj: Trajectory, P) -> list:
    if traj.topology == "multi_agent":
        return [lyapunov_multi(s.state, P) for s in traj.samples]
    c, d = traj.c, traj.d
    return [
        lyapunov_value((s.state.eps_tau, s.state.eps_a), s.state.tau, s.state.p, s.state.q, P, c, d)
        for s in traj.samples
    ]


def flow_margins(traj: Trajectory, cert: Certificate, growth_constant: float, values=None) -> list:
    """Per-sample slack of the flow behaviour of V (negative means violated).

    On in-transit intervals (and everywhere for multi-node runs) V must stay
    constant. On residence intervals it may grow at most like
    exp(gamma * dt / growth_constant).
    """
    P = cert.P_matrix
    vals = values if values is not None else _values(traj, P)
    scale_const = growth_constant
    out = []
    start = 0
    samples = traj.samples
    for k in range(1, len(samples) + 1):
        if k < len(samples) and samples[k].j == samples[start].j:
            continue
        s0, v0 = samples[start], vals[start]
        tol = FLOW_TOL * max(1.0, abs(v0))
        growing = traj.topology == "two_agent" and s0.state.q == 0
        for m in range(start + 1, k):
            if growing:
                cap = math.exp(cert.gamma * (samples[m].t - s0.t) / scale_const) * v0
                out.append((cap + tol - vals[m]) / max(1.0, abs(v0)))
            else:
                out.append((tol - abs(vals[m] - v0)) / max(1.0, abs(v0)))
        start = k
    return out


def _check_flow(traj: Trajectory, cert: Certificate, vals) -> CheckResult:
    # dV/dt <= gamma |eps|^2 on residence intervals and |eps|^2 <= V / alpha1,
    # so the growth rate that actually follows is gamma / alpha1
    m = flow_margins(traj, cert, cert.alpha1, vals)
    worst = min(m) if m else math.inf
    return _result(worst, f"{sum(x < 0 for x in m)} violating samples")


def jump_margins(traj: Trajectory, cert: Certificate, vals, sigma: float) -> list:
    """Slack of the jump behaviour of V at every recorded jump."""
    P = cert.P_matrix
    out = []
    samples = traj.samples
    for k in range(1, len(samples)):
        a, b = samples[k - 1], samples[k]
        if b.j != a.j + 1:
            continue
        if a.state.p == 5:
            if traj.topology == "multi_agent":
                idx = a.state.active - 1
                eps = a.state.eps[idx]
                dv = child_value(b.state, idx, P) - child_value(a.state, idx, P)
                view = a.state.pair_view()
            else:
                eps = (a.state.eps_tau, a.state.eps_a)
                dv = vals[k] - vals[k - 1]
                view = a.state
            if memory_class(view, traj.c, traj.d) != 6:
                continue  # corrections are only exact from consistent buffers
            out.append(-sigma * (eps[0] ** 2 + eps[1] ** 2) + JUMP_SLACK - dv)
        else:
            tol = FLOW_TOL * max(1.0, abs(vals[k - 1]))
            out.append(tol - abs(vals[k] - vals[k - 1]))
    return out


def _check_jumps(traj: Trajectory, cert: Certificate, vals) -> CheckResult:
    sigma = cert.sigma
    if traj.topology == "multi_agent":
        try:
            sigma = sigma_of(cert.P_matrix, traj.c, traj.d, traj.mu, horizon=multi_horizon(traj.c, traj.d))
        except NoCertificate as exc:
            return CheckResult(True, False, -math.inf, f"multi-node jump condition fails: {exc}")
    m = jump_margins(traj, cert, vals, sigma)
    worst = min(m) if m else math.inf
    return _result(worst, f"{sum(x < 0 for x in m)} violating jumps")


def _check_bound(traj: Trajectory, cert: Certificate) -> CheckResult:
    if traj.topology != "two_agent":
        return _na("no explicit envelope for multi-node runs")
    try:
        env = envelope(cert)
    except NoCertificate:
        return _na("certificate does not contract (eta^(1/6) * rho >= 1)")
    e0 = _norm((traj.samples[0].state.eps_tau, traj.samples[0].state.eps_a))
    worst = math.inf
    for s in traj.samples:
        b = env.bound(s.j, e0)
        worst = min(worst, b * (1 + 1e-12) + 1e-300 - _norm((s.state.eps_tau, s.state.eps_a)))
    return _result(worst)


def _check_terminal(traj: Trajectory, terminal_tol: Optional[float]) -> CheckResult:
    first = _eps_list(traj.samples[0].state)
    last = _eps_list(traj.samples[-1].state)
    tol = 1.0 if terminal_tol is None else terminal_tol
    worst = math.inf
    ratios = []
    for e0, e1 in zip(first, last):
        n0, n1 = _norm(e0), _norm(e1)
        ratios.append(n1 / n0 if n0 > 0 else (0.0 if n1 == 0 else math.inf))
        worst = min(worst, tol * n0 + EPS_TOL - n1)
    return _result(worst, "final/initial |eps| = " + ", ".join(f"{r:.3e}" for r in ratios))


def verify_trajectory(
    traj: Trajectory, cert: Optional[Certificate] = None, terminal_tol: Optional[float] = None
) -> VerificationReport:
    """Check a trajectory against the structural and Lyapunov properties.

    Checks on the memory set, on V and on the decay envelope describe the
    noise-free system and are reported as not applicable for noisy runs.
    """
    if cert is not None and not _same_params(traj, cert):
        raise VerifyInputMismatch(
            f"trajectory has (c, d, mu) = ({traj.c}, {traj.d}, {traj.mu}), "
            f"certificate has ({cert.c}, {cert.d}, {cert.mu})"
        )
    checks = {}
    if not traj.samples:
        for name in (
            "eps_consistency",
            "M_membership_after_first_cycle",
            "V_flow_behavior",
            "V_jump_decrement",
            "bound_envelope",
            "terminal_error",
        ):
            checks[name] = _na("empty trajectory")
        return VerificationReport(checks)

    checks["eps_consistency"] = _check_eps(traj)
    nominal_note = "noisy run: property only holds for the noise-free system"
    checks["M_membership_after_first_cycle"] = _check_membership(traj) if traj.nominal else _na(nominal_note)
    if cert is None:
        for name in ("V_flow_behavior", "V_jump_decrement", "bound_envelope"):
            checks[name] = _na("no certificate supplied")
    elif not traj.nominal:
        for name in ("V_flow_behavior", "V_jump_decrement", "bound_envelope"):
            checks[name] = _na(nominal_note)
    else:
        vals = _values(traj, cert.P_matrix)
        checks["V_flow_behavior"] = _check_flow(traj, cert, vals)
        checks["V_jump_decrement"] = _check_jumps(traj, cert, vals)
        checks["bound_envelope"] = _check_bound(traj, cert)
    checks["terminal_error"] = _check_terminal(traj, terminal_tol)
    return VerificationReport(checks)


# ---------------------------------------------------------------- plot data


def emit_plot_data(traj: Trajectory, prefix) -> tuple:
    """Write ``<prefix>_errors.csv`` and ``<prefix>_lyapunov.csv``."""
    err_path = Path(f"{prefix}_errors.csv")
    lyap_path = Path(f"{prefix}_lyapunov.csv")
    if traj.topology == "multi_agent":
        n = traj.meta.get("n_children") or (traj.samples[0].state.n_children if traj.samples else 1)
        err_header = ["t"]
        for i in range(1, n + 1):
            err_header += [f"abs_eps_tau_{i}", f"abs_eps_a_{i}"]
    else:
        err_header = ["t", "abs_eps_tau", "abs_eps_a"]
    try:
        with open(err_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(err_header)
            for s in traj.samples:
                row = [_fmt(s.t)]
                for et, ea in _eps_list(s.state):
                    row += [_fmt(abs(et)), _fmt(abs(ea))]
                w.writerow(row)
        with open(lyap_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "j", "V"])
            for s in traj.samples:
                w.writerow([_fmt(s.t), _fmt(s.j), _fmt(s.V)])
    except OSError as exc:
        raise IoError(f"cannot write plot data: {exc}") from None
    return err_path, lyap_path


# ---------------------------------------------------------------- CLI


def _cmd_design(args) -> int:
    horizon = multi_horizon(args.c, args.d) if args.multi else None
    P = design_p(args.c, args.d, args.mu, args.q_scale, horizon=horizon)
    cert = convergence_factors(P, args.c, args.d, args.mu, horizon=horizon)
    cert.save(args.output)
    print(f"P = {list(cert.P)}  sigma = {cert.sigma:.6g}  contraction_ok = {cert.contraction_ok}")
    return EXIT_OK


def _simulate_one(cfg_path: str, cert_path: Optional[str], out: Optional[str]) -> tuple:
    cfg = parse_config(cfg_path)
    cert = Certificate.load(cert_path) if cert_path else None
    traj, report = run_scenario(cfg, cert)
    target = out or cfg.outputs.get("trajectory")
    if target is None:
        raise ConfigInvalid("outputs.trajectory", "no output path given (use -o)")
    write_trajectory(traj, target)
    if "plot_prefix" in cfg.outputs:
        emit_plot_data(traj, cfg.outputs["plot_prefix"])
    return str(target), report.lines()


def _cmd_simulate(args) -> int:
    if args.batch:
        with ProcessPoolExecutor() as pool:
            futures = [pool.submit(_simulate_one, p, args.cert, None) for p in args.batch]
            for p, fut in zip(args.batch, futures):
                target, lines = fut.result()
                print(f"{p} -> {target}")
                for line in lines:
                    print("  " + line)
        return EXIT_OK
    if not args.config:
        raise ConfigInvalid("--config", "required unless --batch is used")
    target, lines = _simulate_one(args.config, args.cert, args.output)
    print(f"wrote {target}")
    for line in lines:
        print(line)
    return EXIT_OK


def _cmd_verify(args) -> int:
    traj = read_trajectory(args.traj)
    cert = Certificate.load(args.cert) if args.cert else None
    report = verify_trajectory(traj, cert)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_VERIFY


def _cmd_plot(args) -> int:
    traj = read_trajectory(args.traj)
    for p in emit_plot_data(traj, args.output):
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hysync", description="Adaptive two-way clock synchronization toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="design a Lyapunov certificate")
    d.add_argument("--c", type=float, required=True, help="residence delay")
    d.add_argument("--d", type=float, required=True, help="propagation delay")
    d.add_argument("--mu", type=float, required=True, help="rate-correction gain")
    d.add_argument("--q-scale", type=float, default=1.0)
    d.add_argument("--multi", action="store_true", help="use the multi-node (3c+3d) horizon")
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=_cmd_design)

    s = sub.add_parser("simulate", help="run a scenario")
    s.add_argument("--config")
    s.add_argument("--cert")
    s.add_argument("-o", "--output")
    s.add_argument("--batch", nargs="+", metavar="CONFIG", help="run several configs in parallel")
    s.set_defaults(func=_cmd_simulate)

    v = sub.add_parser("verify", help="check a trajectory file")
    v.add_argument("--traj", required=True)
    v.add_argument("--cert")
    v.set_defaults(func=_cmd_verify)

    p = sub.add_parser("plot", help="write plot-ready CSV series")
    p.add_argument("--traj", required=True)
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=_cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (Infeasible, NoCertificate) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigInvalid, IoError, InvalidParams, InvalidCertificateInput, VerifyInputMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
