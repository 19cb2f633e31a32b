import json
import math

import numpy as np
import pytest

from conftest import EX1, EX2
from hysync.certificate import Certificate, convergence_factors, design_p
from hysync.error_model import rate_gain
from hysync.errors import ConfigInvalid, IoError, VerifyInputMismatch
from hysync.harness import (
    NoiseModel,
    config_from_dict,
    emit_plot_data,
    main,
    meta_path,
    parse_config,
    read_trajectory,
    run_scenario,
    simulate,
    verify_trajectory,
    write_trajectory,
)
from hysync.multi_agent import design_p_multi
from hysync.certificate import multi_horizon
from hysync.sim_engine import Trajectory

EX1_CONFIG = {"c": 0.1, "d": 0.2, "mu": 0.833, "a_i": 1.0, "a_k": 1.8, "tau_i0": 2.5, "horizon": {"j_max": 120}}
EX2_CONFIG = {
    "c": 0.2, "d": 0.5, "mu": 0.3571, "a_i": 1.1, "a_k": 0.75, "tau_i0": 2.5,
    "horizon": {"j_max": 180}, "noise": {"delay_jitter": [0.49, 0.51]}, "seed": 3,
}
MULTI_CONFIG = {
    "c": 0.1, "d": 0.2, "mu": 0.833, "topology": "multi_agent",
    "a_R": 1.0, "a": [0.7, 1.4], "tau_S0": [1.0, -2.0], "horizon": {"j_max": 240},
}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return path


def ex1_cert():
    return convergence_factors(design_p(*EX1), *EX1)


def test_parse_example_config(tmp_path):
    cfg = parse_config(write_json(tmp_path / "c.json", EX1_CONFIG))
    assert (cfg.c, cfg.d, cfg.mu, cfg.a_i, cfg.a_k) == (0.1, 0.2, 0.833, 1.0, 1.8)
    assert not cfg.noise.enabled


def test_parse_noise_defaults():
    cfg = config_from_dict({**EX1_CONFIG, "noise": {"rate_noise": {"bound": 0.3}}})
    assert cfg.noise.rate_bound == 0.3 and cfg.noise.rate_std == pytest.approx(0.1)
    cfg2 = config_from_dict(EX2_CONFIG)
    assert cfg2.noise.delay_jitter == (0.49, 0.51)


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"c": 0.3}, "c"),
        ({"mu": 0.0}, "mu"),
        ({"mu": -1}, "mu"),
        ({"a_k": "fast"}, "a_k"),
        ({"topology": "ring"}, "topology"),
        ({"horizon": {"j_max": 0}}, "horizon.j_max"),
        ({"noise": {"delay_jitter": [0.3, 0.1]}}, "noise.delay_jitter"),
        ({"noise": {"rate_noise": {"bound": -1}}}, "noise.rate_noise.bound"),
    ],
)
def test_config_errors_name_field(patch, field):
    with pytest.raises(ConfigInvalid) as info:
        config_from_dict({**EX1_CONFIG, **patch})
    assert info.value.field == field


def test_c_greater_than_d_message():
    with pytest.raises(ConfigInvalid, match="c ≤ d violated"):
        config_from_dict({**EX1_CONFIG, "c": 0.3, "d": 0.2})


def test_missing_empty_and_bad_files(tmp_path):
    with pytest.raises(IoError):
        parse_config(tmp_path / "nope.json")
    (tmp_path / "empty.json").write_text("")
    with pytest.raises(IoError):
        parse_config(tmp_path / "empty.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(IoError):
        parse_config(tmp_path / "bad.json")


def test_example_one_scenario_passes():
    traj, report = run_scenario(config_from_dict(EX1_CONFIG), ex1_cert())
    assert report.ok, report.lines()
    assert all(report.checks[k].applicable for k in report.checks)
    e0 = np.linalg.norm(traj.samples[0].state.eps)
    # 20 corrections
    corr = [post for pre, post in traj.jump_pairs() if pre.state.p == 5]
    assert np.linalg.norm(corr[19].state.eps) <= 1e-6 * e0


def test_noisy_run_marks_lyapunov_checks_not_applicable():
    cfg = config_from_dict(EX2_CONFIG)
    cert = convergence_factors(design_p(*EX2), *EX2)
    traj, report = run_scenario(cfg, cert)
    assert not traj.nominal
    for name in ("bound_envelope", "V_flow_behavior", "V_jump_decrement", "M_membership_after_first_cycle"):
        assert not report.checks[name].applicable
    assert report.checks["eps_consistency"].passed
    assert report.ok


def test_unstable_gain_fails_jump_decrement():
    c, d = 0.1, 0.2
    mu = 2.5 / rate_gain(c, d)
    cfg = config_from_dict({**EX1_CONFIG, "mu": mu})
    cert = Certificate.from_constants(c, d, mu, np.eye(2), 0.1, 1.0, 2.0, 1.0)
    _, report = run_scenario(cfg, cert)
    assert report.checks["V_jump_decrement"].applicable
    assert not report.checks["V_jump_decrement"].passed
    assert not report.ok


def test_mismatched_certificate_rejected():
    traj = simulate(config_from_dict(EX1_CONFIG))
    cert = convergence_factors(design_p(*EX2), *EX2)
    with pytest.raises(VerifyInputMismatch):
        verify_trajectory(traj, cert)


def test_multi_agent_scenario_passes():
    c, d, mu = EX1
    cert = convergence_factors(design_p_multi(c, d, mu), c, d, mu, horizon=multi_horizon(c, d))
    traj, report = run_scenario(config_from_dict(MULTI_CONFIG), cert)
    assert report.ok, report.lines()
    assert not report.checks["bound_envelope"].applicable


@pytest.mark.parametrize("config", [EX1_CONFIG, EX2_CONFIG, MULTI_CONFIG])
def test_trajectory_round_trip(tmp_path, config):
    cfg = config_from_dict(config)
    cert = ex1_cert() if config is EX1_CONFIG else None
    traj = simulate(cfg, cert)
    path = tmp_path / "traj.csv"
    write_trajectory(traj, path)
    assert meta_path(path).exists()
    back = read_trajectory(path)
    assert len(back.samples) == len(traj.samples)
    assert (back.c, back.d, back.mu, back.topology) == (traj.c, traj.d, traj.mu, traj.topology)
    for a, b in zip(traj.samples, back.samples):
        assert a.t == b.t and a.j == b.j
        assert (math.isnan(a.V) and math.isnan(b.V)) or a.V == b.V
        sa, sb = a.state, b.state
        assert (sa.p, sa.q, sa.tau) == (sb.p, sb.q, sb.tau)
        assert sa.eps == sb.eps if isinstance(sa.eps, tuple) else np.array_equal(sa.eps, sb.eps)
    # rewriting the reread trajectory reproduces the file byte for byte
    path2 = tmp_path / "again.csv"
    write_trajectory(back, path2)
    assert path.read_bytes() == path2.read_bytes()
    # rebuilt buffers give the same verdicts
    assert verify_trajectory(back, cert).ok == verify_trajectory(traj, cert).ok


def test_jump_rows_counted(tmp_path):
    traj = simulate(config_from_dict({**EX1_CONFIG, "horizon": {"t_max": 9.0}, "flow_samples": 3}))
    path = tmp_path / "t.csv"
    write_trajectory(traj, path)
    rows = path.read_text().splitlines()[1:]
    js = [int(r.split(",")[1]) for r in rows]
    assert max(js) == 60
    # initial sample + 3 per flow interval + one post-jump row per jump
    assert len(rows) == 1 + 60 * 3 + 60


def test_empty_trajectory_files(tmp_path):
    traj = Trajectory([], *EX1)
    path = tmp_path / "empty.csv"
    write_trajectory(traj, path)
    assert len(path.read_text().splitlines()) == 1
    assert read_trajectory(path).samples == []
    e, v = emit_plot_data(traj, tmp_path / "p")
    assert len(e.read_text().splitlines()) == 1 and len(v.read_text().splitlines()) == 1


def test_runs_are_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trajectory(simulate(config_from_dict(EX2_CONFIG)), a)
    write_trajectory(simulate(config_from_dict(EX2_CONFIG)), b)
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    write_trajectory(simulate(config_from_dict({**EX2_CONFIG, "seed": 4})), c)
    assert a.read_bytes() != c.read_bytes()


def test_noise_draws_respect_bounds():
    rng = np.random.default_rng(0)
    nm = NoiseModel(delay_jitter=(0.49, 0.51), rate_std=0.1, rate_bound=0.3)
    delays = [nm.draw_delay(rng, 0.5) for _ in range(2000)]
    rates = [nm.draw_rate(rng) for _ in range(5000)]
    assert min(delays) >= 0.49 and max(delays) <= 0.51
    assert max(abs(r) for r in rates) < 0.3
    assert abs(np.mean(rates)) < 0.01
    off = NoiseModel()
    assert not off.enabled and off.draw_delay(rng, 0.5) == 0.5 and off.draw_rate(rng) == 0.0


def test_rate_noise_held_over_each_flow_interval():
    cfg = config_from_dict({**EX1_CONFIG, "a_k": 1.0, "tau_i0": 0.0, "noise": {"rate_noise": {"bound": 0.3}}})
    traj = simulate(cfg)
    for seg in traj.flow_segments():
        if len(seg) < 3:
            continue
        steps = [(b.state.tau_i - a.state.tau_i) / (b.t - a.t) for a, b in zip(seg, seg[1:]) if b.t > a.t]
        assert max(steps) - min(steps) <= 1e-9
        if seg[0].j < 6:
            # before any correction the common draw leaves equal clocks together
            assert abs(seg[-1].state.eps_tau) <= 1e-12


def test_plot_data_columns(tmp_path):
    cert = ex1_cert()
    traj = simulate(config_from_dict(EX1_CONFIG), cert)
    e, v = emit_plot_data(traj, tmp_path / "ex1")
    assert e.read_text().splitlines()[0] == "t,abs_eps_tau,abs_eps_a"
    assert v.read_text().splitlines()[0] == "t,j,V"
    rows = [line.split(",") for line in v.read_text().splitlines()[1:]]
    assert len(rows) == len(traj.samples)
    # V drops at every correction
    for pre, post in traj.jump_pairs():
        if pre.state.p == 5:
            assert post.V < pre.V
    traj_m = simulate(config_from_dict(MULTI_CONFIG))
    e2, _ = emit_plot_data(traj_m, tmp_path / "multi")
    assert e2.read_text().splitlines()[0] == "t,abs_eps_tau_1,abs_eps_a_1,abs_eps_tau_2,abs_eps_a_2"


def test_cli_end_to_end(tmp_path, capsys):
    cert = tmp_path / "cert.json"
    assert main(["design", "--c", "0.1", "--d", "0.2", "--mu", "0.833", "-o", str(cert)]) == 0
    cfg = write_json(tmp_path / "ex1.json", EX1_CONFIG)
    traj = tmp_path / "traj.csv"
    assert main(["simulate", "--config", str(cfg), "--cert", str(cert), "-o", str(traj)]) == 0
    assert main(["verify", "--traj", str(traj), "--cert", str(cert)]) == 0
    assert main(["plot", "--traj", str(traj), "-o", str(tmp_path / "plot")]) == 0
    assert (tmp_path / "plot_errors.csv").exists()


def test_cli_exit_codes(tmp_path):
    g2 = rate_gain(0.1, 0.2)
    assert main(["design", "--c", "0.1", "--d", "0.2", "--mu", str(2 / g2), "-o", str(tmp_path / "x.json")]) == 3
    bad = write_json(tmp_path / "bad.json", {**EX1_CONFIG, "c": 0.3})
    assert main(["simulate", "--config", str(bad), "-o", str(tmp_path / "t.csv")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "-o", str(tmp_path / "t.csv")]) == 2
    # a trajectory that breaks the certificate fails verification
    mu = 2.5 / g2
    cfg = write_json(tmp_path / "unstable.json", {**EX1_CONFIG, "mu": mu})
    cert = tmp_path / "unstable_cert.json"
    Certificate.from_constants(0.1, 0.2, mu, np.eye(2), 0.1, 1.0, 2.0, 1.0).save(cert)
    traj = tmp_path / "unstable.csv"
    assert main(["simulate", "--config", str(cfg), "-o", str(traj)]) == 0
    assert main(["verify", "--traj", str(traj), "--cert", str(cert)]) == 4
    # certificate for other parameters
    other = tmp_path / "other.json"
    assert main(["design", "--c", "0.2", "--d", "0.5", "--mu", "0.3571", "-o", str(other)]) == 0
    assert main(["verify", "--traj", str(traj), "--cert", str(other)]) == 2


def test_cli_batch(tmp_path):
    paths = []
    for seed in (1, 2):
        paths.append(str(write_json(tmp_path / f"s{seed}.json", {
            **EX2_CONFIG, "seed": seed, "horizon": {"j_max": 30}, "outputs": {"trajectory": f"s{seed}.csv"},
        })))
    assert main(["simulate", "--batch", *paths]) == 0
    assert (tmp_path / "s1.csv").exists() and (tmp_path / "s2.csv").exists()
