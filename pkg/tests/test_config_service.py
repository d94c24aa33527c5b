import json

import pytest

from common.errors import ConfigError, LabIOError
from services.config_service import parse_config

SIM = {"n": 20, "dt": 0.01, "t_end": 0.1}


def _write(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
    return path


def _config_error(tmp_path, payload) -> ConfigError:
    with pytest.raises(ConfigError) as info:
        parse_config(_write(tmp_path, payload))
    assert info.value.exit_code == 2
    return info.value


def test_minimal_simulate_config_gets_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, {"mode": "simulate", "sim": SIM}))
    assert cfg.dimension == 3 and cfg.threads == 1
    assert cfg.angular.cutoff_eps == pytest.approx(1e-2)
    assert cfg.moments.delta == 0.5 and cfg.moments.lambda_cap == 1e6
    assert cfg.moments.integrability is False
    assert cfg.sigma.gamma == 0.0
    sim = cfg.sim_config()
    assert sim.n == 20 and sim.seed == 0 and sim.kernel.gamma == 0.0


def test_unknown_key_is_named(tmp_path):
    error = _config_error(tmp_path, {"mode": "simulate", "sim": SIM, "sigma": {"gama": -1.0}})
    assert error.detail["key"] == "sigma.gama"
    assert "unknown key" in error.message


def test_missing_required_key(tmp_path):
    error = _config_error(tmp_path, {"mode": "simulate", "sim": {"n": 20, "dt": 0.01}})
    assert error.detail["key"] == "sim.t_end"
    assert error.message.startswith("missing key")


def test_invalid_value(tmp_path):
    error = _config_error(tmp_path, {"mode": "simulate", "sim": {**SIM, "n": 0}})
    assert error.detail["key"] == "sim.n"
    assert error.message.startswith("invalid value")


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(LabIOError) as info:
        parse_config(tmp_path / "absent.json")
    assert info.value.exit_code == 3
    assert info.value.to_record()["error"] == "io-error"


@pytest.mark.parametrize("payload", ["{not json", "[1, 2, 3]", "42"])
def test_malformed_payloads(tmp_path, payload):
    _config_error(tmp_path, payload)


def test_mode_needs_its_blocks(tmp_path):
    assert _config_error(tmp_path, {"mode": "simulate"}).detail["key"] == "sim"
    assert _config_error(tmp_path, {"mode": "stability", "sim": SIM}).detail["key"] == "stability"
    assert _config_error(tmp_path, {"mode": "metrics"}).detail["key"] == "metrics"


def test_lambda_probes_need_soft_potentials(tmp_path):
    payload = {"mode": "simulate", "sim": SIM, "moments": {"lambda_probes": True}}
    assert _config_error(tmp_path, payload).detail["key"] == "moments.lambda_probes"


def test_soft_stability_cannot_disable_lambda(tmp_path):
    payload = {
        "mode": "stability",
        "sigma": {"gamma": -0.5},
        "sim": SIM,
        "stability": {"epsilon": 0.01},
        "moments": {"lambda_probes": False},
    }
    assert _config_error(tmp_path, payload).detail["key"] == "moments.lambda_probes"


@pytest.mark.parametrize("times", [[0.05, 0.0], [0.0, 0.5], [-0.1, 0.0]])
def test_bad_snapshot_times(tmp_path, times):
    payload = {"mode": "simulate", "sim": {**SIM, "snapshot_times": times}}
    assert _config_error(tmp_path, payload).detail["key"] == "sim.snapshot_times"


def test_stability_times_start_at_zero(tmp_path):
    payload = {"mode": "stability", "sim": {**SIM, "snapshot_times": [0.05, 0.1]}, "stability": {"epsilon": 0.01}}
    assert _config_error(tmp_path, payload).detail["key"] == "sim.snapshot_times"


def test_audit_families_are_checked(tmp_path):
    unknown = _config_error(tmp_path, {"mode": "audit", "audit": {"families": ["no_such_family"]}})
    assert unknown.detail["key"] == "audit.families"
    out_of_range = _config_error(tmp_path, {"mode": "audit", "audit": {"families": ["very_soft_rate_lipschitz"]}})
    assert out_of_range.detail["key"] == "audit.families"
    assert out_of_range.detail["family"] == "very_soft_rate_lipschitz"


def test_audit_config_accepts_matching_kernel(tmp_path):
    payload = {
        "mode": "audit",
        "sigma": {"gamma": -1.5},
        "audit": {"families": ["very_soft_rate_lipschitz"], "samples": 10},
    }
    cfg = parse_config(_write(tmp_path, payload))
    assert cfg.audit.delta is None and cfg.audit.samples == 10


def test_negative_shift_times(tmp_path):
    payload = {"mode": "metrics", "metrics": {"mu_path": "a.csv", "nu_path": "b.csv", "times": [0.0, -1.0]}}
    assert _config_error(tmp_path, payload).detail["key"] == "metrics.times"


def test_gamma_at_minus_dimension_is_rejected(tmp_path):
    payload = {"mode": "simulate", "sim": SIM, "sigma": {"gamma": -3.0}}
    error = _config_error(tmp_path, payload)
    assert error.detail["key"] == "sigma.gamma"
    assert error.detail["dimension"] == 3
