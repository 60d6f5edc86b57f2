import copy
from pathlib import Path

import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from plastopt.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _raw(name):
    with open(CONFIGS / name, "rb") as fh:
        return tomllib.load(fh)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.mesh.n_elements > 0 and len(cfg.program.stages) >= 1


def test_minimal_defaults():
    cfg = load_config(CONFIGS / "stretch.toml")
    assert cfg.mesh.n_elements == 1
    assert cfg.catalog.names == ["bronze"]
    assert cfg.weights.as_dict() == {"stiff": 0.0, "force": 0.0, "energy": 1.0}
    assert cfg.threads == 1 and cfg.vtk_every == 0 and cfg.verify_steps_per_leg == 40
    assert cfg.reaction is not None


def test_resolved_echo_full_scale():
    res = load_config(CONFIGS / "damper_full.toml").resolved()
    assert res["filter_radius"] == 10.0
    assert res["constraints"]["volume"] == 0.5
    assert res["optimizer"]["continuation"]["start"] == 41
    assert res["optimizer"]["max_iter"] == 500
    assert res["mesh"]["n_elements"] == 15000


@pytest.mark.parametrize("weights", [{"w_stiff": 0.3, "w_force": 0.3, "w_energy": 0.3},
                                     {"w_stiff": 1.5, "w_energy": -0.5}])
def test_bad_weights_rejected(weights):
    raw = _raw("stretch.toml")
    raw["objective"] = weights
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.errors[0][0] == "objective"


def test_every_error_is_reported():
    raw = _raw("stretch.toml")
    raw["design"]["foo"] = 1
    raw["bogus"] = {}
    raw["design"]["initial_rho"] = 2.0
    raw["threads"] = 0
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    keys = {k for k, _ in exc.value.errors}
    assert {"design.foo", "bogus", "design.initial_rho", "threads"} <= keys
    assert ("design.foo", "unknown key") in exc.value.errors


def test_unknown_material_in_constraint():
    raw = _raw("stretch.toml")
    raw["constraints"] = {"material_volumes": {"unobtainium": 0.1}}
    with pytest.raises(ConfigError) as exc:
        parse_config(raw)
    assert exc.value.errors[0][0] == "constraints.material_volumes.unobtainium"


def test_gradient_step_range():
    raw = copy.deepcopy(_raw("stretch.toml"))
    raw["gradients"] = {"eps": 0.1}
    with pytest.raises(ConfigError):
        parse_config(raw)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_config(tmp_path / "missing.toml")
    assert exc.value.errors[0][0] == "file"
    bad = tmp_path / "bad.toml"
    bad.write_text("[mesh\ndim = 2\n")
    with pytest.raises(ConfigError) as exc:
        load_config(bad)
    assert exc.value.errors[0][0] == "syntax"
