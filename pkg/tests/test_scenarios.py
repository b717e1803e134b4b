import json

import pytest

from qnetsim.device import save_device_config
from qnetsim.experiments import UnknownExperimentError
from qnetsim.scenarios import ScenarioError, expand_grid, load_scenario, run_scenario, scenario_from_dict
from qnetsim.utils_io import read_json, sha256_file


def _raw(**extra) -> dict:
    raw = {
        "schema_version": 1,
        "experiment": "fit-wirebond",
        "params": {"n_points": 8},
        "sweep": [
            {"path": "params.noise", "values": [0.0, 0.01]},
            {"path": "device.wirebond.r_s", "values": [0.3, 0.38]},
        ],
        "seed": 11,
    }
    raw.update(extra)
    return raw


def test_scenario_round_trip():
    spec = scenario_from_dict(_raw())
    assert spec.experiment == "fit-wirebond"
    assert [axis.path for axis in spec.sweep] == ["params.noise", "device.wirebond.r_s"]
    assert spec.output_path.as_posix() == "results/fit-wirebond"
    assert scenario_from_dict(spec.to_dict()).to_dict() == spec.to_dict()


def test_unknown_experiment_fails_first():
    with pytest.raises(UnknownExperimentError):
        scenario_from_dict(_raw(experiment="teleport", seed=-1))


def test_all_scenario_problems_reported():
    raw = _raw(schema_version=2, params={"bogus": 1}, seed=-1, shots=0,
               sweep=[{"path": "foo.bar", "values": [1]}, {"path": "params.noise", "values": []}])
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict(raw)
    message = str(info.value)
    assert message.startswith("Found 6 issues in scenario:")
    for fragment in ["schema_version", "params.bogus", "seed", "shots", "sweep[0]", "sweep[1]"]:
        assert fragment in message


def test_repeated_sweep_path_rejected():
    raw = _raw(sweep=[{"path": "params.noise", "values": [0.0]}, {"path": "params.noise", "values": [0.1]}])
    with pytest.raises(ScenarioError, match="swept more than once"):
        scenario_from_dict(raw)


def test_device_path_relative_to_scenario(tmp_path, device):
    save_device_config(device, tmp_path / "dev.json")
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(_raw(device="dev.json")))
    spec = load_scenario(path)
    assert spec.device == str(tmp_path / "dev.json")
    with pytest.raises(ScenarioError, match="does not exist"):
        load_scenario(tmp_path / "absent.json")


def test_grid_order_first_axis_slowest(tmp_path, device):
    spec = scenario_from_dict(_raw())
    points = expand_grid(spec, device, tmp_path)
    assert [tuple(p.values.values()) for p in points] == [(0.0, 0.3), (0.0, 0.38), (0.01, 0.3), (0.01, 0.38)]
    assert points[1].device.wirebond.r_s == 0.38
    assert points[2].params == {"n_points": 8, "noise": 0.01}
    assert points[3].out == tmp_path / "point_0003"
    assert len({p.seed for p in points}) == 4


def test_single_point_writes_to_root(tmp_path, device):
    spec = scenario_from_dict(_raw(sweep=[]))
    points = expand_grid(spec, device, tmp_path)
    assert len(points) == 1 and points[0].out == tmp_path


def test_run_is_deterministic_across_job_counts(tmp_path):
    spec = scenario_from_dict(_raw())
    serial = run_scenario(spec, out=tmp_path / "serial", jobs=1)
    parallel = run_scenario(spec, out=tmp_path / "parallel", jobs=2)
    assert serial == parallel
    assert [r["point"] for r in serial] == [0, 1, 2, 3]
    for i in range(4):
        name = f"point_{i:04d}/summary.json"
        assert read_json(tmp_path / "serial" / name) == read_json(tmp_path / "parallel" / name)
    assert (tmp_path / "serial" / "grid.csv").read_bytes() == (tmp_path / "parallel" / "grid.csv").read_bytes()


def test_output_collision_and_force(tmp_path):
    spec = scenario_from_dict(_raw(sweep=[]))
    run_scenario(spec, out=tmp_path)
    with pytest.raises(ScenarioError, match="--force"):
        run_scenario(spec, out=tmp_path)
    run_scenario(spec, out=tmp_path, force=True)


def test_manifest_lists_artifacts(tmp_path):
    spec = scenario_from_dict(_raw(sweep=[]))
    run_scenario(spec, out=tmp_path, seed=5)
    manifest = read_json(tmp_path / "manifest.json")
    paths = {a["path"]: a["sha256"] for a in manifest["artifacts"]}
    assert set(paths) == {"scenario.json", "summary.json", "wirebond.csv"}
    for path, digest in paths.items():
        assert sha256_file(tmp_path / path) == digest
    assert read_json(tmp_path / "scenario.json")["seed"] == 5
    assert manifest["versions"]["qnetsim"] == "1.0.0"
    assert len(manifest["inputs_sha256"]) == 64


def test_invalid_device_override_fails_run(tmp_path):
    spec = scenario_from_dict(_raw(sweep=[], overrides={"device.qubits.Q1A.readout_fg": 0.4}))
    with pytest.raises(ScenarioError, match="readout_fg"):
        run_scenario(spec, out=tmp_path)
