import json

from qnetsim.cli import _default_jobs, build_parser, main
from qnetsim.device import device_to_dict


def _scenario(path, **extra):
    raw = {"schema_version": 1, "experiment": "fit-wirebond", "params": {"n_points": 6}}
    raw.update(extra)
    path.write_text(json.dumps(raw))
    return str(path)


def test_list(capsys):
    assert main(["list"]) == 0
    assert "fit-wirebond" in capsys.readouterr().out


def test_unknown_experiment_exit_code(tmp_path, capsys):
    scenario = _scenario(tmp_path / "s.json", experiment="teleport")
    assert main(["run", scenario, "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "teleport" in err
    assert "rabi-chevron" in err


def test_run_then_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", _scenario(tmp_path / "s.json"), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "manifest.json").is_file()
    assert main(["run", _scenario(tmp_path / "s.json"), "--out", str(out)]) == 1
    assert main(["report", str(out)]) == 0
    assert "reference checks passed" in capsys.readouterr().out


def test_report_on_missing_directory(tmp_path):
    assert main(["report", str(tmp_path / "nothing")]) == 1


def test_validate(tmp_path, device, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(device_to_dict(device)))
    assert main(["validate", str(good)]) == 0
    assert "valid" in capsys.readouterr().out
    raw = device_to_dict(device)
    raw["qubits"]["Q1A"]["readout_fg"] = 0.4
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(raw))
    assert main(["validate", str(bad)]) == 1


def test_jobs_from_environment(monkeypatch):
    monkeypatch.setenv("QNETSIM_JOBS", "3")
    assert _default_jobs() == 3
    monkeypatch.setenv("QNETSIM_JOBS", "many")
    assert _default_jobs() == 1
    args = build_parser().parse_args(["run", "s.json", "--jobs", "2", "--force"])
    assert args.jobs == 2 and args.force
