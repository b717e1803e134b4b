import pytest

from qnetsim.report import ReportError, Status, collect_summaries, emit_report
from qnetsim.utils_io import write_json


def _summary(path, **values):
    path.mkdir(parents=True, exist_ok=True)
    write_json(path / "summary.json", {"schema_version": 1, **values})


def test_missing_or_empty_directory(tmp_path):
    with pytest.raises(ReportError, match="does not exist"):
        collect_summaries(tmp_path / "absent")
    with pytest.raises(ReportError, match="No summary.json"):
        collect_summaries(tmp_path)


def test_pass_fail_and_info_rows(tmp_path):
    _summary(tmp_path / "rb", experiment="rb", qubit="Q1A", average_fidelity=0.9972)
    _summary(tmp_path / "xeb", experiment="xeb", cycle_error=0.06)
    _summary(tmp_path / "transfer", experiment="transfer", receiver_population=0.88)
    text, rows = emit_report(tmp_path)
    by_key = {(r.experiment, r.key, r.status): r for r in rows}
    assert ("rb", "average_fidelity", Status.PASS) in by_key
    failed = by_key[("xeb", "cycle_error", Status.FAIL)]
    assert failed.delta == pytest.approx(0.019)
    assert failed.location == "xeb"
    assert ("transfer", "receiver_population", Status.INFO) in by_key
    assert text.splitlines()[-1] == "2/3 reference checks passed"


def test_match_keys_filter_references(tmp_path):
    _summary(tmp_path / "rb", experiment="rb", qubit="Q2B", average_fidelity=0.9961)
    _summary(tmp_path / "coupler", experiment="fit-coupler", node="B", l_t_nh=0.625, g_max_mhz=29.2)
    _, rows = emit_report(tmp_path)
    assert [(r.experiment, r.key) for r in rows] == [("fit-coupler", "g_max_mhz")]
