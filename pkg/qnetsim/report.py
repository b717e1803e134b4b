from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .logger import logger
from .utils_io import read_json


class ReportError(ValueError):
    pass


class Status:
    PASS = "PASS"
    FAIL = "FAIL"
    INFO = "INFO"


@dataclass(frozen=True)
class Reference:
    '''Target for one summary value: pass when low <= value <= high.'''
    experiment: str
    key: str
    target: float
    low: float
    high: float
    source: str
    match: dict = field(default_factory=dict)

    @classmethod
    def around(cls, experiment: str, key: str, target: float, tolerance: float, source: str, **match):
        return cls(experiment, key, target, target - tolerance, target + tolerance, source, match)

    def applies(self, summary: dict) -> bool:
        return summary.get("experiment") == self.experiment and all(summary.get(k) == v for k, v in self.match.items())


@dataclass(frozen=True)
class Measured:
    '''Hardware value shown next to the simulated one; never gates the report.'''
    experiment: str
    key: str
    value: float
    uncertainty: float
    source: str


REFERENCES = [
    Reference("transfer", "receiver_population", 0.881, 0.86, 0.90, "receiver excitation at the end of the 72 ns transfer"),
    Reference.around("transfer-tomo", "process_fidelity", 0.920, 0.015, "numerical state-transfer process fidelity"),
    Reference.around("bell-st-half", "fidelity", 0.915, 0.02, "numerical Bell fidelity of the half transfer"),
    Reference("ghz-prep", "fidelity", 0.938, 0.91, 0.96, "three-qubit GHZ preparation with the CZ process matrix"),
    Reference.around("ghz-transfer", "fidelity", 0.648, 0.04, "numerical GHZ fidelity after three transfers"),
    Reference.around("network-ghz", "fidelity_II", 0.829, 0.04, "numerical four-qubit network GHZ fidelity"),
    Reference.around("network-ghz", "fidelity_III", 0.738, 0.04, "numerical six-qubit network GHZ fidelity"),
    Reference("cz-tomo", "fidelity", 0.958, 0.93, 0.98, "CZ process fidelity scale"),
    Reference.around("rb", "average_fidelity", 0.9974, 0.0005, "Clifford average fidelity of Q1A", qubit="Q1A"),
    Reference.around("xeb", "cycle_error", 0.041, 0.005, "XEB error per CZ cycle"),
    Reference.around("fit-wirebond", "r_s_ohm", 0.38, 0.38e-3, "wirebond series resistance"),
    Reference.around("fit-wirebond", "q_0", 90.9e3, 90.9, "intrinsic cable quality factor"),
    Reference.around("fit-coupler", "g_max_mhz", 29.0, 1.0, "maximum qubit-mode coupling at delta = pi"),
    Reference.around("fit-coupler", "l_t_nh", 0.620, 0.001, "coupler junction inductance of node A", node="A"),
    Reference.around("rabi-chevron", "stripe_spacing_mhz", 105.0, 2.1, "free spectral range of the cable"),
    Reference.around("rabi-slice", "first_swap_ns", 45.5, 1.0, "first vacuum Rabi swap for g/2pi = 5.5 MHz"),
]

MEASURED = [
    Measured("transfer", "receiver_population", 0.881, 0.008, "measured transfer efficiency"),
    Measured("transfer-tomo", "process_fidelity", 0.911, 0.008, "measured transfer process fidelity"),
    Measured("ghz-prep", "fidelity", 0.931, 0.012, "measured node-A GHZ fidelity"),
    Measured("ghz-transfer", "fidelity", 0.656, 0.014, "measured node-B GHZ fidelity"),
    Measured("bell-st-half", "fidelity", 0.908, 0.012, "measured Bell fidelity"),
    Measured("network-ghz", "fidelity_II", 0.814, 0.008, "measured four-qubit GHZ fidelity"),
    Measured("network-ghz", "fidelity_III", 0.722, 0.021, "measured six-qubit GHZ fidelity"),
]


@dataclass
class ReportRow:
    status: str
    experiment: str
    key: str
    value: float
    target: float
    low: Optional[float]
    high: Optional[float]
    source: str
    location: str

    @property
    def delta(self) -> float:
        return self.value - self.target


def collect_summaries(directory: Union[str, Path]) -> list[tuple[Path, dict]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ReportError(f"Artifact directory '{directory}' does not exist.")
    found = []
    for path in sorted(directory.rglob("summary.json")):
        summary = read_json(path)
        if "experiment" in summary:
            found.append((path, summary))
    if len(found) == 0:
        raise ReportError(f"No summary.json artifacts under '{directory}'; run a scenario first.")
    return found


def compare(summaries: list[tuple[Path, dict]], root: Union[str, Path]=None) -> list[ReportRow]:
    rows = []
    for path, summary in summaries:
        location = str(path.parent.relative_to(root)) if root is not None else str(path.parent)
        for ref in REFERENCES:
            value = summary.get(ref.key, None)
            if not ref.applies(summary) or not isinstance(value, (int, float)):
                continue
            status = Status.PASS if ref.low <= value <= ref.high else Status.FAIL
            rows.append(ReportRow(status, ref.experiment, ref.key, float(value), ref.target, ref.low, ref.high, ref.source, location))
        for ref in MEASURED:
            value = summary.get(ref.key, None)
            if summary.get("experiment") != ref.experiment or not isinstance(value, (int, float)):
                continue
            rows.append(ReportRow(Status.INFO, ref.experiment, ref.key, float(value), ref.value, ref.value - ref.uncertainty,
                                  ref.value + ref.uncertainty, ref.source, location))
    return rows


def format_report(rows: list[ReportRow]) -> str:
    header = f"{'status':<6} {'experiment':<14} {'value':<20} {'computed':>10} {'target':>10} {'band':>19} {'delta':>10}  source [point]"
    lines = [header, "-" * len(header)]
    for row in rows:
        band = f"[{row.low:.4g}, {row.high:.4g}]"
        lines.append(f"{row.status:<6} {row.experiment:<14} {row.key:<20} {row.value:>10.4f} {row.target:>10.4f} {band:>19} "
                     f"{row.delta:>+10.4f}  {row.source} [{row.location}]")
    failed = sum(1 for row in rows if row.status == Status.FAIL)
    gated = sum(1 for row in rows if row.status != Status.INFO)
    lines.append(f"{gated - failed}/{gated} reference checks passed")
    return "\n".join(lines)


def emit_report(directory: Union[str, Path]) -> tuple[str, list[ReportRow]]:
    '''Compares every summary under directory with the reference table; returns the table text and its rows.'''
    rows = compare(collect_summaries(directory), root=directory)
    failed = [row for row in rows if row.status == Status.FAIL]
    if len(failed) > 0:
        logger.warning(f"{len(failed)} value(s) outside their reference band")
    return format_report(rows), rows
