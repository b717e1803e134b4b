from dataclasses import dataclass
from pathlib import Path
from typing import Union
import json
import math

from .dynamics import ControlFrame, InstantGate, PulseSchedule, ScheduleError
from .logger import logger
from .utils_io import SCHEMA_VERSION, write_json


MHZ_TO_RAD = 2 * math.pi * 1e6
COUPLING_KEYS = {"gA": "A", "gB": "B"}


@dataclass
class ParseErrorReport:
    item_str: str
    val_str: str
    reason: str


def _frame_to_json(frame: ControlFrame) -> dict:
    payload = {
        "duration_ns": frame.duration * 1e9,
        "detunings": {site: value / MHZ_TO_RAD for site, value in frame.detunings.items()},
        "couplings": {f"g{node}": value / MHZ_TO_RAD for node, value in frame.couplers.items()},
    }
    if len(frame.qubit_couplings) > 0:
        payload["qubit_couplings"] = {key: value / MHZ_TO_RAD for key, value in frame.qubit_couplings.items()}
    return payload


def schedule_to_json(schedule: PulseSchedule) -> dict:
    '''Frames in ns/MHz (cycles), gates in radians.'''
    items = []
    for item in schedule.items:
        if isinstance(item, ControlFrame):
            items.append(_frame_to_json(item))
        else:
            items.append({"site": item.site, "axis": item.axis, "angle_rad": item.angle})
    return {"schema_version": SCHEMA_VERSION, "items": items}


def _mhz_map(raw, item_str: str, name: str, errors: list[ParseErrorReport]) -> dict[str, float]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        errors.append(ParseErrorReport(item_str, str(raw), f"'{name}' must be an object of MHz values"))
        return {}
    values = {}
    for key, val in raw.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            errors.append(ParseErrorReport(item_str, str(val), f"'{name}.{key}' value '{val}' is not a valid number"))
            continue
        values[key] = float(val) * MHZ_TO_RAD
    return values


def handle_frame(raw: dict, item_str: str, errors: list[ParseErrorReport]):
    duration = raw.get("duration_ns")
    if isinstance(duration, bool) or not isinstance(duration, (int, float)):
        errors.append(ParseErrorReport(item_str, str(duration), "'duration_ns' must be a number"))
        return None
    detunings = _mhz_map(raw.get("detunings"), item_str, "detunings", errors)
    couplings = _mhz_map(raw.get("couplings"), item_str, "couplings", errors)
    qubit_couplings = _mhz_map(raw.get("qubit_couplings"), item_str, "qubit_couplings", errors)
    couplers = {}
    for key, value in couplings.items():
        if key not in COUPLING_KEYS:
            errors.append(ParseErrorReport(item_str, key, f"Unknown coupling '{key}'; must be one of {list(COUPLING_KEYS)}"))
            continue
        couplers[COUPLING_KEYS[key]] = value
    unknown = set(raw) - {"duration_ns", "detunings", "couplings", "qubit_couplings"}
    if len(unknown) > 0:
        errors.append(ParseErrorReport(item_str, str(sorted(unknown)), "Unknown frame keys"))
    try:
        return ControlFrame(duration=float(duration) * 1e-9, detunings=detunings, couplers=couplers, qubit_couplings=qubit_couplings)
    except ScheduleError as e:
        errors.append(ParseErrorReport(item_str, str(duration), str(e)))
        return None


def handle_gate(raw: dict, item_str: str, errors: list[ParseErrorReport]):
    angle = raw.get("angle_rad")
    if isinstance(angle, bool) or not isinstance(angle, (int, float)):
        errors.append(ParseErrorReport(item_str, str(angle), "'angle_rad' must be a number"))
        return None
    site = raw.get("site")
    if not isinstance(site, str):
        errors.append(ParseErrorReport(item_str, str(site), "'site' must be a string"))
        return None
    try:
        return InstantGate(site=site, axis=raw.get("axis"), angle=float(angle))
    except ScheduleError as e:
        errors.append(ParseErrorReport(item_str, str(raw.get("axis")), str(e)))
        return None


def schedule_from_json(payload: dict) -> PulseSchedule:
    errors: list[ParseErrorReport] = []
    items = []
    if not isinstance(payload, dict):
        raise ScheduleError(f"Schedule JSON must be an object, got {type(payload).__name__}")
    if payload.get("schema_version", None) != SCHEMA_VERSION:
        errors.append(ParseErrorReport("schema_version", str(payload.get("schema_version")), f"expected {SCHEMA_VERSION}"))
    raw_items = payload.get("items", None)
    if not isinstance(raw_items, list) or len(raw_items) == 0:
        errors.append(ParseErrorReport("items", str(raw_items), "must be a non-empty array"))
        raw_items = []
    for idx, raw in enumerate(raw_items):
        item_str = f"items[{idx}]"
        if not isinstance(raw, dict):
            errors.append(ParseErrorReport(item_str, str(raw), "item must be an object"))
        elif "duration_ns" in raw:
            items.append(handle_frame(raw, item_str, errors))
        elif "site" in raw:
            items.append(handle_gate(raw, item_str, errors))
        else:
            errors.append(ParseErrorReport(item_str, str(raw), "item is neither a frame (duration_ns) nor a gate (site)"))
    if len(errors) > 0:
        error_msg_list = []
        issues_formatted = f"{len(errors)} issue{'s' if len(errors)> 1 else ''}"
        error_msg_list.append(f"Found {issues_formatted} in schedule:")
        for error in errors:
            error_msg_list.append(f"{error.item_str}: {error.reason} ('{error.val_str}')")
        raise ScheduleError("\n".join(error_msg_list))
    return PulseSchedule(items)


def save_schedule(schedule: PulseSchedule, path: Union[str, Path]):
    write_json(path, schedule_to_json(schedule))
    logger.debug(f"Wrote schedule with {len(schedule)} items to {path}")


def load_schedule(path: Union[str, Path]) -> PulseSchedule:
    path = Path(path)
    if not path.is_file():
        raise ScheduleError(f"Schedule file '{path}' does not exist.")
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ScheduleError(f"Schedule file '{path}' is not valid JSON: {e}")
    return schedule_from_json(payload)
