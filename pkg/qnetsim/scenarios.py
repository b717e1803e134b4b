from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union
import itertools
import json
import multiprocessing
import platform
import time

import numpy as np
import scipy
import torch

from . import __version__
from .device import ConfigError, DeviceConfig, device_to_dict, load_device_config, with_override
from .experiments import ExperimentContext, get_experiment, run_experiment
from .logger import logger
from .scheduling import ParseErrorReport
from .utils_io import SCHEMA_VERSION, derive_seed, sha256_file, sha256_json, write_csv, write_json


class ScenarioError(ValueError):
    pass


class PathRoot:
    DEVICE = "device"
    PARAMS = "params"
    LIST = [DEVICE, PARAMS]


@dataclass(frozen=True)
class SweepAxis:
    path: str
    values: list


@dataclass
class ScenarioSpec:
    experiment: str
    params: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    sweep: list[SweepAxis] = field(default_factory=list)
    output_dir: Optional[str] = None
    seed: int = 0
    shots: Optional[int] = None
    device: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "experiment": self.experiment, "device": self.device,
                "params": dict(self.params), "overrides": dict(self.overrides),
                "sweep": [{"path": axis.path, "values": list(axis.values)} for axis in self.sweep],
                "output_dir": self.output_dir, "seed": self.seed, "shots": self.shots}

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir if self.output_dir is not None else f"results/{self.experiment}")


def _check_path(path: str, experiment: str, item_str: str, errors: list[ParseErrorReport]):
    parts = path.split(".", 1) if isinstance(path, str) else []
    if len(parts) != 2 or parts[0] not in PathRoot.LIST or parts[1] == "":
        errors.append(ParseErrorReport(item_str, str(path), f"parameter path must start with one of {PathRoot.LIST}"))
        return
    if parts[0] == PathRoot.PARAMS:
        defaults = get_experiment(experiment).defaults
        if parts[1] not in defaults:
            errors.append(ParseErrorReport(item_str, path, f"unknown parameter; options are {sorted(defaults)}"))


def scenario_from_dict(raw: dict, base_dir: Union[str, Path]=None) -> ScenarioSpec:
    '''
    Validates a scenario document. An unknown experiment fails at once; every other problem is collected
    and raised together. Device paths are resolved against base_dir (the scenario file's directory).
    '''
    if not isinstance(raw, dict):
        raise ScenarioError(f"Scenario must be a JSON object, got {type(raw).__name__}")
    experiment = raw.get("experiment", None)
    get_experiment(experiment)
    errors: list[ParseErrorReport] = []
    if raw.get("schema_version", None) != SCHEMA_VERSION:
        errors.append(ParseErrorReport("schema_version", str(raw.get("schema_version")), f"expected {SCHEMA_VERSION}"))
    params = raw.get("params", {})
    if not isinstance(params, dict):
        errors.append(ParseErrorReport("params", str(params), "must be an object"))
        params = {}
    for key in params:
        _check_path(f"params.{key}", experiment, f"params.{key}", errors)
    overrides = raw.get("overrides", {})
    if not isinstance(overrides, dict):
        errors.append(ParseErrorReport("overrides", str(overrides), "must be an object"))
        overrides = {}
    for path in overrides:
        _check_path(path, experiment, f"overrides.{path}", errors)
    sweep = []
    raw_sweep = raw.get("sweep", [])
    if not isinstance(raw_sweep, list):
        errors.append(ParseErrorReport("sweep", str(raw_sweep), "must be an array of {path, values}"))
        raw_sweep = []
    for idx, axis in enumerate(raw_sweep):
        item_str = f"sweep[{idx}]"
        if not isinstance(axis, dict) or not isinstance(axis.get("values", None), list) or len(axis["values"]) == 0:
            errors.append(ParseErrorReport(item_str, str(axis), "axis must be an object with a non-empty 'values' array"))
            continue
        _check_path(axis.get("path", None), experiment, item_str, errors)
        sweep.append(SweepAxis(path=str(axis.get("path")), values=list(axis["values"])))
    paths = [axis.path for axis in sweep]
    for path in set(paths):
        if paths.count(path) > 1:
            errors.append(ParseErrorReport("sweep", path, "parameter path is swept more than once"))
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        errors.append(ParseErrorReport("seed", str(seed), "must be an integer >= 0"))
    shots = raw.get("shots", None)
    if shots is not None and (isinstance(shots, bool) or not isinstance(shots, int) or shots < 1):
        errors.append(ParseErrorReport("shots", str(shots), "must be null or an integer >= 1"))
    device = raw.get("device", None)
    if device is not None:
        device_path = Path(device)
        if not device_path.is_absolute() and base_dir is not None:
            device_path = Path(base_dir) / device_path
        device = str(device_path)
    if len(errors) > 0:
        error_msg_list = [f"Found {len(errors)} issue{'s' if len(errors) > 1 else ''} in scenario:"]
        for error in errors:
            error_msg_list.append(f"{error.item_str}: {error.reason} ('{error.val_str}')")
        raise ScenarioError("\n".join(error_msg_list))
    return ScenarioSpec(experiment=experiment, params=dict(params), overrides=dict(overrides), sweep=sweep,
                        output_dir=raw.get("output_dir", None), seed=seed, shots=shots, device=device)


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"Scenario file '{path}' does not exist.")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"Scenario file '{path}' is not valid JSON: {e}")
    return scenario_from_dict(raw, base_dir=path.parent)


@dataclass
class GridPoint:
    index: int
    values: dict[str, Any]
    device: DeviceConfig
    params: dict
    seed: int
    out: Path


def _apply(device: DeviceConfig, params: dict, assignments: dict[str, Any]) -> tuple[DeviceConfig, dict]:
    params = dict(params)
    for path, value in assignments.items():
        root, key = path.split(".", 1)
        if root == PathRoot.PARAMS:
            params[key] = value
            continue
        try:
            device = with_override(device, key, value)
        except ConfigError as e:
            raise ScenarioError(f"Cannot apply '{path}' = {value!r}: {e}")
    return device, params


def expand_grid(spec: ScenarioSpec, device: DeviceConfig, root: Path) -> list[GridPoint]:
    '''Cartesian product of the sweep axes, first axis varying slowest; one point when nothing is swept.'''
    base_device, base_params = _apply(device, spec.params, spec.overrides)
    combos = itertools.product(*[axis.values for axis in spec.sweep])
    points = []
    for index, combo in enumerate(combos):
        values = {axis.path: value for axis, value in zip(spec.sweep, combo)}
        point_device, point_params = _apply(base_device, base_params, values)
        out = root / f"point_{index:04d}" if len(spec.sweep) > 0 else root
        points.append(GridPoint(index=index, values=values, device=point_device, params=point_params,
                                seed=derive_seed(spec.seed, index), out=out))
    return points


def _init_worker():
    # inner evolutions stay single-threaded so results do not depend on the worker count
    torch.set_num_threads(1)


def _run_point(task: tuple) -> dict:
    experiment, point, shots = task
    ctx = ExperimentContext(device=point.device, params=point.params, seed=point.seed, shots=shots, out=point.out)
    summary = run_experiment(experiment, ctx)
    payload = {"schema_version": SCHEMA_VERSION, "experiment": experiment, "point": point.index,
               "sweep_values": point.values, **summary}
    write_json(point.out / "summary.json", payload)
    return payload


def _check_collision(root: Path, force: bool):
    if root.exists() and any(root.iterdir()) and not force:
        raise ScenarioError(f"Output directory '{root}' already holds artifacts; use --force to overwrite")


def _versions() -> dict[str, str]:
    return {"qnetsim": __version__, "python": platform.python_version(), "torch": torch.__version__,
            "numpy": np.__version__, "scipy": scipy.__version__}


def _write_grid(root: Path, spec: ScenarioSpec, results: list[dict]):
    keys = sorted({k for r in results for k, v in r.items()
                   if isinstance(v, (int, float, str)) and k not in ("point", "experiment", "schema_version")})
    rows = []
    for r in results:
        rows.append([r["point"]] + [r["sweep_values"][axis.path] for axis in spec.sweep] + [r.get(k, "") for k in keys])
    write_csv(root / "grid.csv", ["point"] + [axis.path for axis in spec.sweep] + keys, rows)


def write_manifest(root: Path, spec: ScenarioSpec, device: DeviceConfig, wall_time: float, jobs: int) -> dict:
    '''Lists every artifact under root with its sha256, next to the input hashes and package versions.'''
    artifacts = [{"path": path.relative_to(root).as_posix(), "sha256": sha256_file(path)}
                 for path in sorted(root.rglob("*")) if path.is_file() and path.name != "manifest.json"]
    manifest = {"schema_version": SCHEMA_VERSION, "experiment": spec.experiment,
                "inputs_sha256": sha256_json({"scenario": spec.to_dict(), "device": device_to_dict(device)}),
                "versions": _versions(), "wall_time_s": wall_time, "jobs": jobs, "artifacts": artifacts}
    write_json(root / "manifest.json", manifest)
    return manifest


def run_scenario(spec: ScenarioSpec, out: Union[str, Path]=None, seed: int=None, jobs: int=1, force: bool=False) -> list[dict]:
    '''
    Runs the scenario's experiment on every grid point, in parallel over points when jobs > 1. Results are
    gathered in grid order; each point's seed depends only on (seed, point index).
    '''
    get_experiment(spec.experiment)
    if seed is not None:
        spec = replace(spec, seed=seed)
    root = Path(out) if out is not None else spec.output_path
    _check_collision(root, force)
    device = load_device_config(spec.device)
    points = expand_grid(spec, device, root)
    root.mkdir(parents=True, exist_ok=True)
    write_json(root / "scenario.json", spec.to_dict())
    logger.info(f"Scenario '{spec.experiment}': {len(points)} point(s), {jobs} job(s), output {root}")
    tasks = [(spec.experiment, point, spec.shots) for point in points]
    start = time.perf_counter()
    if jobs <= 1 or len(points) == 1:
        _init_worker()
        results = [_run_point(task) for task in tasks]
    else:
        with multiprocessing.get_context("spawn").Pool(processes=min(jobs, len(points)), initializer=_init_worker) as pool:
            results = pool.map(_run_point, tasks)
    wall_time = time.perf_counter() - start
    if len(spec.sweep) > 0:
        _write_grid(root, spec, results)
    write_manifest(root, spec, device, wall_time, jobs)
    logger.info(f"Scenario '{spec.experiment}' finished in {wall_time:.1f} s")
    return results
