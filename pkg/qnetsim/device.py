from dataclasses import dataclass, field, replace, fields
from pathlib import Path
from typing import Optional, Union
import json
import math

from .logger import logger


SCHEMA_VERSION = 1
DEFAULT_DEVICE_PATH = Path(__file__).parent / "data" / "default_device.json"


class ConfigError(ValueError):
    pass


class Node:
    A = "A"
    B = "B"
    LIST = [A, B]


QUBIT_LABELS = [f"Q{i}{node}" for node in Node.LIST for i in (1, 2, 3)]


def qubit_label(index: int, node: str) -> str:
    return f"Q{index}{node}"


def node_of(label: str) -> str:
    return label[-1]


def mode_label(m: int) -> str:
    return f"M{m}"


@dataclass(frozen=True)
class QubitConfig:
    f_max: float
    f_idle: float
    anharmonicity: float
    t1: float
    t_phi: float
    readout_fg: float
    readout_fe: float
    l_q: Optional[float] = None
    t1_loaded: Optional[float] = None
    t1_loaded_coupling: Optional[float] = None


@dataclass(frozen=True)
class CouplerConfig:
    l_g: float
    l_w: float
    l_t: float
    r_g: float


@dataclass(frozen=True)
class ChannelConfig:
    cable_length: float
    cable_l: float
    cable_c: float
    cpw_length: float
    cpw_l: float
    cpw_c: float
    mode_lifetimes: tuple[float, ...] = ()


@dataclass(frozen=True)
class WirebondLossModel:
    r_s: float
    q_0: float
    # CPW length of the cable test chip the loss model was measured on
    cpw_length: Optional[float] = None


@dataclass(frozen=True)
class DeviceConfig:
    qubits: dict[str, QubitConfig]
    couplers: dict[str, CouplerConfig]
    channel: ChannelConfig
    fsr: float
    qubit_couplings: dict[str, float]
    mode_count: int
    communication_mode: int
    communication_mode_frequency: float
    wirebond: WirebondLossModel
    rb_average_fidelity: dict[str, float] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def qubit(self, label: str) -> QubitConfig:
        if label not in self.qubits:
            raise ConfigError(f"Unknown qubit '{label}'; device has {sorted(self.qubits)}.")
        return self.qubits[label]

    def coupler(self, node: str) -> CouplerConfig:
        if node not in self.couplers:
            raise ConfigError(f"Unknown coupler node '{node}'; device has {sorted(self.couplers)}.")
        return self.couplers[node]

    def qubit_coupling(self, j: int, node: str) -> float:
        '''g_{j,2}/2pi in Hz between Q_j and Q_2 of a node.'''
        key = f"{qubit_label(j, node)}-{qubit_label(2, node)}"
        if key not in self.qubit_couplings:
            raise ConfigError(f"No inter-qubit coupling '{key}' in device.")
        return self.qubit_couplings[key]

    def mode_lifetime(self, m: int) -> float:
        lifetimes = self.channel.mode_lifetimes
        if not 1 <= m <= len(lifetimes):
            raise ConfigError(f"No lifetime for mode {m}; channel lists {len(lifetimes)} lifetimes.")
        return lifetimes[m - 1]


# (json key, attribute) pairs; the key suffix carries the SI unit
_QUBIT_KEYS = [("f_max_hz", "f_max"), ("f_idle_hz", "f_idle"), ("anharmonicity_hz", "anharmonicity"),
               ("t1_s", "t1"), ("t_phi_s", "t_phi"), ("readout_fg", "readout_fg"), ("readout_fe", "readout_fe"),
               ("l_q_h", "l_q"), ("t1_loaded_s", "t1_loaded"), ("t1_loaded_coupling_hz", "t1_loaded_coupling")]
_QUBIT_OPTIONAL = {"l_q", "t1_loaded", "t1_loaded_coupling"}
_COUPLER_KEYS = [("l_g_h", "l_g"), ("l_w_h", "l_w"), ("l_t_h", "l_t"), ("r_g_ohm", "r_g")]
_CHANNEL_KEYS = [("cable_length_m", "cable_length"), ("cable_l_h_per_m", "cable_l"), ("cable_c_f_per_m", "cable_c"),
                 ("cpw_length_m", "cpw_length"), ("cpw_l_h_per_m", "cpw_l"), ("cpw_c_f_per_m", "cpw_c"),
                 ("mode_lifetimes_s", "mode_lifetimes")]
_WIREBOND_KEYS = [("r_s_ohm", "r_s"), ("q_0", "q_0"), ("cpw_length_m", "cpw_length")]


class _Errors:
    def __init__(self):
        self.messages: list[str] = []

    def add(self, path: str, message: str):
        self.messages.append(f"{path}: {message}")

    def raise_if_any(self, source: str):
        if len(self.messages) > 0:
            raise ConfigError(f"Invalid device config ({source}):\n" + "\n".join(self.messages))


def _number(errors: _Errors, raw: dict, key: str, path: str, optional: bool=False):
    if key not in raw or raw[key] is None:
        if not optional:
            errors.add(f"{path}.{key}", "missing")
        return None
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.add(f"{path}.{key}", f"must be a number, got {value!r}")
        return None
    if not math.isfinite(value):
        errors.add(f"{path}.{key}", f"must be finite, got {value!r}")
        return None
    return float(value)


def _positive(errors: _Errors, value, path: str, allow_zero: bool=False):
    if value is None:
        return
    if value < 0 or (value == 0 and not allow_zero):
        errors.add(path, f"must be {'>= 0' if allow_zero else '> 0'}, got {value}")


def _parse_qubit(errors: _Errors, raw: dict, path: str) -> Optional[QubitConfig]:
    values = {attr: _number(errors, raw, key, path, optional=attr in _QUBIT_OPTIONAL) for key, attr in _QUBIT_KEYS}
    for attr in ["f_max", "f_idle", "t1", "t_phi", "l_q", "t1_loaded", "t1_loaded_coupling"]:
        _positive(errors, values[attr], f"{path}.{attr}")
    if values["f_idle"] is not None and values["f_max"] is not None and values["f_idle"] > values["f_max"]:
        errors.add(f"{path}.f_idle_hz", f"idle frequency {values['f_idle']} exceeds f_max {values['f_max']}")
    if values["anharmonicity"] is not None and values["anharmonicity"] >= 0:
        errors.add(f"{path}.anharmonicity_hz", f"must be negative, got {values['anharmonicity']}")
    for attr in ["readout_fg", "readout_fe"]:
        value = values[attr]
        if value is not None and not 0.5 < value <= 1.0:
            errors.add(f"{path}.{attr}", f"must be in (0.5, 1] for an invertible confusion matrix, got {value}")
    if any(values[attr] is None for attr in values if attr not in _QUBIT_OPTIONAL):
        return None
    return QubitConfig(**values)


def _parse_flat(errors: _Errors, raw: dict, keys: list, path: str, cls, allow_zero: set=frozenset(), optional: set=frozenset()):
    values = {}
    for key, attr in keys:
        values[attr] = _number(errors, raw, key, path, optional=attr in optional)
        _positive(errors, values[attr], f"{path}.{key}", allow_zero=attr in allow_zero)
    if any(values[attr] is None for attr in values if attr not in optional):
        return None
    return cls(**values)


def _parse_channel(errors: _Errors, raw: dict, path: str) -> Optional[ChannelConfig]:
    lifetimes = raw.get("mode_lifetimes_s", [])
    scalar_keys = [pair for pair in _CHANNEL_KEYS if pair[1] != "mode_lifetimes"]
    parsed = _parse_flat(errors, raw, scalar_keys, path, dict)
    if not isinstance(lifetimes, list):
        errors.add(f"{path}.mode_lifetimes_s", f"must be a list, got {lifetimes!r}")
        lifetimes = []
    for i, value in enumerate(lifetimes):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            errors.add(f"{path}.mode_lifetimes_s[{i}]", f"must be a positive number, got {value!r}")
    if parsed is None:
        return None
    return ChannelConfig(**parsed, mode_lifetimes=tuple(float(v) for v in lifetimes))


def device_from_dict(raw: dict, source: str="<dict>") -> DeviceConfig:
    errors = _Errors()
    if not isinstance(raw, dict):
        raise ConfigError(f"Invalid device config ({source}): top level must be an object.")
    version = raw.get("schema_version", None)
    if version != SCHEMA_VERSION:
        errors.add("schema_version", f"must be {SCHEMA_VERSION}, got {version!r}")
    qubits = {}
    raw_qubits = raw.get("qubits", {})
    for label in QUBIT_LABELS:
        if label not in raw_qubits:
            errors.add(f"qubits.{label}", "missing")
            continue
        qubit = _parse_qubit(errors, raw_qubits[label], f"qubits.{label}")
        if qubit is not None:
            qubits[label] = qubit
    for label in raw_qubits:
        if label not in QUBIT_LABELS:
            errors.add(f"qubits.{label}", f"unknown qubit; expected one of {QUBIT_LABELS}")
    couplers = {}
    raw_couplers = raw.get("couplers", {})
    for node in Node.LIST:
        if node not in raw_couplers:
            errors.add(f"couplers.{node}", "missing")
            continue
        coupler = _parse_flat(errors, raw_couplers[node], _COUPLER_KEYS, f"couplers.{node}", CouplerConfig, allow_zero={"r_g"})
        if coupler is not None:
            couplers[node] = coupler
    channel = _parse_channel(errors, raw.get("channel", {}), "channel")
    wirebond = _parse_flat(errors, raw.get("wirebond", {}), _WIREBOND_KEYS, "wirebond", WirebondLossModel,
                           allow_zero={"r_s"}, optional={"cpw_length"})
    fsr = _number(errors, raw, "fsr_hz", "device")
    _positive(errors, fsr, "fsr_hz")
    comm_freq = _number(errors, raw, "communication_mode_frequency_hz", "device")
    _positive(errors, comm_freq, "communication_mode_frequency_hz")
    mode_count = raw.get("mode_count", None)
    comm_mode = raw.get("communication_mode", None)
    if not isinstance(mode_count, int) or mode_count < 1 or mode_count % 2 == 0:
        errors.add("mode_count", f"must be a positive odd integer, got {mode_count!r}")
    elif not isinstance(comm_mode, int) or not 1 <= comm_mode <= mode_count:
        errors.add("communication_mode", f"must be an integer in [1, {mode_count}], got {comm_mode!r}")
    if channel is not None and isinstance(mode_count, int) and len(channel.mode_lifetimes) < mode_count:
        errors.add("channel.mode_lifetimes_s", f"needs {mode_count} lifetimes (one per simulated mode), got {len(channel.mode_lifetimes)}")
    couplings = {}
    for key, value in raw.get("qubit_couplings_hz", {}).items():
        parts = key.split("-")
        if len(parts) != 2 or any(p not in QUBIT_LABELS for p in parts) or node_of(parts[0]) != node_of(parts[1]):
            errors.add(f"qubit_couplings_hz.{key}", "must name two qubits of the same node as 'QjX-Q2X'")
            continue
        couplings[key] = _number(errors, {key: value}, key, "qubit_couplings_hz")
        _positive(errors, couplings[key], f"qubit_couplings_hz.{key}")
    rb = {}
    for key, value in raw.get("rb_average_fidelity", {}).items():
        if key not in QUBIT_LABELS:
            errors.add(f"rb_average_fidelity.{key}", "unknown qubit")
            continue
        rb[key] = _number(errors, {key: value}, key, "rb_average_fidelity")
        if rb[key] is not None and not 0.5 <= rb[key] <= 1.0:
            errors.add(f"rb_average_fidelity.{key}", f"must be in [0.5, 1], got {rb[key]}")
    errors.raise_if_any(source)
    return DeviceConfig(qubits=qubits, couplers=couplers, channel=channel, fsr=fsr, qubit_couplings=couplings,
                        mode_count=mode_count, communication_mode=comm_mode, communication_mode_frequency=comm_freq,
                        wirebond=wirebond, rb_average_fidelity=rb, schema_version=version)


def _to_keys(obj, keys: list) -> dict:
    out = {}
    for key, attr in keys:
        value = getattr(obj, attr)
        if value is None:
            continue
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def device_to_dict(device: DeviceConfig) -> dict:
    return {
        "schema_version": device.schema_version,
        "fsr_hz": device.fsr,
        "mode_count": device.mode_count,
        "communication_mode": device.communication_mode,
        "communication_mode_frequency_hz": device.communication_mode_frequency,
        "qubits": {label: _to_keys(q, _QUBIT_KEYS) for label, q in device.qubits.items()},
        "couplers": {node: _to_keys(c, _COUPLER_KEYS) for node, c in device.couplers.items()},
        "channel": _to_keys(device.channel, _CHANNEL_KEYS),
        "wirebond": _to_keys(device.wirebond, _WIREBOND_KEYS),
        "qubit_couplings_hz": dict(device.qubit_couplings),
        "rb_average_fidelity": dict(device.rb_average_fidelity),
    }


def load_device_config(path: Union[str, Path]=None) -> DeviceConfig:
    '''Loads and validates a device JSON file; the bundled default device when path is None.'''
    path = Path(path) if path is not None else DEFAULT_DEVICE_PATH
    if not path.is_file():
        raise ConfigError(f"Device config '{path}' does not exist.")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Device config '{path}' is not valid JSON: {e}")
    device = device_from_dict(raw, source=str(path))
    logger.debug(f"Loaded device config from {path}")
    return device


def save_device_config(device: DeviceConfig, path: Union[str, Path]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(device_to_dict(device), f, indent=2)
        f.write("\n")


def _set_path(obj, parts: list[str], value):
    head, rest = parts[0], parts[1:]
    if isinstance(obj, dict):
        if head not in obj:
            raise ConfigError(f"Unknown device parameter '{head}'; options are {sorted(obj)}.")
        new = dict(obj)
        new[head] = value if len(rest) == 0 else _set_path(obj[head], rest, value)
        return new
    names = [f.name for f in fields(obj)]
    if head not in names:
        raise ConfigError(f"Unknown device parameter '{head}' on {type(obj).__name__}; options are {names}.")
    if len(rest) == 0:
        if isinstance(getattr(obj, head), tuple):
            value = tuple(value)
        return replace(obj, **{head: value})
    return replace(obj, **{head: _set_path(getattr(obj, head), rest, value)})


def with_override(device: DeviceConfig, path: str, value) -> DeviceConfig:
    '''
    Returns a copy of device with one attribute replaced; path is dotted attribute access, e.g.
    "qubits.Q2A.t1_loaded" or "channel.mode_lifetimes".
    '''
    updated = _set_path(device, path.split("."), value)
    return device_from_dict(device_to_dict(updated), source=f"override {path}={value!r}")
