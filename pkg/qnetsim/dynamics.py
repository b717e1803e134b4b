from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union
import math
import re

import torch
from torch import Tensor
from einops import rearrange

from .device import DeviceConfig, Node, mode_label
from .hilbert import (DTYPE, DensityMatrix, HilbertError, HilbertSpace, Operator, SiteKind, embed_operator,
                      embed_operators)
from .logger import logger
from .utils_channels import Axis, rotation
from .utils_io import dump_states, write_csv


TWO_PI = 2 * math.pi
QUBIT_PATTERN = re.compile(r"^Q([123])([AB])$")
MODE_PATTERN = re.compile(r"^M([1-9][0-9]*)$")
# superoperator RK4 is used up to this (sub)space dimension, stagewise RK4 above it
SUPEROP_MAX_DIM = 32


class ScheduleError(ValueError):
    pass


class DecoherenceError(ValueError):
    pass


class IntegrationError(RuntimeError):
    pass


def mhz(value: float) -> float:
    '''Frequency in MHz (cycles) to angular frequency in rad/s.'''
    return TWO_PI * value * 1e6


def ns(value: float) -> float:
    return value * 1e-9


@dataclass
class ControlFrame:
    '''
    Piecewise-constant control segment. Detunings are keyed by qubit label, coupler strengths by node,
    inter-qubit couplings by "QjX-Q2X"; all in rad/s.
    '''
    duration: float
    detunings: dict[str, float] = field(default_factory=dict)
    couplers: dict[str, float] = field(default_factory=dict)
    qubit_couplings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ScheduleError(f"ControlFrame duration must be > 0 and finite, got {self.duration}")
        for name, values in [("detunings", self.detunings), ("couplers", self.couplers), ("qubit_couplings", self.qubit_couplings)]:
            for key, value in values.items():
                if not math.isfinite(value):
                    raise ScheduleError(f"ControlFrame {name}[{key}] must be finite, got {value}")
        for node in self.couplers:
            if node not in Node.LIST:
                raise ScheduleError(f"Unknown coupler node '{node}'; must be one of {Node.LIST}")


@dataclass(frozen=True)
class InstantGate:
    site: str
    axis: str
    angle: float

    def __post_init__(self):
        if self.axis not in Axis.LIST:
            raise ScheduleError(f"InstantGate axis must be one of {Axis.LIST}, got '{self.axis}'")
        if not -TWO_PI < self.angle <= TWO_PI:
            raise ScheduleError(f"InstantGate angle must be in (-2pi, 2pi], got {self.angle}")


class PulseSchedule:
    def __init__(self, items: Iterable[Union[ControlFrame, InstantGate]]):
        self.items: list[Union[ControlFrame, InstantGate]] = list(items)
        if len(self.items) == 0:
            raise ScheduleError("PulseSchedule needs at least one item")
        for item in self.items:
            if not isinstance(item, (ControlFrame, InstantGate)):
                raise ScheduleError(f"PulseSchedule items must be ControlFrame or InstantGate, got {type(item).__name__}")

    def frames(self) -> list[ControlFrame]:
        return [item for item in self.items if isinstance(item, ControlFrame)]

    @property
    def duration(self) -> float:
        return sum(frame.duration for frame in self.frames())

    def __add__(self, other: 'PulseSchedule') -> 'PulseSchedule':
        return PulseSchedule(self.items + other.items)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class SiteDecoherence:
    t1: Optional[float] = None
    t_phi: Optional[float] = None


@dataclass
class EvolveOptions:
    dt_max: float = 1e-9
    sample_stride: int = 50
    trace_tolerance: float = 1e-5
    positivity_tolerance: float = 1e-6
    overrides: dict[str, SiteDecoherence] = field(default_factory=dict)
    lossless: bool = False
    restrict_excitations: bool = True
    store_states: bool = True


class Trajectory:
    def __init__(self, space: HilbertSpace, times: list[float], states: Optional[list[DensityMatrix]],
                 populations: dict[str, list[float]], final_state: DensityMatrix):
        self.space = space
        self.times = times
        self.states = states
        self.populations = populations
        self.final_state = final_state

    def __len__(self):
        return len(self.times)


def lowering(dim: int) -> Tensor:
    return torch.diag(torch.sqrt(torch.arange(1, dim, dtype=torch.float64)), 1).to(DTYPE)


def raising(dim: int) -> Tensor:
    return torch.diag(torch.sqrt(torch.arange(1, dim, dtype=torch.float64)), -1).to(DTYPE)


def number(dim: int) -> Tensor:
    return torch.diag(torch.arange(dim, dtype=torch.float64)).to(DTYPE)


def _classify_sites(space: HilbertSpace) -> tuple[list[str], dict[int, str]]:
    qubits, modes, unlabeled = [], {}, []
    for site in space.sites:
        if site.kind == SiteKind.QUBIT and QUBIT_PATTERN.match(site.label):
            qubits.append(site.label)
        elif site.kind == SiteKind.MODE and MODE_PATTERN.match(site.label):
            modes[int(MODE_PATTERN.match(site.label).group(1))] = site.label
        else:
            unlabeled.append(site.label)
    if len(unlabeled) > 0:
        raise HilbertError(f"Sites {unlabeled} are not labeled as qubits (Q1A..Q3B) or modes (M1..MM)")
    if len(modes) > 0:
        count = len(modes)
        if count % 2 == 0:
            raise HilbertError(f"The number of standing modes must be odd, got {count}")
        if sorted(modes) != list(range(1, count + 1)):
            raise HilbertError(f"Mode sites must be M1..M{count}, got {[modes[m] for m in sorted(modes)]}")
    return qubits, modes


def build_hamiltonian(frame: ControlFrame, space: HilbertSpace, fsr: float, device: DeviceConfig=None) -> Operator:
    '''
    Rotating-frame Hamiltonian (units of rad/s) of qubits and standing modes for one control frame. The frame
    is centered on the middle mode; node B's coupling to mode m carries the sign (-1)^m. Three-level qubits get
    the anharmonic term eta/2 n(n-1), with eta taken from the device.
    '''
    qubits, modes = _classify_sites(space)
    h = torch.zeros(space.dim, space.dim, dtype=DTYPE)
    for label in frame.detunings:
        if label not in space:
            logger.debug(f"Detuning for '{label}' ignored; site not in simulated space")
    for label in qubits:
        dim = space.site(label).dim
        n = number(dim)
        local = frame.detunings.get(label, 0.0) * n
        if dim == 3:
            if device is None:
                raise ScheduleError(f"Three-level site '{label}' needs a device for its anharmonicity")
            eta = TWO_PI * device.qubit(label).anharmonicity
            local = local + (eta / 2) * (n @ (n - torch.eye(dim, dtype=DTYPE)))
        h = h + embed_operator(local, label, space).matrix
    center = (len(modes) + 1) / 2
    for m, label in modes.items():
        h = h + ((m - center) * TWO_PI * fsr) * embed_operator(number(space.site(label).dim), label, space).matrix
    for key, g in frame.qubit_couplings.items():
        q_j, q_2 = key.split("-")
        if q_j not in space or q_2 not in space:
            logger.debug(f"Coupling '{key}' ignored; site not in simulated space")
            continue
        term = embed_operators({q_2: lowering(space.site(q_2).dim), q_j: raising(space.site(q_j).dim)}, space).matrix
        h = h + g * (term + term.mH)
    for node, g in frame.couplers.items():
        q_2 = f"Q2{node}"
        if q_2 not in space or g == 0:
            continue
        for m, label in modes.items():
            sign = 1.0 if node == Node.A else (-1.0)**m
            term = embed_operators({q_2: lowering(space.site(q_2).dim), label: raising(space.site(label).dim)}, space).matrix
            h = h + (sign * g) * (term + term.mH)
    return Operator(space, h)


def collapse_operators(device: DeviceConfig, space: HilbertSpace, overrides: dict[str, SiteDecoherence]=None) -> list[Operator]:
    '''
    Lindblad operators: relaxation and pure dephasing per qubit, photon loss per mode. Override values replace
    device values per site; an infinite lifetime disables that channel.
    '''
    overrides = overrides or {}
    qubits, modes = _classify_sites(space)
    ops = []
    for label in qubits:
        dim = space.site(label).dim
        override = overrides.get(label, SiteDecoherence())
        cfg = device.qubits.get(label, None)
        t1 = override.t1 if override.t1 is not None else (cfg.t1 if cfg is not None else None)
        t_phi = override.t_phi if override.t_phi is not None else (cfg.t_phi if cfg is not None else None)
        if t1 is None or t_phi is None:
            raise DecoherenceError(f"No T1/T_phi for qubit '{label}'")
        if not math.isinf(t1):
            if dim == 2:
                ops.append(math.sqrt(1 / t1) * embed_operator(lowering(2), label, space))
            else:
                g_e = torch.zeros(3, 3, dtype=DTYPE)
                g_e[0, 1] = 1.0
                e_f = torch.zeros(3, 3, dtype=DTYPE)
                e_f[1, 2] = 1.0
                ops.append(math.sqrt(1 / t1) * embed_operator(g_e, label, space))
                ops.append(math.sqrt(2 / t1) * embed_operator(e_f, label, space))
        if not math.isinf(t_phi):
            if dim == 2:
                z = torch.diag(torch.tensor([1.0, -1.0], dtype=DTYPE))
            else:
                z = torch.diag(torch.tensor([0.0, 2.0, 4.0], dtype=DTYPE))
            ops.append(math.sqrt(1 / (2 * t_phi)) * embed_operator(z, label, space))
    for m, label in modes.items():
        override = overrides.get(label, SiteDecoherence())
        if override.t1 is not None:
            lifetime = override.t1
        elif m <= len(device.channel.mode_lifetimes):
            lifetime = device.mode_lifetime(m)
        else:
            raise DecoherenceError(f"No lifetime for mode '{label}'")
        if not math.isinf(lifetime):
            ops.append(math.sqrt(1 / lifetime) * embed_operator(lowering(space.site(label).dim), label, space))
    return ops


def excitation_numbers(space: HilbertSpace) -> Tensor:
    total = torch.zeros(1, dtype=torch.int64)
    for dim in space.dims:
        total = rearrange(total[:, None] + torch.arange(dim)[None, :], "a b -> (a b)")
    return total


def site_levels(space: HilbertSpace) -> Tensor:
    '''(n_sites, dim) table of each site's excitation level in every basis state.'''
    rows = []
    for label in space.labels:
        rows.append(torch.diagonal(embed_operator(number(space.site(label).dim), label, space).matrix).real)
    return torch.stack(rows)


def _restriction(h: Tensor, c_stack: Optional[Tensor], rho: Tensor, excitation: Tensor) -> Optional[Tensor]:
    # states with more excitations than present in rho are never reached: H conserves the number and
    # every collapse operator lowers or keeps it; both conditions are checked before restricting
    present = torch.diagonal(rho).real.abs() > 0
    n_max = int(excitation[present].max())
    keep = excitation <= n_max
    if bool(keep.all()):
        return None
    drop = ~keep
    if float(h[keep][:, drop].abs().max()) != 0.0:
        return None
    if c_stack is not None and float(c_stack[:, drop][:, :, keep].abs().max()) != 0.0:
        return None
    return torch.nonzero(keep).reshape(-1)


def _liouvillian(h: Tensor, c_stack: Optional[Tensor]) -> Tensor:
    # row-major vectorization: vec(A rho B) = (A kron B^T) vec(rho)
    dim = h.shape[0]
    eye = torch.eye(dim, dtype=DTYPE)
    h_eff = h.clone()
    if c_stack is not None:
        h_eff = h_eff - 0.5j * torch.einsum("kji,kjl->il", c_stack.conj(), c_stack)
    liouv = -1j * torch.kron(h_eff, eye) + 1j * torch.kron(eye, h_eff.conj())
    if c_stack is not None:
        for c in c_stack:
            liouv = liouv + torch.kron(c, c.conj())
    return liouv


def _rk4_propagator(liouv: Tensor, dt: float) -> Tensor:
    # RK4 applied to a linear generator is exactly this polynomial of dt*L
    a = dt * liouv
    eye = torch.eye(a.shape[0], dtype=DTYPE)
    a2 = a @ a
    a3 = a2 @ a
    return eye + a + a2 / 2 + a3 / 6 + (a3 @ a) / 24


def _rk4_stepper(h: Tensor, c_stack: Optional[Tensor], dt: float):
    h_eff = h.clone()
    if c_stack is not None:
        h_eff = h_eff - 0.5j * torch.einsum("kji,kjl->il", c_stack.conj(), c_stack)
    h_eff_dag = h_eff.mH

    def derivative(r: Tensor) -> Tensor:
        out = -1j * (h_eff @ r - r @ h_eff_dag)
        if c_stack is not None:
            out = out + (c_stack @ r @ c_stack.mH).sum(0)
        return out

    def step(r: Tensor, n: int) -> Tensor:
        for _ in range(n):
            k1 = derivative(r)
            k2 = derivative(r + (dt / 2) * k1)
            k3 = derivative(r + (dt / 2) * k2)
            k4 = derivative(r + dt * k3)
            r = r + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        return r

    return step


def _superop_stepper(h: Tensor, c_stack: Optional[Tensor], dt: float):
    dim = h.shape[0]
    single = _rk4_propagator(_liouvillian(h, c_stack), dt)
    powers = {1: single}

    def step(r: Tensor, n: int) -> Tensor:
        if n not in powers:
            powers[n] = torch.linalg.matrix_power(single, n)
        v = powers[n] @ rearrange(r, "i j -> (i j)")
        return rearrange(v, "(i j) -> i j", i=dim)

    return step


def frame_step_size(h: Tensor, duration: float, dt_max: float) -> tuple[float, int]:
    '''Fixed RK4 step min(dt_max, 0.02/max|H_ij|, duration/10), shrunk to divide the frame evenly.'''
    h_max = float(h.abs().max())
    step = min(dt_max, duration / 10, 0.02 / h_max if h_max > 0 else math.inf)
    n_steps = max(1, math.ceil(duration / step - 1e-9))
    return duration / n_steps, n_steps


def evolve_master_equation(rho0: DensityMatrix, schedule: PulseSchedule, device: DeviceConfig, space: HilbertSpace,
                           options: EvolveOptions=None, c_ops: list[Operator]=None) -> Trajectory:
    '''
    Integrates the Lindblad master equation over a pulse schedule with fixed-step RK4.

    Args:
        rho0: physical initial state on space.
        schedule: control frames and instantaneous single-qubit rotations.
        device: source of fsr, anharmonicities and decoherence data.
        space: simulated space (a subset of the network's sites).
        options: step cap, sampling stride, decoherence overrides, lossless flag.
        c_ops: explicit collapse operators, replacing the device-derived set.
    '''
    options = options or EvolveOptions()
    if rho0.space != space:
        raise HilbertError(f"Initial state space {rho0.space} does not match {space}")
    rho0.validate()
    if options.sample_stride < 1:
        raise ScheduleError(f"sample_stride must be >= 1, got {options.sample_stride}")
    if c_ops is None:
        c_ops = [] if options.lossless else collapse_operators(device, space, options.overrides)
    c_stack = torch.stack([c.matrix for c in c_ops]) if len(c_ops) > 0 else None
    excitation = excitation_numbers(space)
    levels = site_levels(space)
    labels = space.labels

    rho = rho0.matrix.clone()
    times: list[float] = []
    states: list[DensityMatrix] = []
    populations: dict[str, list[float]] = {label: [] for label in labels}

    def record(t: float, matrix: Tensor, replace_last: bool=False):
        trace = complex(torch.trace(matrix))
        if abs(trace - 1.0) > options.trace_tolerance:
            raise IntegrationError(f"Trace drifted to {trace.real:.9f} at t = {t * 1e9:.3f} ns (step {current_dt:.3e} s)")
        min_eig = float(torch.linalg.eigvalsh(0.5 * (matrix + matrix.mH)).min())
        if min_eig < -options.positivity_tolerance:
            raise IntegrationError(f"State lost positivity (min eigenvalue {min_eig:.3e}) at t = {t * 1e9:.3f} ns "
                                   f"(step {current_dt:.3e} s)")
        pops = (levels @ torch.diagonal(matrix).real).tolist()
        if replace_last:
            times.pop()
            if options.store_states:
                states.pop()
            for label in labels:
                populations[label].pop()
        times.append(t)
        if options.store_states:
            states.append(DensityMatrix(space, matrix, validate=False))
        for label, value in zip(labels, pops):
            populations[label].append(value)

    current_dt = 0.0
    t = 0.0
    record(t, rho)
    for item in schedule.items:
        if isinstance(item, InstantGate):
            if item.site not in space:
                logger.debug(f"Gate on '{item.site}' ignored; site not in simulated space")
                continue
            u = embed_operator(rotation(item.axis, item.angle, space.site(item.site).dim), item.site, space).matrix
            rho = u @ rho @ u.mH
            record(t, rho, replace_last=True)
            continue
        h = build_hamiltonian(item, space, device.fsr, device).matrix
        dt, n_steps = frame_step_size(h, item.duration, options.dt_max)
        current_dt = dt
        keep = _restriction(h, c_stack, rho, excitation) if options.restrict_excitations else None
        if keep is not None:
            h_s, rho_s = h[keep][:, keep], rho[keep][:, keep]
            c_s = c_stack[:, keep][:, :, keep] if c_stack is not None else None
        else:
            h_s, rho_s, c_s = h, rho, c_stack
        stride = options.sample_stride
        if h_s.shape[0] <= SUPEROP_MAX_DIM:
            step = _superop_stepper(h_s, c_s, dt)
        else:
            step = _rk4_stepper(h_s, c_s, dt)
        logger.debug(f"Frame {item.duration * 1e9:.2f} ns: {n_steps} steps of {dt:.3e} s on dim {h_s.shape[0]}/{space.dim}")
        t_start = t
        done = 0
        while done < n_steps:
            chunk = min(stride, n_steps - done)
            rho_s = step(rho_s, chunk)
            done += chunk
            if keep is not None:
                rho = torch.zeros_like(rho)
                rho[keep[:, None], keep[None, :]] = rho_s
            else:
                rho = rho_s
            record(t_start + done * dt, rho)
        t = t_start + item.duration
    final_state = DensityMatrix(space, 0.5 * (rho + rho.mH), validate=False)
    return Trajectory(space, times, states if options.store_states else None, populations, final_state)


def excitation_populations(traj: Trajectory, site_label: str) -> list[float]:
    if site_label not in traj.populations:
        raise HilbertError(f"Unknown site label '{site_label}'; trajectory has {list(traj.populations)}")
    return traj.populations[site_label]


def schedule_unitary(schedule: PulseSchedule, space: HilbertSpace, device: DeviceConfig) -> Tensor:
    '''Lossless propagator of a schedule, exact per frame via the matrix exponential.'''
    u = torch.eye(space.dim, dtype=DTYPE)
    for item in schedule.items:
        if isinstance(item, InstantGate):
            if item.site in space:
                u = embed_operator(rotation(item.axis, item.angle, space.site(item.site).dim), item.site, space).matrix @ u
            continue
        h = build_hamiltonian(item, space, device.fsr, device).matrix
        u = torch.linalg.matrix_exp(-1j * item.duration * h) @ u
    return u


def write_trajectory_csv(traj: Trajectory, path: Union[str, Path], sites: Iterable[str]=None):
    sites = list(sites) if sites is not None else traj.space.labels
    rows = []
    for i, t in enumerate(traj.times):
        for label in sites:
            rows.append((t * 1e9, label, excitation_populations(traj, label)[i]))
    write_csv(path, ["time_ns", "site", "population"], rows)


def dump_trajectory(traj: Trajectory, path: Union[str, Path]):
    states = traj.states if traj.states is not None else [traj.final_state]
    dump_states(path, states)


def network_space(qubits: Iterable[str], mode_count: int=0, qutrits: Iterable[str]=(), mode_dim: int=2) -> HilbertSpace:
    '''Qubit sites in the given order followed by standing modes M1..M{mode_count}.'''
    qutrits = set(qutrits)
    sites = [(label, SiteKind.QUBIT, 3 if label in qutrits else 2) for label in qubits]
    sites += [(mode_label(m), SiteKind.MODE, mode_dim) for m in range(1, mode_count + 1)]
    return HilbertSpace.from_tuples(sites)


def damped_vacuum_rabi(t: float, g: float, gamma_q: float, gamma_r: float) -> float:
    '''
    Excited-state population of a qubit resonant with one lossy mode, single excitation, no dephasing:
    e^{-(gamma_q + gamma_r) t/2} (cos(Omega t) - (d/Omega) sin(Omega t))^2 with d = (gamma_q - gamma_r)/4
    and Omega = sqrt(g^2 - d^2).
    '''
    d = (gamma_q - gamma_r) / 4
    omega = math.sqrt(g**2 - d**2)
    amplitude = math.exp(-(gamma_q + gamma_r) * t / 4) * (math.cos(omega * t) - (d / omega) * math.sin(omega * t))
    return amplitude**2
