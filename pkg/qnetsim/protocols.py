from dataclasses import dataclass, field
import math

import torch
from torch import Tensor

from .device import DeviceConfig, Node, qubit_label
from .dynamics import ControlFrame, InstantGate, PulseSchedule, ScheduleError, mhz, ns
from .hilbert import DTYPE, DensityMatrix, HilbertError, HilbertSpace, basis_ket, embed_operator, state_fidelity
from .logger import logger
from .utils_channels import Axis, rotation


# spectators of a two-qubit gate are parked this far below their idle frequency
SPECTATOR_DETUNING = -mhz(200.0)
NETWORK_IDLE = ns(70.0)


class ProtocolError(ValueError):
    pass


class StepKind:
    ISWAP = "iswap"
    CZ = "cz"
    ST = "st"
    ST_HALF = "st_half"
    ROTATION = "rotation"
    IDLE = "idle"
    LIST = [ISWAP, CZ, ST, ST_HALF, ROTATION, IDLE]


class TransferVariant:
    FULL = "full"
    HALF = "half"
    LIST = [FULL, HALF]


@dataclass(frozen=True)
class TransferParams:
    '''Detunings of Q2A/Q2B from the communication mode and coupler strengths (rad/s); tau, delta_tau in s.'''
    dw_a: float
    dw_b: float
    g_a: float
    g_b: float
    tau: float
    delta_tau: float

    def __post_init__(self):
        for name in ["dw_a", "dw_b", "g_a", "g_b", "tau", "delta_tau"]:
            if not math.isfinite(getattr(self, name)):
                raise ScheduleError(f"TransferParams.{name} must be finite, got {getattr(self, name)}")
        if not self.tau > self.delta_tau >= 0:
            raise ScheduleError(f"TransferParams needs tau > delta_tau >= 0, got tau={self.tau}, delta_tau={self.delta_tau}")
        if not (self.g_a > 0 and self.g_b > 0):
            raise ScheduleError(f"TransferParams couplings must be > 0, got g_a={self.g_a}, g_b={self.g_b}")

    @classmethod
    def from_mhz_ns(cls, dw_a: float, dw_b: float, g_a: float, g_b: float, tau: float, delta_tau: float):
        return cls(dw_a=mhz(dw_a), dw_b=mhz(dw_b), g_a=mhz(g_a), g_b=mhz(g_b), tau=ns(tau), delta_tau=ns(delta_tau))

    def to_mhz_ns(self) -> dict[str, float]:
        per_mhz = mhz(1.0)
        return {"dw_a": self.dw_a / per_mhz, "dw_b": self.dw_b / per_mhz, "g_a": self.g_a / per_mhz,
                "g_b": self.g_b / per_mhz, "tau": self.tau * 1e9, "delta_tau": self.delta_tau * 1e9}


DEFAULT_TRANSFER_MHZ_NS = {
    TransferVariant.FULL: dict(dw_a=-0.95, dw_b=-1.79, g_a=4.08, g_b=4.06, tau=72.0, delta_tau=13.0),
    TransferVariant.HALF: dict(dw_a=4.7, dw_b=5.4, g_a=2.89, g_b=6.11, tau=62.8, delta_tau=5.0),
}


def default_transfer_params(variant: str=TransferVariant.FULL) -> TransferParams:
    if variant not in TransferVariant.LIST:
        raise ScheduleError(f"Unknown transfer variant '{variant}'; must be one of {TransferVariant.LIST}")
    return TransferParams.from_mhz_ns(**DEFAULT_TRANSFER_MHZ_NS[variant])


@dataclass
class ProtocolStep:
    '''
    One operation of a multi-qubit protocol. Steps sharing a layer run in parallel. For transfers (st, iswap)
    sites are (source, destination); for cz they are the two gate qubits.
    '''
    kind: str
    sites: tuple[str, ...]
    layer: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sites = tuple(self.sites)
        if self.kind not in StepKind.LIST:
            raise ProtocolError(f"Unknown step kind '{self.kind}'; must be one of {StepKind.LIST}")
        expected = {StepKind.ISWAP: 2, StepKind.CZ: 2, StepKind.ST: 2, StepKind.ST_HALF: 2, StepKind.ROTATION: 1}
        if self.kind in expected and len(self.sites) != expected[self.kind]:
            raise ProtocolError(f"Step '{self.kind}' binds {expected[self.kind]} site(s), got {self.sites}")
        if self.kind == StepKind.IDLE and not self.params.get("duration", 0) > 0:
            raise ProtocolError(f"Idle step on {self.sites} needs an explicit duration > 0")
        if self.kind == StepKind.ROTATION and self.params.get("axis") not in Axis.LIST:
            raise ProtocolError(f"Rotation step on {self.sites} needs an axis in {Axis.LIST}")

    @property
    def duration(self) -> float:
        return self.params.get("duration", 0.0)


def _check_pair(node: str, j: int):
    if node not in Node.LIST:
        raise ProtocolError(f"Unknown node '{node}'; must be one of {Node.LIST}")
    if j not in (1, 3):
        raise ProtocolError(f"Gate partner of Q2{node} must be Q1 or Q3, got Q{j}")


def iswap_duration(g: float) -> float:
    return math.pi / (2 * g)


def cz_duration(g: float) -> float:
    return math.pi / (math.sqrt(2) * g)


def _node_couplings(node: str, device: DeviceConfig) -> dict[str, float]:
    return {f"{qubit_label(j, node)}-{qubit_label(2, node)}": mhz(device.qubit_coupling(j, node) * 1e-6) for j in (1, 3)}


def schedule_iswap(node: str, j: int, device: DeviceConfig) -> PulseSchedule:
    '''Q_j and Q_2 resonant for pi/(2g): |eg> -> -i|ge>. The other outer qubit is parked 200 MHz below.'''
    _check_pair(node, j)
    g = mhz(device.qubit_coupling(j, node) * 1e-6)
    spectator = qubit_label(4 - j, node)
    frame = ControlFrame(duration=iswap_duration(g),
                         detunings={qubit_label(j, node): 0.0, qubit_label(2, node): 0.0, spectator: SPECTATOR_DETUNING},
                         qubit_couplings=_node_couplings(node, device))
    return PulseSchedule([frame])


def schedule_cz(node: str, j: int, device: DeviceConfig, space: HilbertSpace=None) -> PulseSchedule:
    '''
    |ee> driven through |gf> for a full cycle: Q_j's |e> sits on Q_2's e-f transition (detuning eta_2) for
    pi/(sqrt(2) g). When a simulation space is given, Q_2 must be a qutrit in it.
    '''
    _check_pair(node, j)
    q2 = qubit_label(2, node)
    if space is not None and (q2 not in space or space.site(q2).dim != 3):
        raise ProtocolError(f"CZ needs {q2} modeled with three levels in {space}")
    g = mhz(device.qubit_coupling(j, node) * 1e-6)
    eta = mhz(device.qubit(q2).anharmonicity * 1e-6)
    spectator = qubit_label(4 - j, node)
    frame = ControlFrame(duration=cz_duration(g),
                         detunings={qubit_label(j, node): eta, q2: 0.0, spectator: SPECTATOR_DETUNING},
                         qubit_couplings=_node_couplings(node, device))
    return PulseSchedule([frame])


def schedule_state_transfer(params: TransferParams=None, variant: str=TransferVariant.FULL) -> PulseSchedule:
    '''
    Each coupler is on for tau, with g_B switched on delta_tau after g_A: delta_tau with g_A only,
    tau - delta_tau with both, delta_tau with g_B only. Zero-length frames are omitted.
    '''
    if params is None:
        params = default_transfer_params(variant)
    detunings = {"Q2A": params.dw_a, "Q2B": params.dw_b}
    frames = []
    if params.delta_tau > 0:
        frames.append(ControlFrame(duration=params.delta_tau, detunings=dict(detunings), couplers={Node.A: params.g_a, Node.B: 0.0}))
    frames.append(ControlFrame(duration=params.tau - params.delta_tau, detunings=dict(detunings),
                               couplers={Node.A: params.g_a, Node.B: params.g_b}))
    if params.delta_tau > 0:
        frames.append(ControlFrame(duration=params.delta_tau, detunings=dict(detunings), couplers={Node.A: 0.0, Node.B: params.g_b}))
    return PulseSchedule(frames)


def cnot_steps(control: str, target: str, layer: int) -> list[ProtocolStep]:
    '''CNOT as Y/2(target) . CZ . -Y/2(target); listed in time order.'''
    return [
        ProtocolStep(StepKind.ROTATION, (target,), layer, {"axis": Axis.Y, "angle": -math.pi / 2}),
        ProtocolStep(StepKind.CZ, (target, control), layer),
        ProtocolStep(StepKind.ROTATION, (target,), layer, {"axis": Axis.Y, "angle": math.pi / 2}),
    ]


def schedule_ghz_prep(node: str, device: DeviceConfig) -> PulseSchedule:
    '''
    Pulse-level GHZ preparation: Y/2 on Q_2, then CNOT(Q_2 -> Q_1) and CNOT(Q_2 -> Q_3). The detuning phase
    of each CZ is taken out with virtual-Z gates before the closing Y/2 of its CNOT.
    '''
    if node not in Node.LIST:
        raise ProtocolError(f"Unknown node '{node}'; must be one of {Node.LIST}")
    q2 = qubit_label(2, node)
    items = [InstantGate(q2, Axis.Y, math.pi / 2)]
    for j in (1, 3):
        target = qubit_label(j, node)
        items.append(InstantGate(target, Axis.Y, -math.pi / 2))
        items.extend(with_phase_corrections(schedule_cz(node, j, device)).items)
        items.append(InstantGate(target, Axis.Y, math.pi / 2))
    return PulseSchedule(items)


def ghz_prep_steps(node: str, device: DeviceConfig) -> list[ProtocolStep]:
    '''The GHZ preparation as protocol steps, for execution with process matrices.'''
    if node not in Node.LIST:
        raise ProtocolError(f"Unknown node '{node}'; must be one of {Node.LIST}")
    q1, q2, q3 = (qubit_label(i, node) for i in (1, 2, 3))
    steps = [ProtocolStep(StepKind.ROTATION, (q2,), 0, {"axis": Axis.Y, "angle": math.pi / 2})]
    steps += cnot_steps(q2, q1, 1)
    steps += cnot_steps(q2, q3, 2)
    for step in steps:
        if step.kind == StepKind.CZ:
            j = 1 if q1 in step.sites else 3
            step.params["duration"] = cz_duration(mhz(device.qubit_coupling(j, node) * 1e-6))
    return steps


def _idle_steps(participants: set[str], duration: float, layer: int, qubits: list[str]) -> list[ProtocolStep]:
    idle = [label for label in qubits if label not in participants]
    if len(idle) == 0 or duration <= 0:
        return []
    return [ProtocolStep(StepKind.IDLE, tuple(idle), layer, {"duration": duration})]


def schedule_ghz_transfer(device: DeviceConfig, params: TransferParams=None) -> list[ProtocolStep]:
    '''
    Moves a node-A GHZ state to node B through three sequential transfers: the state of Q2A is sent first,
    then Q1A's and Q3A's, each handed to Q2A by an iSWAP while Q2B hands the previous arrival to Q1B or Q3B.
    Non-participating qubits get idle steps for each layer's duration.
    '''
    params = params or default_transfer_params(TransferVariant.FULL)
    st_duration = schedule_state_transfer(params).duration
    qubits = [qubit_label(i, node) for node in Node.LIST for i in (1, 2, 3)]
    steps: list[ProtocolStep] = []

    def add_st(layer: int):
        steps.append(ProtocolStep(StepKind.ST, ("Q2A", "Q2B"), layer, {"duration": st_duration, "variant": TransferVariant.FULL}))
        steps.extend(_idle_steps({"Q2A", "Q2B"}, st_duration, layer, qubits))

    def add_iswaps(layer: int, j: int):
        g_a = mhz(device.qubit_coupling(j, Node.A) * 1e-6)
        g_b = mhz(device.qubit_coupling(j, Node.B) * 1e-6)
        steps.append(ProtocolStep(StepKind.ISWAP, ("Q2B", qubit_label(j, Node.B)), layer, {"duration": iswap_duration(g_b)}))
        steps.append(ProtocolStep(StepKind.ISWAP, (qubit_label(j, Node.A), "Q2A"), layer, {"duration": iswap_duration(g_a)}))
        layer_duration = max(iswap_duration(g_a), iswap_duration(g_b))
        participants = {"Q2A", "Q2B", qubit_label(j, Node.A), qubit_label(j, Node.B)}
        steps.extend(_idle_steps(participants, layer_duration, layer, qubits))

    add_st(0)
    add_iswaps(1, 1)
    add_st(2)
    add_iswaps(3, 3)
    add_st(4)
    return steps


def schedule_network_ghz(device: DeviceConfig, params: TransferParams=None, idle_duration: float=NETWORK_IDLE) -> list[ProtocolStep]:
    '''
    Stage I: X on Q2A, half transfer to Q2B, X on Q2B, giving (|gg> + |ee>)/sqrt(2).
    Stage II: CNOT(Q2n -> Q1n) on both nodes. Stage III: CNOT(Q2n -> Q3n) on both nodes while Q1n idles.
    '''
    params = params or default_transfer_params(TransferVariant.HALF)
    half_duration = schedule_state_transfer(params, TransferVariant.HALF).duration
    steps = [
        ProtocolStep(StepKind.ROTATION, ("Q2A",), 0, {"axis": Axis.X, "angle": math.pi, "stage": "I"}),
        ProtocolStep(StepKind.ST_HALF, ("Q2A", "Q2B"), 0, {"duration": half_duration, "variant": TransferVariant.HALF, "stage": "I"}),
        ProtocolStep(StepKind.ROTATION, ("Q2B",), 0, {"axis": Axis.X, "angle": math.pi, "stage": "I"}),
    ]
    for layer, j, stage in [(1, 1, "II"), (2, 3, "III")]:
        for node in Node.LIST:
            for step in cnot_steps(qubit_label(2, node), qubit_label(j, node), layer):
                step.params["stage"] = stage
                if step.kind == StepKind.CZ:
                    step.params["duration"] = cz_duration(mhz(device.qubit_coupling(j, node) * 1e-6))
                steps.append(step)
    for node in Node.LIST:
        steps.append(ProtocolStep(StepKind.IDLE, (qubit_label(1, node),), 2, {"duration": idle_duration, "stage": "III"}))
    return steps


def wrap_phase(phi: float) -> float:
    return math.remainder(phi, 2 * math.pi)


def dynamic_phase_ledger(schedule: PulseSchedule) -> dict[str, float]:
    '''
    Phase accumulated by each detuned qubit, integral of its detuning over the schedule, wrapped to
    [-pi, pi]. Free evolution under a detuning is Rz(-phi), so Rz(+phi) undoes it.
    '''
    ledger: dict[str, float] = {}
    for frame in schedule.frames():
        for site, dw in frame.detunings.items():
            ledger[site] = ledger.get(site, 0.0) + dw * frame.duration
    return {site: wrap_phase(phi) for site, phi in ledger.items()}


def with_phase_corrections(schedule: PulseSchedule, sites=None) -> PulseSchedule:
    '''Appends virtual-Z gates that cancel the ledger phases (optionally only on the given sites).'''
    ledger = dynamic_phase_ledger(schedule)
    gates = []
    for site, phi in ledger.items():
        if sites is not None and site not in sites:
            continue
        if abs(phi) > 1e-15:
            gates.append(InstantGate(site, Axis.Z, phi))
    if len(gates) == 0:
        return schedule
    return PulseSchedule(schedule.items + gates)


def apply_virtual_z(rho: DensityMatrix, site: str, phi: float) -> DensityMatrix:
    u = embed_operator(rotation(Axis.Z, phi, rho.space.site(site).dim), site, rho.space).matrix
    return DensityMatrix(rho.space, u @ rho.matrix @ u.mH, validate=False)


def calibrate_phase(rho: DensityMatrix, target: Tensor, site: str) -> tuple[float, DensityMatrix]:
    '''
    Virtual-Z angle on one qubit that maximizes the fidelity to a pure target, and the corrected state.

    A Z rotation by phi makes the fidelity a + Re(b e^{i phi}), so three evaluations fix a and b and the
    optimum is phi = -arg(b).
    '''
    if rho.space.site(site).dim != 2:
        raise ProtocolError(f"calibrate_phase needs a two-level site; '{site}' has dim {rho.space.site(site).dim}")

    def fidelity_at(phi: float) -> float:
        return state_fidelity(apply_virtual_z(rho, site, phi), target)

    f_0, f_quarter, f_half = fidelity_at(0.0), fidelity_at(math.pi / 2), fidelity_at(math.pi)
    a = 0.5 * (f_0 + f_half)
    b = complex(0.5 * (f_0 - f_half), a - f_quarter)
    phi = 0.0 if abs(b) < 1e-15 else wrap_phase(-math.atan2(b.imag, b.real))
    logger.debug(f"Phase calibration on {site}: phi = {phi:.6f} rad, fidelity {f_0:.6f} -> {a + abs(b):.6f}")
    return phi, apply_virtual_z(rho, site, phi)


def transfer_phase_correction(rho_plus: Tensor) -> float:
    '''Rz angle making <g|rho|e> real and positive for the output of a transferred |+> state.'''
    if tuple(rho_plus.shape) != (2, 2):
        raise HilbertError(f"Expected a single-qubit output, got shape {tuple(rho_plus.shape)}")
    coherence = complex(rho_plus[0, 1])
    if abs(coherence) < 1e-15:
        return 0.0
    return math.atan2(coherence.imag, coherence.real)


def cz_phase_pattern(u: Tensor, space: HilbertSpace, control: str, target: str) -> Tensor:
    '''
    Diagonal phases of a two-qubit propagator on {gg, ge, eg, ee} of (control, target), after removing the
    single-qubit Z phases that make gg, ge and eg real. An ideal CZ gives (1, 1, 1, -1).
    '''
    phases = []
    for lc, lt in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        ket = basis_ket(space, {control: lc, target: lt})
        amplitude = complex(torch.vdot(ket, u @ ket))
        if abs(amplitude) < 1e-12:
            raise ProtocolError(f"Propagator has no weight on |{lc}{lt}> of ({control}, {target})")
        phases.append(amplitude / abs(amplitude))
    gg, ge, eg, ee = phases
    conditional = ee * gg / (ge * eg)
    return torch.tensor([1.0, 1.0, 1.0, conditional], dtype=DTYPE)
