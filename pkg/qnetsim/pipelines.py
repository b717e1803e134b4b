from dataclasses import dataclass
from typing import Iterable, Optional, Sequence
import cmath
import math

import torch
from torch import Tensor

from .circuit_model import coupler_phase_for_coupling, node_coupling_context, qubit_loaded_t1
from .device import QUBIT_LABELS, DeviceConfig, Node, node_of, qubit_label
from .dynamics import (EvolveOptions, SiteDecoherence, Trajectory, evolve_master_equation, excitation_populations,
                       network_space, schedule_unitary)
from .hilbert import (DTYPE, DensityMatrix, HilbertSpace, ProcessMatrix, basis_ket, embed_on_sites, embed_operators,
                      ghz_ket, partial_trace, state_fidelity)
from .logger import logger
from .protocols import (ProtocolError, ProtocolStep, StepKind, TransferParams, TransferVariant, apply_virtual_z,
                        calibrate_phase, default_transfer_params, ghz_prep_steps, schedule_cz, schedule_ghz_transfer,
                        schedule_iswap, schedule_network_ghz, schedule_state_transfer, transfer_phase_correction)
from .tomography import process_input_states, qubit_block, reconstruct_process
from .utils_channels import CZ, SWAP, Axis, apply_idle, apply_process, apply_unitary, chi_from_unitary, depolarizing_chi, rotation


CZ_PROXY_FIDELITY = 0.958
# population the qutrit-model CZ may leave above |e> before its outputs are cut to the qubit block
CZ_LEAKAGE_LIMIT = 0.02
REGISTER = HilbertSpace.qubits(QUBIT_LABELS)


class CzModel:
    PROXY = "proxy"
    SIMULATED = "simulated"
    IDEAL = "ideal"
    LIST = [PROXY, SIMULATED, IDEAL]


def cz_proxy_process(fidelity: float=CZ_PROXY_FIDELITY) -> ProcessMatrix:
    '''Ideal CZ followed by two-qubit depolarizing noise with process fidelity to CZ equal to fidelity.'''
    # Tr(chi chi_CZ) = (1 - p) + p/16
    p = (1 - fidelity) / (1 - 1 / 16)
    return depolarizing_chi(2, p, CZ)


def loaded_t1(device: DeviceConfig, node: str, g: float) -> float:
    '''
    T1 of Q2 of a node while its coupler is on: the device's t1_loaded when given, otherwise the circuit
    model at the coupler phase that produces coupling g (rad/s).

    A t1_loaded measured at coupling t1_loaded_coupling (Hz) is rescaled to g: the cable-induced rate goes
    with the squared coupler inductance, so with g^2.
    '''
    qubit = device.qubit(qubit_label(2, node))
    if qubit.t1_loaded is not None:
        if qubit.t1_loaded_coupling is None:
            return qubit.t1_loaded
        induced = max(0.0, 1.0 / qubit.t1_loaded - 1.0 / qubit.t1)
        ratio = g / (2 * math.pi * qubit.t1_loaded_coupling)
        return 1.0 / (1.0 / qubit.t1 + induced * ratio**2)
    context = node_coupling_context(device, node)
    delta = coupler_phase_for_coupling(g, **context)
    return qubit_loaded_t1(delta, qubit, context["coupler"], device.channel)


def transfer_space(device: DeviceConfig, mode_count: int=None) -> HilbertSpace:
    return network_space(["Q2A", "Q2B"], mode_count if mode_count is not None else device.mode_count)


def transfer_options(device: DeviceConfig, params: TransferParams, lossless: bool=False, **kwargs) -> EvolveOptions:
    '''Evolution options for a transfer: both cable-coupled qubits decay with their loaded T1.'''
    overrides = {f"Q2{node}": SiteDecoherence(t1=loaded_t1(device, node, g))
                 for node, g in [(Node.A, params.g_a), (Node.B, params.g_b)]}
    return EvolveOptions(overrides=overrides, lossless=lossless, **kwargs)


def _place(ket_or_rho: Tensor, labels: Sequence[str], space: HilbertSpace) -> DensityMatrix:
    '''State on the given sites, every other site of space in its ground state.'''
    local = ket_or_rho if ket_or_rho.ndim == 2 else torch.outer(ket_or_rho, ket_or_rho.conj())
    rest = [label for label in space.labels if label not in labels]
    ground = {}
    for label in rest:
        proj = torch.zeros(space.site(label).dim, space.site(label).dim, dtype=DTYPE)
        proj[0, 0] = 1.0
        ground[label] = proj
    matrix = embed_on_sites(local, labels, space).matrix
    if len(ground) > 0:
        matrix = matrix @ embed_operators(ground, space).matrix
    return DensityMatrix(space, matrix, validate=False)


def simulate_state_transfer(device: DeviceConfig, params: TransferParams=None, variant: str=TransferVariant.FULL,
                            rho0: DensityMatrix=None, options: EvolveOptions=None) -> Trajectory:
    '''Evolves Q2A, Q2B and the standing modes through a (half) transfer; Q2A starts in |e> by default.'''
    params = params or default_transfer_params(variant)
    space = transfer_space(device)
    if rho0 is None:
        rho0 = DensityMatrix.basis(space, {"Q2A": 1})
    options = options or transfer_options(device, params)
    return evolve_master_equation(rho0, schedule_state_transfer(params, variant), device, space, options)


def receiver_population(traj: Trajectory, receiver: str="Q2B") -> float:
    return excitation_populations(traj, receiver)[-1]


def transfer_outputs(device: DeviceConfig, schedule, space: HilbertSpace, src: str, dst: str,
                     options: EvolveOptions) -> tuple[list[Tensor], list[Tensor]]:
    '''
    Process-tomography inputs prepared on src and the resulting single-qubit states of dst. Outputs are
    phase-corrected so the transferred (|g> + |e>)/sqrt(2) arrives with a real coherence.
    '''
    inputs = process_input_states(1)
    outputs = []
    for ket in inputs:
        rho0 = _place(ket, [src], space)
        traj = evolve_master_equation(rho0, schedule, device, space, options)
        outputs.append(partial_trace(traj.final_state, [dst]).matrix)
    phi = transfer_phase_correction(outputs[2])
    rz = rotation(Axis.Z, phi)
    return inputs, [rz @ out @ rz.mH for out in outputs]


def st_outputs(device: DeviceConfig, params: TransferParams=None, options: EvolveOptions=None) -> tuple[list[Tensor], list[Tensor]]:
    params = params or default_transfer_params(TransferVariant.FULL)
    options = options or transfer_options(device, params, store_states=False)
    return transfer_outputs(device, schedule_state_transfer(params), transfer_space(device), "Q2A", "Q2B", options)


def st_process(device: DeviceConfig, params: TransferParams=None, options: EvolveOptions=None) -> ProcessMatrix:
    '''Single-qubit process from Q2A to Q2B of the full state transfer.'''
    chi = reconstruct_process(*st_outputs(device, params, options))
    logger.debug(f"State transfer process: chi_II = {chi.chi[0, 0].real:.4f}")
    return chi


def iswap_process(device: DeviceConfig, src: str, dst: str, options: EvolveOptions=None) -> ProcessMatrix:
    '''Single-qubit process of an iSWAP moving the state of src into dst (one of them Q2 of the same node).'''
    node = node_of(src)
    if node_of(dst) != node or qubit_label(2, node) not in (src, dst) or src == dst:
        raise ProtocolError(f"iSWAP transfers between Q2 and Q1/Q3 of one node, got {src} -> {dst}")
    j = int((dst if src == qubit_label(2, node) else src)[1])
    options = options or EvolveOptions(store_states=False)
    space = network_space([qubit_label(j, node), qubit_label(2, node)])
    return reconstruct_process(*transfer_outputs(device, schedule_iswap(node, j, device), space, src, dst, options))


def _lift(ket: Tensor, space: HilbertSpace) -> Tensor:
    # qubit-register ket into a space whose sites may carry an |f> level
    lifted = torch.zeros(space.dims, dtype=DTYPE)
    lifted[tuple(slice(0, 2) for _ in space.dims)] = ket.reshape([2] * len(space))
    return lifted.reshape(-1)


def cz_outputs(device: DeviceConfig, node: str, j: int, options: EvolveOptions=None) -> tuple[list[Tensor], list[Tensor]]:
    '''
    Two-qubit process-tomography inputs on (Q_j, Q_2) and the outputs of the qutrit-model CZ. The single-qubit
    Z phases of the lossless propagator are removed, and outputs are cut to the {g, e} block; residual
    leakage up to CZ_LEAKAGE_LIMIT is dropped with a warning.
    '''
    q_j, q_2 = qubit_label(j, node), qubit_label(2, node)
    space = network_space([q_j, q_2], qutrits=[q_2])
    schedule = schedule_cz(node, j, device, space)
    u = schedule_unitary(schedule, space, device)
    amp = {}
    for lj, l2 in [(0, 0), (0, 1), (1, 0)]:
        ket = basis_ket(space, {q_j: lj, q_2: l2})
        amp[(lj, l2)] = complex(torch.vdot(ket, u @ ket))
    theta_j = cmath.phase(amp[(1, 0)] / amp[(0, 0)])
    theta_2 = cmath.phase(amp[(0, 1)] / amp[(0, 0)])
    options = options or EvolveOptions(store_states=False)
    inputs = process_input_states(2)
    outputs = []
    for ket in inputs:
        rho0 = DensityMatrix.from_ket(space, _lift(ket, space))
        final = evolve_master_equation(rho0, schedule, device, space, options).final_state
        final = apply_virtual_z(apply_virtual_z(final, q_j, -theta_j), q_2, -theta_2)
        outputs.append(qubit_block(final, leakage_limit=CZ_LEAKAGE_LIMIT))
    return inputs, outputs


def simulate_cz_process(device: DeviceConfig, node: str, j: int, options: EvolveOptions=None) -> ProcessMatrix:
    '''Two-qubit process of the qutrit-model CZ on (Q_j, Q_2).'''
    return reconstruct_process(*cz_outputs(device, node, j, options))


class ProcessLibrary:
    '''
    Channels used to execute protocol steps on the six-qubit register, built on first use. A missing channel
    (ideal transfers, ideal CZ) means the ideal gate.
    '''
    def __init__(self, device: DeviceConfig, cz_model: str=CzModel.PROXY, transfer_params: TransferParams=None,
                 ideal_transfers: bool=False, idle: bool=True, cz_fidelity: float=CZ_PROXY_FIDELITY):
        if cz_model not in CzModel.LIST:
            raise ProtocolError(f"Unknown CZ model '{cz_model}'; must be one of {CzModel.LIST}")
        self.device = device
        self.cz_model = cz_model
        self.transfer_params = transfer_params or default_transfer_params(TransferVariant.FULL)
        self.ideal_transfers = ideal_transfers
        self.idle = idle
        self.cz_fidelity = cz_fidelity
        self._cache: dict[tuple, ProcessMatrix] = {}

    def _cached(self, key: tuple, build) -> ProcessMatrix:
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def cz(self, node: str, j: int) -> Optional[ProcessMatrix]:
        if self.cz_model == CzModel.IDEAL:
            return None
        if self.cz_model == CzModel.PROXY:
            return self._cached(("cz-proxy",), lambda: cz_proxy_process(self.cz_fidelity))
        return self._cached(("cz", node, j), lambda: simulate_cz_process(self.device, node, j))

    def transfer(self) -> Optional[ProcessMatrix]:
        if self.ideal_transfers:
            return None
        return self._cached(("st",), lambda: st_process(self.device, self.transfer_params))

    def iswap(self, src: str, dst: str) -> Optional[ProcessMatrix]:
        if self.ideal_transfers:
            return None
        return self._cached(("iswap", src, dst), lambda: iswap_process(self.device, src, dst))


def _cz_binding(sites: Sequence[str]) -> tuple[str, int]:
    node = node_of(sites[0])
    partners = [int(label[1]) for label in sites if label[1] != "2"]
    if node_of(sites[1]) != node or len(partners) != 1:
        raise ProtocolError(f"CZ step must pair Q2 with Q1 or Q3 of one node, got {sites}")
    return node, partners[0]


def run_steps(rho: DensityMatrix, steps: Iterable[ProtocolStep], library: ProcessLibrary) -> DensityMatrix:
    '''
    Executes protocol steps with process matrices: rotations are ideal, CZs use the library channel,
    transfers are an ideal swap followed by the transfer channel on the destination, and idle qubits decay
    freely for the step duration.
    '''
    device = library.device
    for step in steps:
        if step.kind == StepKind.ROTATION:
            rho = apply_unitary(rho, rotation(step.params["axis"], step.params["angle"]), step.sites)
        elif step.kind == StepKind.CZ:
            chi = library.cz(*_cz_binding(step.sites))
            rho = apply_unitary(rho, CZ, step.sites) if chi is None else apply_process(rho, chi, step.sites)
        elif step.kind in (StepKind.ST, StepKind.ISWAP):
            src, dst = step.sites
            rho = apply_unitary(rho, SWAP, step.sites)
            chi = library.transfer() if step.kind == StepKind.ST else library.iswap(src, dst)
            if chi is not None:
                rho = apply_process(rho, chi, [dst])
        elif step.kind == StepKind.IDLE:
            if library.idle:
                for label in step.sites:
                    qubit = device.qubit(label)
                    rho = apply_idle(rho, label, step.duration, qubit.t1, qubit.t_phi)
        else:
            raise ProtocolError(f"Step '{step.kind}' on {step.sites} creates entanglement through the cable and is "
                                f"simulated directly, not as a process")
    return rho


def ground_register() -> DensityMatrix:
    return DensityMatrix.basis(REGISTER)


def ghz_fidelity(rho: DensityMatrix, labels: Sequence[str]) -> float:
    reduced = partial_trace(rho, labels)
    return state_fidelity(reduced, ghz_ket(reduced.space))


@dataclass
class PipelineResult:
    state: DensityMatrix
    fidelity: float


def ghz_prep_state(library: ProcessLibrary, node: str=Node.A) -> PipelineResult:
    '''Three-qubit GHZ state of a node prepared on the register.'''
    rho = run_steps(ground_register(), ghz_prep_steps(node, library.device), library)
    fidelity = ghz_fidelity(rho, [qubit_label(i, node) for i in (1, 2, 3)])
    logger.info(f"GHZ preparation on node {node}: fidelity {fidelity:.4f}")
    return PipelineResult(rho, fidelity)


def ghz_transfer_state(library: ProcessLibrary, rho_prep: DensityMatrix=None) -> PipelineResult:
    '''Sends a node-A GHZ state to node B through three transfers; fidelity is taken on node B.'''
    if rho_prep is None:
        rho_prep = ghz_prep_state(library, Node.A).state
    steps = schedule_ghz_transfer(library.device, library.transfer_params)
    rho = run_steps(rho_prep, steps, library)
    fidelity = ghz_fidelity(rho, [qubit_label(i, Node.B) for i in (1, 2, 3)])
    logger.info(f"GHZ transfer to node B: fidelity {fidelity:.4f}")
    return PipelineResult(rho, fidelity)


@dataclass
class BellResult:
    state: DensityMatrix
    fidelity: float
    phase: float


def bell_state(device: DeviceConfig, params: TransferParams=None, options: EvolveOptions=None) -> BellResult:
    '''
    Remote Bell pair from a half transfer: Q2A excited, ST/2 leaves (a|eg> + b|ge>), an X on Q2B turns it into
    a|ee> + b|gg>, and a calibrated virtual Z on Q2B aligns it with (|gg> + |ee>)/sqrt(2).
    '''
    params = params or default_transfer_params(TransferVariant.HALF)
    options = options or transfer_options(device, params, store_states=False)
    traj = simulate_state_transfer(device, params, TransferVariant.HALF, options=options)
    pair = partial_trace(traj.final_state, ["Q2A", "Q2B"])
    pair = apply_unitary(pair, rotation(Axis.X, math.pi), ["Q2B"])
    target = (basis_ket(pair.space) + basis_ket(pair.space, {"Q2A": 1, "Q2B": 1})) / math.sqrt(2)
    phase, pair = calibrate_phase(pair, target, "Q2B")
    fidelity = state_fidelity(pair, target)
    logger.info(f"Bell state from half transfer: fidelity {fidelity:.4f}")
    return BellResult(pair, fidelity, phase)


@dataclass
class NetworkResult:
    states: dict[str, DensityMatrix]
    fidelities: dict[str, float]


NETWORK_STAGE_QUBITS = {
    "I": ["Q2A", "Q2B"],
    "II": ["Q1A", "Q2A", "Q1B", "Q2B"],
    "III": QUBIT_LABELS,
}


def network_ghz_states(library: ProcessLibrary, params: TransferParams=None, bell: BellResult=None) -> NetworkResult:
    '''
    Two-node GHZ protocol: the half-transfer Bell pair (stage I), extended to four qubits (stage II) and to all
    six (stage III) with a CNOT on each node per stage.
    '''
    device = library.device
    params = params or default_transfer_params(TransferVariant.HALF)
    bell = bell or bell_state(device, params)
    steps = schedule_network_ghz(device, params)
    rho = _place(bell.state.matrix, ["Q2A", "Q2B"], REGISTER)
    states = {"I": rho}
    for stage in ["II", "III"]:
        rho = run_steps(rho, [s for s in steps if s.params.get("stage") == stage], library)
        states[stage] = rho
    fidelities = {stage: ghz_fidelity(states[stage], NETWORK_STAGE_QUBITS[stage]) for stage in states}
    logger.info("Network GHZ fidelities: " + ", ".join(f"{k} = {v:.4f}" for k, v in fidelities.items()))
    return NetworkResult(states, fidelities)


def ideal_cz_process() -> ProcessMatrix:
    return chi_from_unitary(CZ)
