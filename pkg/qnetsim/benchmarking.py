from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union
import math

import numpy as np
import torch
from torch import Tensor
from scipy.optimize import curve_fit

from .device import DeviceConfig
from .hilbert import DTYPE, PAULI
from .logger import logger
from .utils_channels import (CZ, Axis, amplitude_damping_kraus, depolarizing_chi, idle_kraus, kraus_from_chi,
                             rotation)
from .utils_io import SCHEMA_VERSION, make_generator, write_csv


# linear-XEB decay per cycle caused by single-qubit depolarizing strength lambda on one of two qubits
XEB_SINGLE_QUBIT_WEIGHT = 0.8


class BenchmarkError(RuntimeError):
    pass


class Gen:
    I = "I"
    X = "X"
    Y = "Y"
    X2 = "X/2"
    X2M = "-X/2"
    Y2 = "Y/2"
    Y2M = "-Y/2"
    W2 = "W/2"
    W2M = "-W/2"
    CLIFFORD_GENERATORS = [X2, X2M, Y2, Y2M, X, Y]


def _w_rotation(angle: float) -> Tensor:
    # rotation about (x + y)/sqrt(2)
    w = (PAULI["X"] + PAULI["Y"]) / math.sqrt(2)
    return math.cos(angle / 2) * torch.eye(2, dtype=DTYPE) - 1j * math.sin(angle / 2) * w


GATE_UNITARIES = {
    Gen.I: torch.eye(2, dtype=DTYPE),
    Gen.X: rotation(Axis.X, math.pi),
    Gen.Y: rotation(Axis.Y, math.pi),
    Gen.X2: rotation(Axis.X, math.pi / 2),
    Gen.X2M: rotation(Axis.X, -math.pi / 2),
    Gen.Y2: rotation(Axis.Y, math.pi / 2),
    Gen.Y2M: rotation(Axis.Y, -math.pi / 2),
    Gen.W2: _w_rotation(math.pi / 2),
    Gen.W2M: _w_rotation(-math.pi / 2),
}
XEB_SINGLE_QUBIT_GATES = [Gen.X2, Gen.X2M, Gen.Y2, Gen.Y2M, Gen.W2, Gen.W2M]


@dataclass(frozen=True)
class CliffordElement:
    index: int
    unitary: Tensor
    # generators in time order; empty for the identity
    decomposition: tuple[str, ...]


def same_up_to_phase(a: Tensor, b: Tensor, tol: float=1e-10) -> bool:
    d = a.shape[0]
    return abs(abs(complex(torch.trace(a.mH @ b))) - d) < tol


def decomposition_unitary(decomposition: Sequence[str]) -> Tensor:
    u = torch.eye(2, dtype=DTYPE)
    for name in decomposition:
        u = GATE_UNITARIES[name] @ u
    return u


def clifford_group_1q(generators: Sequence[str]=Gen.CLIFFORD_GENERATORS) -> list[CliffordElement]:
    '''
    The 24 single-qubit Cliffords by breadth-first search over products of the generators, so each element
    carries a shortest decomposition. Elements equal up to global phase are merged.
    '''
    found: list[tuple[Tensor, tuple[str, ...]]] = [(torch.eye(2, dtype=DTYPE), ())]
    frontier = list(found)
    while len(frontier) > 0:
        next_frontier = []
        for u, decomposition in frontier:
            for name in generators:
                candidate = GATE_UNITARIES[name] @ u
                if any(same_up_to_phase(candidate, known) for known, _ in found):
                    continue
                entry = (candidate, decomposition + (name,))
                found.append(entry)
                next_frontier.append(entry)
        frontier = next_frontier
        if len(found) > 24:
            break
    if len(found) != 24:
        raise BenchmarkError(f"Generators {list(generators)} produced {len(found)} elements, expected 24 Cliffords")
    return [CliffordElement(index=i, unitary=u, decomposition=d) for i, (u, d) in enumerate(found)]


def find_clifford(u: Tensor, group: Sequence[CliffordElement]) -> CliffordElement:
    for element in group:
        if same_up_to_phase(u, element.unitary, tol=1e-8):
            return element
    raise BenchmarkError("Unitary is not a Clifford element of the given group")


class ErrorKind:
    DEPOLARIZING = "depolarizing"
    AMPLITUDE_DAMPING = "amplitude-damping"
    FROM_LINDBLAD = "from-lindblad"
    LIST = [DEPOLARIZING, AMPLITUDE_DAMPING, FROM_LINDBLAD]


@dataclass(frozen=True)
class ErrorChannelSpec:
    '''
    Noise injected after each gate. depolarizing: rho -> (1 - strength) rho + strength I/d.
    amplitude-damping: decay probability strength per qubit. from-lindblad: idle decay of a device qubit
    over duration seconds.
    '''
    kind: str = ErrorKind.DEPOLARIZING
    strength: float = 0.0
    qubit: Optional[str] = None
    duration: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ErrorKind.LIST:
            raise BenchmarkError(f"Unknown error kind '{self.kind}'; must be one of {ErrorKind.LIST}")
        if self.kind in (ErrorKind.DEPOLARIZING, ErrorKind.AMPLITUDE_DAMPING) and not 0.0 <= self.strength <= 1.0:
            raise BenchmarkError(f"Error strength must be in [0, 1], got {self.strength}")
        if self.kind == ErrorKind.FROM_LINDBLAD and (self.qubit is None or self.duration is None or self.duration < 0):
            raise BenchmarkError("from-lindblad errors need a device qubit label and a duration >= 0")

    def kraus(self, n_qubits: int=1, device: DeviceConfig=None) -> list[Tensor]:
        if self.kind == ErrorKind.DEPOLARIZING:
            return kraus_from_chi(depolarizing_chi(n_qubits, self.strength))
        if self.kind == ErrorKind.AMPLITUDE_DAMPING:
            single = amplitude_damping_kraus(self.strength)
        else:
            if device is None:
                raise BenchmarkError("from-lindblad errors need a device")
            q = device.qubit(self.qubit)
            single = idle_kraus(self.duration, q.t1, q.t_phi)
        kraus = single
        for _ in range(n_qubits - 1):
            kraus = [torch.kron(a, b) for a in kraus for b in single]
        return kraus


def depolarizing_for_average_fidelity(average_fidelity: float, dim: int=2) -> float:
    '''Depolarizing strength whose average gate fidelity is the given value.'''
    return (1 - average_fidelity) * dim / (dim - 1)


def superoperator(kraus: Sequence[Tensor], unitary: Tensor=None) -> Tensor:
    # row-major vectorization: vec(K rho K^dag) = (K kron conj(K)) vec(rho)
    ops = [k @ unitary for k in kraus] if unitary is not None else list(kraus)
    return sum(torch.kron(k, k.conj()) for k in ops)


@dataclass
class RBResult:
    lengths: list[int]
    return_probabilities: list[list[float]]
    means: list[float]
    stds: list[float]
    a: float
    p: float
    b: float
    error_per_clifford: float = field(init=False)
    average_fidelity: float = field(init=False)

    def __post_init__(self):
        self.error_per_clifford = (1 - self.p) / 2
        self.average_fidelity = 1 - self.error_per_clifford


def _rb_decay(m, a, p, b):
    return a * np.power(p, m) + b


def fit_rb_decay(lengths: Sequence[int], means: Sequence[float]) -> tuple[float, float, float]:
    '''Fits A p^m + B; a flat curve at 1 is the noiseless limit p = 1.'''
    means = np.asarray(means, dtype=np.float64)
    if np.max(np.abs(means - 1.0)) < 1e-10:
        return 1.0, 1.0, 0.0
    try:
        (a, p, b), _ = curve_fit(_rb_decay, np.asarray(lengths, dtype=np.float64), means, p0=(0.5, 0.99, 0.5),
                                 bounds=([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]), maxfev=10000)
    except (RuntimeError, ValueError) as e:
        raise BenchmarkError(f"RB decay fit did not converge: {e}")
    return float(a), float(p), float(b)


def rb_run(lengths: Sequence[int], n_sequences: int, error: ErrorChannelSpec, seed: int, device: DeviceConfig=None,
           group: Sequence[CliffordElement]=None) -> RBResult:
    '''
    Single-qubit randomized benchmarking: m random Cliffords plus the recovery Clifford, each followed by one
    error channel, starting from |g>. Sequence s of length index i draws from the seed derived from (seed, i, s).
    '''
    lengths = [int(m) for m in lengths]
    if len(lengths) == 0 or min(lengths) < 1:
        raise BenchmarkError(f"RB lengths must be >= 1, got {lengths}")
    if n_sequences < 10:
        raise BenchmarkError(f"RB needs at least 10 sequences per length, got {n_sequences}")
    group = group or clifford_group_1q()
    kraus = error.kraus(1, device)
    channels = [superoperator(kraus, element.unitary) for element in group]
    start = torch.tensor([1, 0, 0, 0], dtype=DTYPE)
    all_probs, means, stds = [], [], []
    for i, m in enumerate(lengths):
        probs = []
        for s in range(n_sequences):
            indices = torch.randint(0, len(group), (m,), generator=make_generator(seed, i, s)).tolist()
            state = start
            total = torch.eye(2, dtype=DTYPE)
            for k in indices:
                state = channels[k] @ state
                total = group[k].unitary @ total
            recovery = find_clifford(total.mH, group)
            state = channels[recovery.index] @ state
            probs.append(float(state[0].real))
        all_probs.append(probs)
        means.append(float(np.mean(probs)))
        stds.append(float(np.std(probs)))
    a, p, b = fit_rb_decay(lengths, means)
    result = RBResult(lengths=lengths, return_probabilities=all_probs, means=means, stds=stds, a=a, p=p, b=b)
    logger.info(f"RB: p = {p:.6f}, average Clifford fidelity {result.average_fidelity:.5f}")
    return result


@dataclass
class XEBResult:
    depths: list[int]
    fidelities: list[float]
    a: float
    p: float
    cycle_error: float = field(init=False)

    def __post_init__(self):
        self.cycle_error = 1 - self.p


def _apply_kraus_matrix(rho: Tensor, kraus: Sequence[Tensor]) -> Tensor:
    return sum(k @ rho @ k.mH for k in kraus)


def _xeb_decay(d, a, p):
    return a * np.power(p, d)


def xeb_run(n_cycles: Sequence[int], n_circuits: int, two_qubit_error: ErrorChannelSpec, seed: int,
            single_qubit_errors: Sequence[ErrorChannelSpec]=None, device: DeviceConfig=None) -> XEBResult:
    '''
    Two-qubit linear cross-entropy benchmarking. A cycle is a random gate from {+-X/2, +-Y/2, +-W/2} on each qubit,
    then CZ, then the two-qubit error; a final random single-qubit layer precedes readout. Per depth the fidelity
    is sum_c (D sum p_noisy p_ideal - 1) / sum_c (D sum p_ideal^2 - 1), then A p^d is fitted.

    Args:
        single_qubit_errors: optional error after each single-qubit layer, one ErrorChannelSpec per qubit.
    '''
    depths = [int(d) for d in n_cycles]
    if n_circuits < 2 or len(depths) < 2:
        raise BenchmarkError(f"XEB needs at least 2 circuits and 2 depths, got {n_circuits} circuits and depths {depths}")
    dim = 4
    cz_kraus = two_qubit_error.kraus(2, device)
    sq_kraus = []
    if single_qubit_errors is not None:
        if len(single_qubit_errors) != 2:
            raise BenchmarkError(f"XEB needs one single-qubit error per qubit, got {len(single_qubit_errors)}")
        eye = torch.eye(2, dtype=DTYPE)
        first, second = (spec.kraus(1, device) for spec in single_qubit_errors)
        sq_kraus = [[torch.kron(k, eye) for k in first], [torch.kron(eye, k) for k in second]]
    gates = [GATE_UNITARIES[name] for name in XEB_SINGLE_QUBIT_GATES]

    def single_layer(generator: torch.Generator) -> Tensor:
        a, b = torch.randint(0, len(gates), (2,), generator=generator).tolist()
        return torch.kron(gates[a], gates[b])

    def sq_noise(rho: Tensor) -> Tensor:
        for kraus in sq_kraus:
            rho = _apply_kraus_matrix(rho, kraus)
        return rho

    fidelities = []
    for i, depth in enumerate(depths):
        numerator, denominator = 0.0, 0.0
        for c in range(n_circuits):
            generator = make_generator(seed, i, c)
            psi = torch.zeros(dim, dtype=DTYPE)
            psi[0] = 1.0
            rho = torch.outer(psi, psi.conj())
            for _ in range(depth):
                layer = single_layer(generator)
                psi = CZ @ (layer @ psi)
                rho = sq_noise(layer @ rho @ layer.mH)
                rho = CZ @ rho @ CZ
                rho = _apply_kraus_matrix(rho, cz_kraus)
            u = single_layer(generator)
            psi = u @ psi
            rho = sq_noise(u @ rho @ u.mH)
            p_ideal = psi.abs()**2
            p_noisy = torch.diagonal(rho).real
            numerator += float(dim * (p_noisy * p_ideal).sum() - 1)
            denominator += float(dim * (p_ideal**2).sum() - 1)
        fidelities.append(numerator / denominator)
    fid = np.asarray(fidelities, dtype=np.float64)
    try:
        (a, p), _ = curve_fit(_xeb_decay, np.asarray(depths, dtype=np.float64), fid, p0=(1.0, 0.95),
                              bounds=([0.0, 0.0], [1.5, 1.0]), maxfev=10000)
    except (RuntimeError, ValueError) as e:
        raise BenchmarkError(f"XEB decay fit did not converge: {e}")
    result = XEBResult(depths=depths, fidelities=fidelities, a=float(a), p=float(p))
    logger.info(f"XEB: error per cycle {result.cycle_error:.4f}")
    return result


def cz_error_from_xeb(cycle_error: float, single_qubit_errors: Sequence[float]) -> float:
    '''
    CZ error left after removing the single-qubit layer's share of the XEB cycle decay; single_qubit_errors are
    per-qubit depolarizing strengths.
    '''
    remaining = 1 - cycle_error
    for strength in single_qubit_errors:
        remaining /= 1 - XEB_SINGLE_QUBIT_WEIGHT * strength
    return 1 - remaining


def write_rb_csv(path: Union[str, Path], result: RBResult):
    write_csv(path, ["length", "mean_return_prob", "std"], zip(result.lengths, result.means, result.stds))


def rb_summary(result: RBResult) -> dict:
    return {"schema_version": SCHEMA_VERSION, "a": result.a, "p": result.p, "b": result.b,
            "error_per_clifford": result.error_per_clifford, "average_fidelity": result.average_fidelity}


def write_xeb_csv(path: Union[str, Path], result: XEBResult):
    write_csv(path, ["cycles", "xeb_fidelity"], zip(result.depths, result.fidelities))


def xeb_summary(result: XEBResult) -> dict:
    return {"schema_version": SCHEMA_VERSION, "a": result.a, "p": result.p, "cycle_error": result.cycle_error}
