from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union
import itertools
import math

import torch
from torch import Tensor
from einops import rearrange

from .device import QubitConfig
from .hilbert import (DTYPE, PAULI, DensityMatrix, HilbertSpace, ProcessMatrix, SiteKind, as_matrix, kron_all,
                      pauli_labels, pauli_string, project_to_physical)
from .logger import logger
from .utils_channels import Axis, rotation
from .utils_io import derive_seed, make_generator, write_csv


LEAKAGE_LIMIT = 1e-3
DEFICIT_WARNING = 0.05


class TomographyError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    '''
    Readout confusion of one qubit, column-stochastic: column = true state, row = observed outcome,
    [[F_g, 1 - F_e], [1 - F_g, F_e]].
    '''
    fg: float = 1.0
    fe: float = 1.0

    def __post_init__(self):
        for name in ["fg", "fe"]:
            value = getattr(self, name)
            if not 0.5 < value <= 1.0:
                raise TomographyError(f"Readout fidelity {name} must be in (0.5, 1], got {value}")

    @classmethod
    def from_qubit(cls, qubit: QubitConfig) -> 'ConfusionMatrix':
        return cls(fg=qubit.readout_fg, fe=qubit.readout_fe)

    @property
    def matrix(self) -> Tensor:
        return torch.tensor([[self.fg, 1 - self.fe], [1 - self.fg, self.fe]], dtype=torch.float64)

    def inverse(self) -> Tensor:
        det = self.fg + self.fe - 1
        if abs(det) < 1e-12:
            raise TomographyError(f"Confusion matrix with fg={self.fg}, fe={self.fe} is singular")
        return torch.linalg.inv(self.matrix)


class PreRotation:
    I = "I"
    X2 = "X/2"
    Y2 = "Y/2"
    LIST = [I, X2, Y2]


_PRE_ROTATION_UNITARY = {
    PreRotation.I: torch.eye(2, dtype=DTYPE),
    PreRotation.X2: rotation(Axis.X, math.pi / 2),
    PreRotation.Y2: rotation(Axis.Y, math.pi / 2),
}


def _measured_pauli(pre: str) -> tuple[str, float]:
    # a Z measurement after R measures R^dag Z R = sign * P
    op = _PRE_ROTATION_UNITARY[pre].mH @ PAULI["Z"] @ _PRE_ROTATION_UNITARY[pre]
    for label in ["X", "Y", "Z"]:
        overlap = complex(torch.trace(PAULI[label] @ op)) / 2
        if abs(abs(overlap) - 1) < 1e-9:
            return label, overlap.real
    raise TomographyError(f"Pre-rotation {pre} does not map Z onto a Pauli operator")


_MEASURED_PAULI = {pre: _measured_pauli(pre) for pre in PreRotation.LIST}


@dataclass(frozen=True)
class TomographySetting:
    rotations: tuple[str, ...]

    def __post_init__(self):
        for r in self.rotations:
            if r not in PreRotation.LIST:
                raise TomographyError(f"Unknown pre-rotation '{r}'; must be one of {PreRotation.LIST}")

    @property
    def n_qubits(self) -> int:
        return len(self.rotations)

    def unitary(self) -> Tensor:
        return kron_all(_PRE_ROTATION_UNITARY[r] for r in self.rotations)

    def __str__(self):
        return ",".join(self.rotations)


def tomography_settings(n_qubits: int) -> list[TomographySetting]:
    '''All 3^k settings, first qubit varying slowest.'''
    if n_qubits < 1:
        raise TomographyError(f"Tomography needs at least one qubit, got {n_qubits}")
    return [TomographySetting(tuple(r)) for r in itertools.product(PreRotation.LIST, repeat=n_qubits)]


@dataclass
class ShotRecord:
    setting_index: int
    counts: Tensor
    shots: int

    def __post_init__(self):
        total = int(self.counts.sum())
        if total != self.shots:
            raise TomographyError(f"Setting {self.setting_index}: counts sum to {total}, expected {self.shots} shots")

    def probabilities(self) -> Tensor:
        return self.counts.to(torch.float64) / self.shots


@dataclass
class Mitigation:
    probabilities: Tensor
    deficit: float


def qubit_block(rho: Union[DensityMatrix, Tensor], space: HilbertSpace=None, leakage_limit: float=LEAKAGE_LIMIT) -> Tensor:
    '''
    Restricts a state to the {g, e} levels of every site. Sites with a third level must hold at most
    leakage_limit population there; the block is renormalized. Leakage above LEAKAGE_LIMIT but within a
    looser leakage_limit is dropped with a warning.
    '''
    if isinstance(rho, DensityMatrix):
        space = rho.space
    matrix = as_matrix(rho)
    if space is None or all(d == 2 for d in space.dims):
        return matrix
    for site in space.sites:
        if site.kind != SiteKind.QUBIT:
            raise TomographyError(f"Readout is defined on qubit sites only; '{site.label}' is a {site.kind}")
    n = len(space)
    t = matrix.reshape(list(space.dims) * 2)
    diag = torch.diagonal(matrix).real.reshape(space.dims)
    for i, site in enumerate(space.sites):
        if site.dim > 2:
            leak = float(diag.movedim(i, 0)[2:].sum())
            if leak > leakage_limit:
                raise TomographyError(f"Site '{site.label}' has {leak:.2e} population above |e>, limit {leakage_limit:.0e}")
            if leak > LEAKAGE_LIMIT:
                logger.warning(f"Truncating {leak:.2e} population above |e> on '{site.label}'")
    index = tuple([slice(0, 2)] * (2 * n))
    block = t[index].reshape(2**n, 2**n)
    return block / torch.trace(block).real


def ideal_probabilities(rho: Tensor, setting: TomographySetting) -> Tensor:
    rho = as_matrix(rho)
    if rho.shape[0] != 2**setting.n_qubits:
        raise TomographyError(f"State of dimension {rho.shape[0]} does not match a {setting.n_qubits}-qubit setting")
    u = setting.unitary()
    probs = torch.diagonal(u @ rho @ u.mH).real.clamp(min=0.0)
    return probs / probs.sum()


def _apply_per_qubit(probs: Tensor, mats: Sequence[Tensor]) -> Tensor:
    k = len(mats)
    t = probs.reshape([2] * k)
    for i, m in enumerate(mats):
        t = torch.movedim(torch.tensordot(m, t, dims=([1], [i])), 0, i)
    return t.reshape(-1)


def apply_confusion(probs: Tensor, confusions: Sequence[ConfusionMatrix]) -> Tensor:
    return _apply_per_qubit(probs.to(torch.float64), [c.matrix for c in confusions])


def simulate_readout(rho: Union[DensityMatrix, Tensor], setting: TomographySetting, confusions: Sequence[ConfusionMatrix],
                     shots: int, seed: int, setting_index: int=0) -> ShotRecord:
    '''
    Pre-rotates, reads out in the Z basis through the per-qubit confusion and samples shots outcomes.
    Outcome index b has the first qubit as most significant bit; the same seed gives the same counts.
    '''
    if shots <= 0:
        raise TomographyError(f"shots must be > 0, got {shots}")
    matrix = qubit_block(rho)
    if len(confusions) != setting.n_qubits:
        raise TomographyError(f"Got {len(confusions)} confusion matrices for a {setting.n_qubits}-qubit setting")
    observed = apply_confusion(ideal_probabilities(matrix, setting), confusions)
    samples = torch.multinomial(observed.clamp(min=0.0), shots, replacement=True, generator=make_generator(seed))
    counts = torch.bincount(samples, minlength=observed.numel())
    return ShotRecord(setting_index=setting_index, counts=counts, shots=shots)


def mitigate_readout(probs: Tensor, confusions: Sequence[ConfusionMatrix]) -> Mitigation:
    '''Inverts the per-qubit confusion, clips negative probabilities and renormalizes.'''
    corrected = _apply_per_qubit(probs.to(torch.float64), [c.inverse() for c in confusions])
    deficit = float(-corrected.clamp(max=0.0).sum())
    clipped = corrected.clamp(min=0.0)
    total = float(clipped.sum())
    if total <= 0:
        raise TomographyError("Mitigated distribution has no positive weight")
    if deficit > DEFICIT_WARNING:
        logger.warning(f"Readout mitigation clipped {deficit:.3f} of negative probability")
    else:
        logger.debug(f"Readout mitigation deficit {deficit:.3e}")
    return Mitigation(probabilities=clipped / total, deficit=deficit)


def pauli_expectations(probabilities: Sequence[Tensor], n_qubits: int) -> dict[str, float]:
    '''
    Pauli expectation values from the outcome distributions of all 3^k settings. Every non-empty subset of
    qubits of every setting estimates one Pauli string; repeated estimates are averaged.
    '''
    settings = tomography_settings(n_qubits)
    sums: dict[str, float] = {"I" * n_qubits: 0.0}
    counts: dict[str, int] = {"I" * n_qubits: 0}
    bits = torch.tensor(list(itertools.product([0, 1], repeat=n_qubits)), dtype=torch.float64)
    signs = 1.0 - 2.0 * bits
    for setting, probs in zip(settings, probabilities):
        measured = [_MEASURED_PAULI[r] for r in setting.rotations]
        for subset in itertools.product([False, True], repeat=n_qubits):
            if not any(subset):
                continue
            label = "".join(measured[i][0] if use else "I" for i, use in enumerate(subset))
            sign = math.prod(measured[i][1] for i, use in enumerate(subset) if use)
            parity = torch.prod(signs[:, list(subset)], dim=1) if n_qubits > 1 else signs[:, 0]
            value = sign * float((parity * probs.to(torch.float64)).sum())
            sums[label] = sums.get(label, 0.0) + value
            counts[label] = counts.get(label, 0) + 1
    expectations = {label: sums[label] / counts[label] for label in sums if counts[label] > 0}
    expectations["I" * n_qubits] = 1.0
    return expectations


def reconstruct_density(data: Sequence[Union[Tensor, ShotRecord]], n_qubits: int, space: HilbertSpace=None,
                        confusions: Sequence[ConfusionMatrix]=None) -> DensityMatrix:
    '''
    Linear inversion in the Pauli basis followed by projection onto physical states.

    Args:
        data: one outcome distribution (or ShotRecord) per setting of tomography_settings(n_qubits).
        n_qubits: number of measured qubits (at most 6).
        space: space of the result; k anonymous qubits by default.
        confusions: when given, shot data is readout-mitigated with them first.
    '''
    if not 1 <= n_qubits <= 6:
        raise TomographyError(f"State tomography supports 1 to 6 qubits, got {n_qubits}")
    n_settings = 3**n_qubits
    data = list(data)
    if len(data) > 0 and isinstance(data[0], ShotRecord):
        indices = sorted(r.setting_index for r in data)
        if indices != list(range(n_settings)):
            raise TomographyError(f"Incomplete settings: need each of 0..{n_settings - 1} once, got {len(indices)} records")
        shots = {r.shots for r in data}
        if len(shots) != 1:
            raise TomographyError(f"Inconsistent shot totals across settings: {sorted(shots)}")
        records = sorted(data, key=lambda r: r.setting_index)
        probabilities = [r.probabilities() for r in records]
    else:
        if len(data) != n_settings:
            raise TomographyError(f"Incomplete settings: need {n_settings} distributions, got {len(data)}")
        probabilities = [torch.as_tensor(p, dtype=torch.float64) for p in data]
    if confusions is not None:
        probabilities = [mitigate_readout(p, confusions).probabilities for p in probabilities]
    expectations = pauli_expectations(probabilities, n_qubits)
    dim = 2**n_qubits
    rho = torch.zeros(dim, dim, dtype=DTYPE)
    for label, value in expectations.items():
        rho = rho + value * pauli_string(label)
    rho = rho / dim
    if space is None:
        space = HilbertSpace.qubits([f"q{i}" for i in range(n_qubits)])
    return project_to_physical(0.5 * (rho + rho.mH), space=space)


def state_tomography(rho: Union[DensityMatrix, Tensor], confusions: Sequence[ConfusionMatrix], shots: Optional[int],
                     seed: int=0, space: HilbertSpace=None) -> DensityMatrix:
    '''
    Simulated tomography of rho: every setting read out with the given confusion, mitigated and reconstructed.
    shots=None uses exact outcome probabilities. Setting i draws from seed derived from (seed, i).
    '''
    matrix = qubit_block(rho)
    n_qubits = int(round(math.log2(matrix.shape[0])))
    settings = tomography_settings(n_qubits)
    if shots is None:
        data = [apply_confusion(ideal_probabilities(matrix, s), confusions) for s in settings]
    else:
        data = [simulate_readout(matrix, s, confusions, shots, derive_seed(seed, i), setting_index=i) for i, s in enumerate(settings)]
    if space is None and isinstance(rho, DensityMatrix) and all(d == 2 for d in rho.space.dims):
        space = rho.space
    return reconstruct_density(data, n_qubits, space=space, confusions=confusions)


def process_input_states(n_qubits: int) -> list[Tensor]:
    '''|g>, (|g> - i|e>)/sqrt(2), (|g> + |e>)/sqrt(2), |e>; tensor products of these for two qubits.'''
    s = 1 / math.sqrt(2)
    single = [
        torch.tensor([1, 0], dtype=DTYPE),
        torch.tensor([s, -1j * s], dtype=DTYPE),
        torch.tensor([s, s], dtype=DTYPE),
        torch.tensor([0, 1], dtype=DTYPE),
    ]
    if n_qubits == 1:
        return single
    if n_qubits == 2:
        return [torch.kron(a, b) for a in single for b in single]
    raise TomographyError(f"Process tomography supports 1 or 2 qubits, got {n_qubits}")


def reconstruct_process(inputs: Sequence[Union[Tensor, DensityMatrix]], outputs: Sequence[Union[Tensor, DensityMatrix]]) -> ProcessMatrix:
    '''
    Least-squares chi matrix from input/output pairs: E(rho_in) = sum_mn chi_mn P_m rho_in P_n, projected to a
    Hermitian, positive, unit-trace process.
    '''
    inputs = [as_matrix(r) for r in inputs]
    outputs = [as_matrix(r) for r in outputs]
    if len(inputs) != len(outputs) or len(inputs) == 0:
        raise TomographyError(f"Need matching input/output lists, got {len(inputs)} inputs and {len(outputs)} outputs")
    inputs = [torch.outer(r, r.conj()) if r.ndim == 1 else r for r in inputs]
    dim = inputs[0].shape[0]
    n_qubits = {2: 1, 4: 2}.get(dim, None)
    if n_qubits is None:
        raise TomographyError(f"Process tomography supports 1 or 2 qubits, got dimension {dim}")
    paulis = torch.stack([pauli_string(label) for label in pauli_labels(n_qubits)])
    rows = []
    for rho in inputs:
        # (m, n, a, b) = (P_m rho P_n)_ab
        terms = torch.einsum("mij,jk,nkl->mnil", paulis, rho, paulis)
        rows.append(rearrange(terms, "m n a b -> (a b) (m n)"))
    a_mat = torch.cat(rows, dim=0)
    b_vec = torch.cat([rearrange(out, "a b -> (a b)") for out in outputs])
    n_unknowns = a_mat.shape[1]
    rank = int(torch.linalg.matrix_rank(a_mat))
    if rank < n_unknowns:
        raise TomographyError(f"Input states are rank deficient: rank {rank} < {n_unknowns}")
    solution = torch.linalg.lstsq(a_mat, b_vec.unsqueeze(1)).solution.squeeze(1)
    chi = rearrange(solution, "(m n) -> m n", m=4**n_qubits)
    chi = 0.5 * (chi + chi.mH)
    return project_to_physical(chi, as_process=True)


def write_shot_records(path: Union[str, Path], records: Sequence[ShotRecord], n_qubits: int):
    rows = []
    for record in records:
        for outcome, count in enumerate(record.counts.tolist()):
            rows.append((record.setting_index, format(outcome, f"0{n_qubits}b"), int(count)))
    write_csv(path, ["setting", "outcome", "count"], rows)
