from typing import Iterable, Union
import math

import torch
from torch import Tensor

from .hilbert import (DTYPE, DensityMatrix, HilbertError, ProcessMatrix, embed_on_sites, pauli_labels, pauli_string,
                      as_matrix)


class Axis:
    X = "x"
    Y = "y"
    Z = "z"
    LIST = [X, Y, Z]


_AXIS_PAULI = {Axis.X: "X", Axis.Y: "Y", Axis.Z: "Z"}


def rotation(axis: str, angle: float, dim: int=2) -> Tensor:
    '''exp(-i angle/2 sigma_axis) on the g/e levels; an |f> level (dim=3) is left untouched.'''
    if axis not in Axis.LIST:
        raise HilbertError(f"Unknown rotation axis '{axis}'; must be one of {Axis.LIST}.")
    sigma = pauli_string(_AXIS_PAULI[axis])
    u2 = math.cos(angle / 2) * torch.eye(2, dtype=DTYPE) - 1j * math.sin(angle / 2) * sigma
    if dim == 2:
        return u2
    u = torch.eye(dim, dtype=DTYPE)
    u[:2, :2] = u2
    return u


CZ = torch.diag(torch.tensor([1, 1, 1, -1], dtype=DTYPE))
SWAP = torch.tensor([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=DTYPE)


def cnot_from_cz() -> Tensor:
    # control first, target second: Y/2(target) . CZ . -Y/2(target)
    eye = torch.eye(2, dtype=DTYPE)
    return torch.kron(eye, rotation(Axis.Y, math.pi / 2)) @ CZ @ torch.kron(eye, rotation(Axis.Y, -math.pi / 2))


def _pauli_coefficients(op: Tensor, n_qubits: int) -> Tensor:
    dim = 2**n_qubits
    return torch.stack([torch.trace(pauli_string(labels).mH @ op) / dim for labels in pauli_labels(n_qubits)])


def _n_qubits_of(dim: int) -> int:
    n = int(round(math.log2(dim)))
    if 2**n != dim or n not in (1, 2):
        raise HilbertError(f"Expected a 1- or 2-qubit operator, got dimension {dim}.")
    return n


def chi_from_kraus(kraus: Iterable[Tensor]) -> ProcessMatrix:
    chi = None
    for k in kraus:
        k = as_matrix(k)
        c = _pauli_coefficients(k, _n_qubits_of(k.shape[0]))
        term = torch.outer(c, c.conj())
        chi = term if chi is None else chi + term
    return ProcessMatrix(0.5 * (chi + chi.mH))


def chi_from_unitary(u: Tensor) -> ProcessMatrix:
    return chi_from_kraus([u])


def kraus_from_chi(chi: ProcessMatrix, cutoff: float=1e-14) -> list[Tensor]:
    labels = pauli_labels(chi.n_qubits)
    paulis = torch.stack([pauli_string(label) for label in labels])
    eigenvalues, eigenvectors = torch.linalg.eigh(0.5 * (chi.chi + chi.chi.mH))
    kraus = []
    for lam, vec in zip(eigenvalues.tolist(), eigenvectors.T):
        if lam <= cutoff:
            continue
        kraus.append(math.sqrt(lam) * torch.einsum("m,mij->ij", vec, paulis))
    return kraus


def depolarizing_chi(n_qubits: int, p: float, unitary: Tensor=None) -> ProcessMatrix:
    '''(1-p) U rho U^dag + p I/d as a chi matrix; U defaults to the identity.'''
    if not 0.0 <= p <= 1.0:
        raise HilbertError(f"Depolarizing strength must be in [0, 1], got {p}.")
    d = 2**n_qubits
    if unitary is None:
        unitary = torch.eye(d, dtype=DTYPE)
    chi = (1 - p) * chi_from_unitary(unitary).chi + (p / d**2) * torch.eye(d**2, dtype=DTYPE)
    return ProcessMatrix(chi)


def apply_kraus(rho: DensityMatrix, kraus: Iterable[Tensor], sites: Iterable[str]) -> DensityMatrix:
    sites = list(sites)
    out = None
    for k in kraus:
        op = embed_on_sites(k, sites, rho.space).matrix
        term = op @ rho.matrix @ op.mH
        out = term if out is None else out + term
    return DensityMatrix(rho.space, 0.5 * (out + out.mH), validate=False)


def apply_unitary(rho: DensityMatrix, u: Tensor, sites: Iterable[str]) -> DensityMatrix:
    return apply_kraus(rho, [u], sites)


def apply_process(rho: DensityMatrix, chi: ProcessMatrix, sites: Iterable[str]) -> DensityMatrix:
    '''Applies the channel described by chi to the given qubit sites (in chi's qubit order).'''
    sites = list(sites)
    if len(sites) != chi.n_qubits:
        raise HilbertError(f"Process on {chi.n_qubits} qubit(s) cannot act on sites {sites}.")
    for label in sites:
        if rho.space.site(label).dim != 2:
            raise HilbertError(f"apply_process needs two-level sites; '{label}' has dim {rho.space.site(label).dim}.")
    return apply_kraus(rho, kraus_from_chi(chi), sites)


def amplitude_damping_kraus(gamma: float) -> list[Tensor]:
    k0 = torch.tensor([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=DTYPE)
    k1 = torch.tensor([[0, math.sqrt(gamma)], [0, 0]], dtype=DTYPE)
    return [k0, k1]


def phase_damping_kraus(coherence: float) -> list[Tensor]:
    # coherence: factor multiplying the off-diagonal element
    k0 = math.sqrt((1 + coherence) / 2) * torch.eye(2, dtype=DTYPE)
    k1 = math.sqrt((1 - coherence) / 2) * pauli_string("Z")
    return [k0, k1]


def idle_kraus(duration: float, t1: float, t_phi: float) -> list[Tensor]:
    '''
    Free decay of an idle qubit: amplitude damping with 1 - exp(-t/T1) followed by pure dephasing exp(-t/T_phi).
    Infinite T1 or T_phi disables the corresponding part.
    '''
    if duration < 0:
        raise HilbertError(f"Idle duration must be >= 0, got {duration}.")
    gamma = 0.0 if math.isinf(t1) else 1.0 - math.exp(-duration / t1)
    coherence = 1.0 if math.isinf(t_phi) else math.exp(-duration / t_phi)
    return [p @ a for p in phase_damping_kraus(coherence) for a in amplitude_damping_kraus(gamma)]


def apply_idle(rho: DensityMatrix, site: str, duration: float, t1: float, t_phi: float) -> DensityMatrix:
    if duration == 0:
        return rho
    return apply_kraus(rho, idle_kraus(duration, t1, t_phi), [site])


def process_output(chi: Union[ProcessMatrix, Tensor], rho_in: Tensor) -> Tensor:
    '''E(rho) = sum_mn chi_mn P_m rho P_n for a bare matrix input.'''
    chi = chi.chi if isinstance(chi, ProcessMatrix) else as_matrix(chi)
    n = _n_qubits_of(int(round(math.sqrt(chi.shape[0]))))
    paulis = torch.stack([pauli_string(label) for label in pauli_labels(n)])
    left = paulis @ rho_in
    return torch.einsum("mn,mij,njk->ik", chi, left, paulis)
