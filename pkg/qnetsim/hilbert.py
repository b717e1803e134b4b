from dataclasses import dataclass
from typing import Iterable, Union
import math

import torch
from torch import Tensor

DTYPE = torch.complex128

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
PSD_TOL = 1e-8
# looser tolerance for matrices handed in from outside (measured/reconstructed data)
INPUT_HERMITIAN_TOL = 1e-8


class HilbertError(ValueError):
    pass


class SiteKind:
    QUBIT = "qubit"
    MODE = "mode"
    LIST = [QUBIT, MODE]


@dataclass(frozen=True)
class Site:
    label: str
    kind: str
    dim: int


class HilbertSpace:
    '''
    Ordered tensor product of qubit (d=2 or 3) and truncated bosonic mode sites.
    The declaration order of the sites is the Kronecker ordering used by every operator and state.
    '''
    def __init__(self, sites: Iterable[Site]):
        self.sites: tuple[Site, ...] = tuple(sites)
        errors = []
        if len(self.sites) == 0:
            errors.append("a HilbertSpace needs at least one site")
        seen = set()
        for site in self.sites:
            if site.label in seen:
                errors.append(f"duplicate site label '{site.label}'")
            seen.add(site.label)
            if site.kind not in SiteKind.LIST:
                errors.append(f"site '{site.label}' has unknown kind '{site.kind}'; must be one of {SiteKind.LIST}")
            elif site.kind == SiteKind.QUBIT and site.dim not in (2, 3):
                errors.append(f"qubit site '{site.label}' must have dim 2 or 3, got {site.dim}")
            elif site.kind == SiteKind.MODE and site.dim < 2:
                errors.append(f"mode site '{site.label}' must have dim >= 2 (n_max >= 1), got {site.dim}")
        if len(errors) > 0:
            raise HilbertError("\n".join(errors))
        self._index = {site.label: i for i, site in enumerate(self.sites)}

    @classmethod
    def from_tuples(cls, sites: Iterable[tuple[str, str, int]]):
        return cls([Site(label, kind, dim) for label, kind, dim in sites])

    @classmethod
    def qubits(cls, labels: Iterable[str], dim: int=2):
        return cls([Site(label, SiteKind.QUBIT, dim) for label in labels])

    @classmethod
    def for_dimension(cls, dim: int):
        # generic labels q0..q{n-1} when dim is a power of two, otherwise a single site
        n = int(round(math.log2(dim))) if dim > 1 else 0
        if dim > 1 and 2**n == dim:
            return cls.qubits([f"q{i}" for i in range(n)])
        if dim == 3:
            return cls([Site("q0", SiteKind.QUBIT, 3)])
        return cls([Site("m0", SiteKind.MODE, dim)])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(site.dim for site in self.sites)

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    @property
    def labels(self) -> list[str]:
        return [site.label for site in self.sites]

    def index_of(self, label: str) -> int:
        if label not in self._index:
            raise HilbertError(f"Unknown site label '{label}'; space has {self.labels}.")
        return self._index[label]

    def site(self, label: str) -> Site:
        return self.sites[self.index_of(label)]

    def subspace(self, labels: Iterable[str]) -> 'HilbertSpace':
        wanted = set(labels)
        for label in wanted:
            self.index_of(label)
        return HilbertSpace([site for site in self.sites if site.label in wanted])

    def __contains__(self, label: str):
        return label in self._index

    def __len__(self):
        return len(self.sites)

    def __eq__(self, other):
        return isinstance(other, HilbertSpace) and self.sites == other.sites

    def __hash__(self):
        return hash(self.sites)

    def __repr__(self):
        inner = ", ".join(f"{s.label}:{s.kind}({s.dim})" for s in self.sites)
        return f"HilbertSpace[{inner}]"


def as_matrix(value: Union['Operator', 'DensityMatrix', Tensor, list]) -> Tensor:
    if isinstance(value, (Operator, DensityMatrix)):
        return value.matrix
    if isinstance(value, ProcessMatrix):
        return value.chi
    return torch.as_tensor(value).to(DTYPE)


class Operator:
    def __init__(self, space: HilbertSpace, matrix: Tensor):
        matrix = as_matrix(matrix)
        if tuple(matrix.shape) != (space.dim, space.dim):
            raise HilbertError(f"Operator matrix has shape {tuple(matrix.shape)}, but {space} has dimension {space.dim}.")
        self.space = space
        self.matrix = matrix

    def dag(self) -> 'Operator':
        return Operator(self.space, self.matrix.mH)

    def _check_space(self, other: 'Operator'):
        if other.space != self.space:
            raise HilbertError(f"Operator spaces differ: {self.space} vs {other.space}.")

    def __matmul__(self, other: 'Operator') -> 'Operator':
        self._check_space(other)
        return Operator(self.space, self.matrix @ other.matrix)

    def __add__(self, other: 'Operator') -> 'Operator':
        self._check_space(other)
        return Operator(self.space, self.matrix + other.matrix)

    def __mul__(self, scalar: Union[float, complex]) -> 'Operator':
        return Operator(self.space, self.matrix * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Operator({self.space})"


def _physicality_problems(matrix: Tensor, hermitian_tol: float, trace_tol: float, psd_tol: float) -> list[str]:
    problems = []
    herm = float((matrix - matrix.mH).abs().max())
    if herm > hermitian_tol:
        problems.append(f"not Hermitian (max |m - m^dag| = {herm:.3e} > {hermitian_tol:.0e})")
        return problems
    trace = complex(torch.trace(matrix))
    if abs(trace - 1.0) > trace_tol:
        problems.append(f"trace {trace.real:.12f} differs from 1 by more than {trace_tol:.0e}")
    min_eig = float(torch.linalg.eigvalsh(0.5 * (matrix + matrix.mH)).min())
    if min_eig < -psd_tol:
        problems.append(f"minimum eigenvalue {min_eig:.3e} below -{psd_tol:.0e}")
    return problems


class DensityMatrix:
    '''
    Density matrix on a HilbertSpace. Invariants are checked on construction unless validate=False
    (solver outputs are checked separately with the looser solver tolerance).
    '''
    def __init__(self, space: HilbertSpace, matrix: Tensor, validate: bool=True,
                 hermitian_tol: float=HERMITIAN_TOL, trace_tol: float=TRACE_TOL, psd_tol: float=PSD_TOL):
        matrix = as_matrix(matrix)
        if tuple(matrix.shape) != (space.dim, space.dim):
            raise HilbertError(f"Density matrix has shape {tuple(matrix.shape)}, but {space} has dimension {space.dim}.")
        self.space = space
        self.matrix = matrix
        if validate:
            self.validate(hermitian_tol=hermitian_tol, trace_tol=trace_tol, psd_tol=psd_tol)

    def validate(self, hermitian_tol: float=HERMITIAN_TOL, trace_tol: float=TRACE_TOL, psd_tol: float=PSD_TOL):
        problems = _physicality_problems(self.matrix, hermitian_tol, trace_tol, psd_tol)
        if len(problems) > 0:
            raise HilbertError("Density matrix is not physical: " + "; ".join(problems))
        return self

    @classmethod
    def from_ket(cls, space: HilbertSpace, ket: Tensor):
        ket = as_matrix(ket).reshape(-1)
        return cls(space, torch.outer(ket, ket.conj()))

    @classmethod
    def basis(cls, space: HilbertSpace, levels: dict[str, int]=None):
        return cls.from_ket(space, basis_ket(space, levels))

    def trace(self) -> float:
        return float(torch.trace(self.matrix).real)

    def min_eigenvalue(self) -> float:
        return float(torch.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.mH)).min())

    def expect(self, op: Union[Operator, Tensor]) -> float:
        return float(torch.trace(as_matrix(op) @ self.matrix).real)

    def __repr__(self):
        return f"DensityMatrix({self.space})"


class ProcessMatrix:
    '''
    Process (chi) matrix in the Pauli basis {I, X, Y, Z}^n, unit-trace convention:
    E(rho) = sum_mn chi_mn P_m rho P_n.
    '''
    def __init__(self, chi: Tensor, validate: bool=True):
        chi = as_matrix(chi)
        size = chi.shape[0]
        n_qubits = {4: 1, 16: 2}.get(size, None)
        if chi.ndim != 2 or chi.shape[0] != chi.shape[1] or n_qubits is None:
            raise HilbertError(f"Process matrix must be 4x4 or 16x16, got shape {tuple(chi.shape)}.")
        self.n_qubits = n_qubits
        self.chi = chi
        if validate:
            problems = _physicality_problems(chi, HERMITIAN_TOL, TRACE_TOL, PSD_TOL)
            if len(problems) > 0:
                raise HilbertError("Process matrix is not physical: " + "; ".join(problems))

    def eigenvalues(self) -> Tensor:
        return torch.linalg.eigvalsh(0.5 * (self.chi + self.chi.mH)).flip(0)

    def __repr__(self):
        return f"ProcessMatrix(n_qubits={self.n_qubits})"


PAULI = {
    "I": torch.tensor([[1, 0], [0, 1]], dtype=DTYPE),
    "X": torch.tensor([[0, 1], [1, 0]], dtype=DTYPE),
    "Y": torch.tensor([[0, -1j], [1j, 0]], dtype=DTYPE),
    "Z": torch.tensor([[1, 0], [0, -1]], dtype=DTYPE),
}
PAULI_LABELS = ["I", "X", "Y", "Z"]


def kron_all(matrices: Iterable[Tensor]) -> Tensor:
    '''Kronecker product in order; conjugate and transposed views are materialized first.'''
    result = None
    for m in matrices:
        m = m.resolve_conj().contiguous()
        result = m if result is None else torch.kron(result, m)
    return result


def pauli_string(labels: str) -> Tensor:
    '''Kronecker product of single-qubit Paulis, first character is the first (most significant) qubit.'''
    return kron_all(PAULI[c] for c in labels)


def pauli_labels(n_qubits: int) -> list[str]:
    labels = [""]
    for _ in range(n_qubits):
        labels = [prefix + p for prefix in labels for p in PAULI_LABELS]
    return labels


def pauli_basis(n_qubits: int) -> list[Operator]:
    '''
    Returns {I, X, Y, Z}^n in lexicographic order (II, IX, IY, IZ, XI, XX, ...) on a space of n qubits labeled q0..q{n-1}.
    '''
    if n_qubits not in (1, 2):
        raise HilbertError(f"pauli_basis supports 1 or 2 qubits, got {n_qubits}.")
    space = HilbertSpace.qubits([f"q{i}" for i in range(n_qubits)])
    return [Operator(space, pauli_string(labels)) for labels in pauli_labels(n_qubits)]


def basis_ket(space: HilbertSpace, levels: dict[str, int]=None) -> Tensor:
    '''Product basis state; sites missing from levels are in their ground state.'''
    levels = levels or {}
    index = 0
    for label in levels:
        space.index_of(label)
    for site in space.sites:
        level = levels.get(site.label, 0)
        if not 0 <= level < site.dim:
            raise HilbertError(f"Level {level} out of range for site '{site.label}' of dim {site.dim}.")
        index = index * site.dim + level
    ket = torch.zeros(space.dim, dtype=DTYPE)
    ket[index] = 1.0
    return ket


def ghz_ket(space: HilbertSpace, labels: Iterable[str]=None) -> Tensor:
    '''(|g...g> + |e...e>)/sqrt(2) over the given qubit labels (default: every qubit site), other sites in ground.'''
    if labels is None:
        labels = [s.label for s in space.sites if s.kind == SiteKind.QUBIT]
    labels = list(labels)
    excited = basis_ket(space, {label: 1 for label in labels})
    return (basis_ket(space) + excited) / math.sqrt(2)


def embed_operator(local: Union[Operator, Tensor], site_label: str, space: HilbertSpace) -> Operator:
    '''
    Embeds a single-site operator as I x ... x local x ... x I.

    Args:
        local: operator acting on one site; its dimension must equal the site's dim.
        site_label: label of the site to act on.
        space: full space.
    '''
    return embed_operators({site_label: local}, space)


def embed_operators(locals_: dict[str, Union[Operator, Tensor]], space: HilbertSpace) -> Operator:
    '''Tensor product of local operators on distinct sites, identity elsewhere.'''
    mats = {}
    for label, local in locals_.items():
        site = space.site(label)
        mat = as_matrix(local)
        if tuple(mat.shape) != (site.dim, site.dim):
            raise HilbertError(f"Local operator of shape {tuple(mat.shape)} does not match site '{label}' of dim {site.dim}.")
        mats[label] = mat
    factors = [mats.get(site.label, torch.eye(site.dim, dtype=DTYPE)) for site in space.sites]
    return Operator(space, kron_all(factors))


def partial_trace(rho: Union[DensityMatrix, Tensor], keep: Iterable[str], space: HilbertSpace=None, validate: bool=False) -> DensityMatrix:
    '''
    Reduced density matrix on the kept sites, in their original relative order.
    '''
    if isinstance(rho, DensityMatrix):
        space = rho.space
    if space is None:
        raise HilbertError("partial_trace of a raw matrix needs its space.")
    matrix = as_matrix(rho)
    keep = set(keep)
    if len(keep) == 0:
        raise HilbertError("partial_trace needs at least one site to keep.")
    keep_idx = sorted(space.index_of(label) for label in keep)
    n = len(space)
    dims = list(space.dims)
    trace_idx = [i for i in range(n) if i not in keep_idx]
    d_keep = math.prod(dims[i] for i in keep_idx)
    d_trace = math.prod(dims[i] for i in trace_idx)
    t = matrix.reshape(dims + dims)
    perm = keep_idx + trace_idx + [n + i for i in keep_idx] + [n + i for i in trace_idx]
    t = t.permute(perm).reshape(d_keep, d_trace, d_keep, d_trace)
    reduced = torch.einsum("atbt->ab", t)
    return DensityMatrix(space.subspace(keep), reduced, validate=validate)


def state_fidelity(rho: Union[DensityMatrix, Tensor], target: Tensor) -> float:
    '''<psi|rho|psi> for a normalized pure target.'''
    matrix = as_matrix(rho)
    target = as_matrix(target).reshape(-1)
    if target.shape[0] != matrix.shape[0]:
        raise HilbertError(f"Target of dimension {target.shape[0]} does not match state of dimension {matrix.shape[0]}.")
    norm = float(torch.linalg.vector_norm(target))
    if abs(norm - 1.0) > 1e-10:
        raise HilbertError(f"Target state is not normalized (norm {norm:.12f}).")
    value = complex(torch.vdot(target, matrix @ target))
    if abs(value.imag) > 1e-10:
        raise HilbertError(f"Fidelity has imaginary part {value.imag:.3e}; state is not Hermitian.")
    return value.real


def process_fidelity(chi: ProcessMatrix, chi_ideal: ProcessMatrix) -> float:
    '''Tr(chi . chi_ideal).'''
    if chi.n_qubits != chi_ideal.n_qubits:
        raise HilbertError(f"Process sizes differ: {chi.n_qubits} vs {chi_ideal.n_qubits} qubits.")
    value = complex(torch.trace(chi.chi @ chi_ideal.chi))
    if abs(value.imag) > 1e-10:
        raise HilbertError(f"Process fidelity has imaginary part {value.imag:.3e}.")
    return value.real


def _clip_and_redistribute(eigenvalues: Tensor) -> Tensor:
    lam = eigenvalues.clone()
    while True:
        negative = lam < 0
        if not bool(negative.any()):
            return lam
        deficit = float(-lam[negative].sum())
        lam[negative] = 0.0
        positive = lam > 0
        count = int(positive.sum())
        if count == 0:
            return lam
        lam[positive] -= deficit / count


def project_to_physical(m: Union[Tensor, DensityMatrix, ProcessMatrix], unit_trace: bool=True, space: HilbertSpace=None,
                        as_process: bool=False) -> Union[DensityMatrix, ProcessMatrix]:
    '''
    Frobenius-nearest positive semidefinite matrix (with unit trace when unit_trace is set).

    The spectrum is first shifted uniformly to the target trace, then negative eigenvalues are clipped to zero
    and the clipped amount is taken evenly from the remaining positive eigenvalues until none are negative.

    Args:
        m: Hermitian matrix (within 1e-8; it is symmetrized).
        unit_trace: project onto trace one; otherwise the input trace is kept.
        space: space of the returned DensityMatrix (defaults to HilbertSpace.for_dimension).
        as_process: return a ProcessMatrix instead of a DensityMatrix.
    '''
    if isinstance(m, DensityMatrix) and space is None:
        space = m.space
    mat = as_matrix(m)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise HilbertError(f"project_to_physical needs a square matrix, got shape {tuple(mat.shape)}.")
    herm = float((mat - mat.mH).abs().max())
    if herm > INPUT_HERMITIAN_TOL:
        raise HilbertError(f"Matrix is not Hermitian within {INPUT_HERMITIAN_TOL:.0e} (max deviation {herm:.3e}).")
    mat = 0.5 * (mat + mat.mH)
    eigenvalues, eigenvectors = torch.linalg.eigh(mat)
    total = float(eigenvalues.sum())
    target = 1.0 if unit_trace else total
    if target <= 0:
        raise HilbertError(f"Cannot project a matrix with trace {total:.3e} to a physical state.")
    if float(eigenvalues.min()) >= 0 and abs(total - target) <= 1e-14:
        projected = mat
    else:
        lam = eigenvalues + (target - total) / eigenvalues.numel()
        lam = _clip_and_redistribute(lam)
        projected = (eigenvectors * lam.to(DTYPE)) @ eigenvectors.mH
        projected = 0.5 * (projected + projected.mH)
    if as_process:
        return ProcessMatrix(projected, validate=unit_trace)
    if space is None:
        space = HilbertSpace.for_dimension(mat.shape[0])
    return DensityMatrix(space, projected, validate=unit_trace)


def random_ket(space: HilbertSpace, generator: torch.Generator) -> Tensor:
    re = torch.randn(space.dim, generator=generator, dtype=torch.float64)
    im = torch.randn(space.dim, generator=generator, dtype=torch.float64)
    ket = torch.complex(re, im)
    return ket / torch.linalg.vector_norm(ket)


def random_density(space: HilbertSpace, generator: torch.Generator, rank: int=None) -> DensityMatrix:
    '''Ginibre-ensemble random density matrix (full rank unless rank is given).'''
    rank = rank or space.dim
    re = torch.randn(space.dim, rank, generator=generator, dtype=torch.float64)
    im = torch.randn(space.dim, rank, generator=generator, dtype=torch.float64)
    g = torch.complex(re, im)
    rho = g @ g.mH
    rho = rho / torch.trace(rho)
    return DensityMatrix(space, 0.5 * (rho + rho.mH))


def embed_on_sites(local: Union[Operator, Tensor], site_labels: Iterable[str], space: HilbertSpace) -> Operator:
    '''
    Embeds an operator acting jointly on several sites into the full space. The Kronecker order of local
    follows site_labels, which need not be the declaration order.
    '''
    site_labels = list(site_labels)
    idx = [space.index_of(label) for label in site_labels]
    if len(set(idx)) != len(idx):
        raise HilbertError(f"Repeated site in {site_labels}.")
    mat = as_matrix(local)
    dims = list(space.dims)
    d_local = math.prod(dims[i] for i in idx)
    if tuple(mat.shape) != (d_local, d_local):
        raise HilbertError(f"Operator of shape {tuple(mat.shape)} does not match sites {site_labels} (dim {d_local}).")
    n = len(dims)
    rest = [i for i in range(n) if i not in idx]
    d_rest = math.prod(dims[i] for i in rest)
    full = torch.kron(mat, torch.eye(d_rest, dtype=DTYPE))
    order = idx + rest
    position = {site: j for j, site in enumerate(order)}
    t = full.reshape([dims[i] for i in order] * 2)
    perm = [position[k] for k in range(n)] + [n + position[k] for k in range(n)]
    return Operator(space, t.permute(perm).reshape(space.dim, space.dim))
