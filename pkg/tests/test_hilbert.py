import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from qnetsim.hilbert import (DTYPE, DensityMatrix, HilbertError, HilbertSpace, ProcessMatrix, Site, SiteKind, basis_ket,
                             embed_on_sites, embed_operator, embed_operators, ghz_ket, kron_all, partial_trace,
                             pauli_basis, pauli_string, process_fidelity, project_to_physical, random_density,
                             random_ket, state_fidelity)


def test_space_rejects_bad_sites():
    with pytest.raises(HilbertError) as e:
        HilbertSpace([Site("a", SiteKind.QUBIT, 4), Site("a", SiteKind.MODE, 1)])
    assert "duplicate site label 'a'" in str(e.value)
    assert "dim 2 or 3" in str(e.value)


def test_space_order_and_lookup():
    space = HilbertSpace.from_tuples([("Q2A", SiteKind.QUBIT, 3), ("M1", SiteKind.MODE, 2)])
    assert space.dims == (3, 2)
    assert space.dim == 6
    assert space.index_of("M1") == 1
    with pytest.raises(HilbertError):
        space.index_of("Q1B")


def test_basis_ket_index_is_row_major(two_qubits):
    ket = basis_ket(two_qubits, {"q0": 1})
    assert int(torch.argmax(ket.abs())) == 2


def test_density_matrix_validation(two_qubits):
    with pytest.raises(HilbertError):
        DensityMatrix(two_qubits, torch.eye(4, dtype=DTYPE))
    with pytest.raises(HilbertError):
        DensityMatrix(two_qubits, torch.eye(2, dtype=DTYPE) / 2)


def test_pauli_basis_is_orthogonal():
    basis = pauli_basis(2)
    assert len(basis) == 16
    gram = torch.stack([torch.stack([torch.trace(a.matrix.mH @ b.matrix) for b in basis]) for a in basis])
    assert torch.allclose(gram, 4 * torch.eye(16, dtype=DTYPE))
    with pytest.raises(HilbertError):
        pauli_basis(3)


def test_partial_trace_of_product_state(two_qubits, generator):
    a = random_density(HilbertSpace.qubits(["q0"]), generator)
    b = random_density(HilbertSpace.qubits(["q1"]), generator)
    rho = DensityMatrix(two_qubits, torch.kron(a.matrix, b.matrix))
    assert torch.allclose(partial_trace(rho, ["q0"]).matrix, a.matrix, atol=1e-12)
    assert torch.allclose(partial_trace(rho, ["q1"]).matrix, b.matrix, atol=1e-12)


def test_partial_trace_of_ghz_is_mixed(three_qubits):
    rho = DensityMatrix.from_ket(three_qubits, ghz_ket(three_qubits))
    reduced = partial_trace(rho, ["q0", "q2"])
    assert reduced.space.labels == ["q0", "q2"]
    expected = torch.diag(torch.tensor([0.5, 0, 0, 0.5], dtype=DTYPE))
    assert torch.allclose(reduced.matrix, expected, atol=1e-12)


def test_embed_on_sites_follows_given_order(three_qubits):
    local = torch.kron(pauli_string("X"), pauli_string("Z"))
    op = embed_on_sites(local, ["q2", "q0"], three_qubits).matrix
    assert torch.allclose(op, pauli_string("ZIX"))


def test_embed_operator_checks_dimension(two_qubits):
    with pytest.raises(HilbertError):
        embed_operator(torch.eye(3, dtype=DTYPE), "q0", two_qubits)


def test_state_fidelity(three_qubits):
    target = ghz_ket(three_qubits)
    rho = DensityMatrix.from_ket(three_qubits, target)
    assert state_fidelity(rho, target) == pytest.approx(1.0, abs=1e-12)
    mixed = DensityMatrix(three_qubits, torch.eye(8, dtype=DTYPE) / 8)
    assert state_fidelity(mixed, target) == pytest.approx(1 / 8, abs=1e-12)
    with pytest.raises(HilbertError):
        state_fidelity(rho, 2 * target)


def test_process_fidelity_of_identity():
    chi = torch.zeros(4, 4, dtype=DTYPE)
    chi[0, 0] = 1.0
    identity = ProcessMatrix(chi)
    assert process_fidelity(identity, identity) == pytest.approx(1.0)


def test_project_to_physical_keeps_physical_states(two_qubits, generator):
    rho = random_density(two_qubits, generator)
    projected = project_to_physical(rho)
    assert torch.allclose(projected.matrix, rho.matrix, atol=1e-12)


def test_project_to_physical_rejects_non_hermitian():
    with pytest.raises(HilbertError):
        project_to_physical(torch.tensor([[0.5, 1.0], [0.0, 0.5]], dtype=DTYPE))


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(min_value=0.0, max_value=0.5))
def test_project_to_physical_returns_a_state(seed, shift):
    g = torch.Generator().manual_seed(seed)
    space = HilbertSpace.qubits(["q0", "q1"])
    rho = random_density(space, g).matrix
    noise = torch.randn(4, 4, generator=g, dtype=torch.float64).to(DTYPE)
    perturbed = rho + shift * 0.5 * (noise + noise.mH)
    projected = project_to_physical(perturbed, space=space)
    assert abs(projected.trace() - 1.0) < 1e-10
    assert projected.min_eigenvalue() > -1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_random_ket_is_normalized(seed):
    ket = random_ket(HilbertSpace.qubits(["q0", "q1", "q2"]), torch.Generator().manual_seed(seed))
    assert math.isclose(float(torch.linalg.vector_norm(ket)), 1.0, abs_tol=1e-12)


def test_kron_all_of_adjoint_views():
    a = torch.tensor([[0, 1], [0, 0]], dtype=DTYPE)
    b = torch.tensor([[1, 2j], [0, 1]], dtype=DTYPE)
    expected = torch.kron(torch.tensor([[0, 0], [1, 0]], dtype=DTYPE), torch.tensor([[1, 0], [-2j, 1]], dtype=DTYPE))
    assert torch.equal(kron_all([a.mH, b.mH]), expected)
    space = HilbertSpace.from_tuples([("Q2A", SiteKind.QUBIT, 2), ("M1", SiteKind.MODE, 2)])
    term = embed_operators({"Q2A": a, "M1": a.mH}, space).matrix
    assert torch.equal(term, torch.kron(a, a.mH.resolve_conj()))
