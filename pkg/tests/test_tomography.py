import math
import statistics

import pytest
import torch

from qnetsim.hilbert import DTYPE, DensityMatrix, HilbertSpace, ghz_ket, random_density, state_fidelity
from qnetsim.tomography import (ConfusionMatrix, ShotRecord, TomographyError, apply_confusion, mitigate_readout,
                                process_input_states, qubit_block, reconstruct_density, reconstruct_process,
                                simulate_readout, state_tomography, tomography_settings, write_shot_records)
from qnetsim.utils_channels import CZ, chi_from_unitary, depolarizing_chi, process_output
from qnetsim.utils_io import read_csv_columns


def _confusions(device, labels):
    return [ConfusionMatrix.from_qubit(device.qubit(label)) for label in labels]


def test_confusion_matrix_is_column_stochastic():
    c = ConfusionMatrix(fg=0.98, fe=0.94)
    assert c.matrix.sum(dim=0).tolist() == pytest.approx([1.0, 1.0])
    assert c.matrix[1, 0] == pytest.approx(0.02)
    assert torch.allclose(c.inverse() @ c.matrix, torch.eye(2, dtype=torch.float64))
    with pytest.raises(TomographyError):
        ConfusionMatrix(fg=0.5, fe=0.9)


def test_settings_order():
    settings = tomography_settings(2)
    assert len(settings) == 9
    assert str(settings[1]) == "I,X/2"
    assert str(settings[3]) == "X/2,I"


@pytest.mark.parametrize("n_qubits", [1, 2, 3])
def test_exact_probabilities_reconstruct_state(device, generator, n_qubits):
    labels = ["Q1A", "Q2A", "Q3A"][:n_qubits]
    space = HilbertSpace.qubits(labels)
    confusions = _confusions(device, labels)
    for _ in range(20):
        rho = random_density(space, generator)
        out = state_tomography(rho, confusions, shots=None)
        assert out.space == space
        assert torch.allclose(out.matrix, rho.matrix, atol=1e-8)


def test_pure_state_reconstruction(device):
    space = HilbertSpace.qubits(["Q1A", "Q2A", "Q3A"])
    ghz = ghz_ket(space)
    out = state_tomography(DensityMatrix.from_ket(space, ghz), _confusions(device, space.labels), shots=None)
    assert state_fidelity(out, ghz) > 1 - 1e-8


def test_shot_sampling_is_seeded(device):
    space = HilbertSpace.qubits(["Q1A", "Q2A"])
    rho = DensityMatrix.from_ket(space, ghz_ket(space))
    setting = tomography_settings(2)[4]
    confusions = _confusions(device, space.labels)
    a = simulate_readout(rho, setting, confusions, 1000, seed=5)
    b = simulate_readout(rho, setting, confusions, 1000, seed=5)
    c = simulate_readout(rho, setting, confusions, 1000, seed=6)
    assert torch.equal(a.counts, b.counts)
    assert not torch.equal(a.counts, c.counts)
    assert int(a.counts.sum()) == 1000


@pytest.mark.slow
def test_ghz_fidelity_spread_with_shots(device):
    space = HilbertSpace.qubits(["Q1A", "Q2A", "Q3A"])
    ghz = ghz_ket(space)
    rho = DensityMatrix.from_ket(space, ghz)
    confusions = _confusions(device, space.labels)
    fidelities = [state_fidelity(state_tomography(rho, confusions, shots=3000, seed=seed), ghz) for seed in range(20)]
    assert statistics.mean(fidelities) > 0.95
    assert statistics.stdev(fidelities) < 0.02


def test_mitigation_inverts_confusion(device):
    confusions = _confusions(device, ["Q1A", "Q2B"])
    ideal = torch.tensor([0.5, 0.0, 0.0, 0.5], dtype=torch.float64)
    mitigated = mitigate_readout(apply_confusion(ideal, confusions), confusions)
    assert torch.allclose(mitigated.probabilities, ideal, atol=1e-12)
    assert mitigated.deficit < 1e-12


def test_incomplete_settings_rejected():
    records = [ShotRecord(i, torch.tensor([10, 0]), 10) for i in range(2)]
    with pytest.raises(TomographyError, match="Incomplete"):
        reconstruct_density(records, 1)
    with pytest.raises(TomographyError, match="Incomplete"):
        reconstruct_density([torch.tensor([1.0, 0.0])] * 2, 1)
    with pytest.raises(TomographyError):
        ShotRecord(0, torch.tensor([3, 4]), 10)


def test_leakage_blocks_readout():
    space = HilbertSpace.from_tuples([("Q2A", "qubit", 3)])
    rho = torch.diag(torch.tensor([0.5, 0.49, 0.01], dtype=DTYPE))
    with pytest.raises(TomographyError, match="population above"):
        qubit_block(DensityMatrix(space, rho))
    small = torch.diag(torch.tensor([0.5, 0.4999, 0.0001], dtype=DTYPE))
    block = qubit_block(DensityMatrix(space, small))
    assert float(torch.trace(block).real) == pytest.approx(1.0)


def test_leakage_limit_can_be_loosened():
    space = HilbertSpace.from_tuples([("Q1A", "qubit", 2), ("Q2A", "qubit", 3)])
    diag = torch.zeros(6, dtype=DTYPE)
    diag[0], diag[3], diag[5] = 0.5, 0.4985, 0.0015
    rho = DensityMatrix(space, torch.diag(diag))
    with pytest.raises(TomographyError, match="1.50e-03"):
        qubit_block(rho)
    block = qubit_block(rho, leakage_limit=0.02)
    assert block.shape == (4, 4)
    assert float(torch.trace(block).real) == pytest.approx(1.0)
    assert float(block[2, 2].real) == pytest.approx(0.4985 / 0.9985)
    with pytest.raises(TomographyError, match="limit 2e-02"):
        qubit_block(DensityMatrix(space, torch.diag(torch.tensor([0.5, 0, 0, 0.47, 0, 0.03], dtype=DTYPE))),
                    leakage_limit=0.02)


@pytest.mark.parametrize("n_qubits", [1, 2])
def test_process_reconstruction(n_qubits):
    unitary = CZ if n_qubits == 2 else torch.tensor([[0, 1], [1, 0]], dtype=DTYPE)
    truth = depolarizing_chi(n_qubits, 0.1, unitary)
    inputs = process_input_states(n_qubits)
    outputs = [process_output(truth, torch.outer(k, k.conj())) for k in inputs]
    chi = reconstruct_process(inputs, outputs)
    assert torch.allclose(chi.chi, truth.chi, atol=1e-9)
    assert len(inputs) == 4**n_qubits


def test_process_reconstruction_errors():
    inputs = process_input_states(1)
    with pytest.raises(TomographyError, match="matching"):
        reconstruct_process(inputs, inputs[:2])
    with pytest.raises(TomographyError, match="rank deficient"):
        reconstruct_process(inputs[:2], inputs[:2])
    with pytest.raises(TomographyError):
        process_input_states(3)


def test_ideal_process_fidelity_is_one():
    inputs = process_input_states(2)
    outputs = [CZ @ torch.outer(k, k.conj()) @ CZ.mH for k in inputs]
    chi = reconstruct_process(inputs, outputs)
    assert float(torch.trace(chi.chi @ chi_from_unitary(CZ).chi).real) == pytest.approx(1.0, abs=1e-9)


def test_shot_record_csv(tmp_path, device):
    space = HilbertSpace.qubits(["Q1A"])
    records = [simulate_readout(DensityMatrix.basis(space), s, _confusions(device, ["Q1A"]), 100, seed=i, setting_index=i)
               for i, s in enumerate(tomography_settings(1))]
    path = tmp_path / "shots.csv"
    write_shot_records(path, records, 1)
    rows = read_csv_columns(path, ["setting", "count"])
    assert len(rows) == 6
    assert sum(r["count"] for r in rows) == 300
    assert math.isclose(rows[0]["setting"], 0)
