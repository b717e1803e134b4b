import math

import pytest
import torch

from qnetsim.benchmarking import (BenchmarkError, ErrorChannelSpec, ErrorKind, RBResult, clifford_group_1q,
                                  cz_error_from_xeb, decomposition_unitary, depolarizing_for_average_fidelity,
                                  find_clifford, fit_rb_decay, rb_run, rb_summary, same_up_to_phase, xeb_run)


def test_clifford_group():
    group = clifford_group_1q()
    assert len(group) == 24
    for element in group:
        assert same_up_to_phase(decomposition_unitary(element.decomposition), element.unitary)
    product = group[5].unitary @ group[17].unitary
    assert find_clifford(product, group) is not None
    assert max(len(e.decomposition) for e in group) <= 3


def test_non_clifford_rejected():
    group = clifford_group_1q()
    t_gate = torch.diag(torch.tensor([1, (1 + 1j) / 2**0.5], dtype=torch.complex128))
    with pytest.raises(BenchmarkError):
        find_clifford(t_gate, group)
    with pytest.raises(BenchmarkError, match="expected 24"):
        clifford_group_1q(["X"])


def test_rb_recovers_average_fidelity():
    strength = depolarizing_for_average_fidelity(0.9974)
    assert strength == pytest.approx(0.0052)
    result = rb_run([1, 5, 10, 25, 50, 100, 200, 400], 30, ErrorChannelSpec(ErrorKind.DEPOLARIZING, strength), seed=3)
    assert result.p == pytest.approx(1 - strength, abs=1e-5)
    assert result.average_fidelity == pytest.approx(0.9974, abs=5e-4)
    assert rb_summary(result)["error_per_clifford"] == pytest.approx(0.0026, abs=1e-5)


# amplitude damping twirls to depolarizing decay p = (2 sqrt(1 - gamma) + 1 - gamma)/3
_DAMPING_FOR_P99 = 1 - (math.sqrt(3.97) - 1)**2


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
@pytest.mark.parametrize("spec", [
    ErrorChannelSpec(ErrorKind.DEPOLARIZING, 0.01),
    ErrorChannelSpec(ErrorKind.AMPLITUDE_DAMPING, _DAMPING_FOR_P99),
])
def test_rb_decay_over_seeds(spec, seed):
    result = rb_run([1, 5, 10, 25, 50, 100, 200], 30, spec, seed=seed)
    assert result.p == pytest.approx(0.99, abs=0.002)


def test_rb_without_noise():
    result = rb_run([1, 10, 50], 10, ErrorChannelSpec(), seed=0)
    assert result.means == pytest.approx([1.0, 1.0, 1.0])
    assert result.average_fidelity == 1.0


def test_rb_is_seeded(device):
    spec = ErrorChannelSpec(ErrorKind.FROM_LINDBLAD, qubit="Q1A", duration=40e-9)
    first = rb_run([1, 20], 10, spec, seed=9, device=device)
    second = rb_run([1, 20], 10, spec, seed=9, device=device)
    assert first.return_probabilities == second.return_probabilities


def test_rb_fit_and_argument_errors():
    assert fit_rb_decay([1, 2, 3], [1.0, 1.0, 1.0]) == (1.0, 1.0, 0.0)
    with pytest.raises(BenchmarkError):
        rb_run([0, 5], 10, ErrorChannelSpec(), seed=0)
    with pytest.raises(BenchmarkError):
        rb_run([1, 5], 5, ErrorChannelSpec(), seed=0)
    result = RBResult(lengths=[1], return_probabilities=[[1.0]], means=[1.0], stds=[0.0], a=0.5, p=0.99, b=0.5)
    assert result.error_per_clifford == pytest.approx(0.005)


@pytest.mark.parametrize("kwargs", [
    {"kind": "bit-flip"},
    {"kind": ErrorKind.DEPOLARIZING, "strength": 1.5},
    {"kind": ErrorKind.FROM_LINDBLAD, "qubit": "Q1A"},
])
def test_error_spec_validation(kwargs):
    with pytest.raises(BenchmarkError):
        ErrorChannelSpec(**kwargs)


def test_from_lindblad_needs_device():
    with pytest.raises(BenchmarkError, match="device"):
        ErrorChannelSpec(ErrorKind.FROM_LINDBLAD, qubit="Q1A", duration=1e-8).kraus(1)


def test_xeb_global_depolarizing_decay_is_exact():
    result = xeb_run([1, 2, 4, 8], 10, ErrorChannelSpec(ErrorKind.DEPOLARIZING, 0.05), seed=1)
    assert result.fidelities == pytest.approx([0.95**d for d in [1, 2, 4, 8]], rel=1e-9)
    assert result.cycle_error == pytest.approx(0.05, abs=1e-5)


def test_xeb_cycle_error_with_single_qubit_noise():
    singles = [ErrorChannelSpec(ErrorKind.DEPOLARIZING, depolarizing_for_average_fidelity(f)) for f in (0.9974, 0.9975)]
    result = xeb_run([1, 2, 4, 6, 8, 10, 12, 15, 20], 50, ErrorChannelSpec(ErrorKind.DEPOLARIZING, 0.033), seed=0,
                     single_qubit_errors=singles)
    assert result.cycle_error == pytest.approx(0.041, abs=0.005)
    recovered = cz_error_from_xeb(result.cycle_error, [s.strength for s in singles])
    assert recovered == pytest.approx(0.033, abs=0.005)


def test_cz_error_from_xeb():
    assert cz_error_from_xeb(0.041, []) == pytest.approx(0.041)
    assert cz_error_from_xeb(0.041, [0.0052, 0.005]) == pytest.approx(0.0331, abs=5e-4)


def test_xeb_argument_errors():
    with pytest.raises(BenchmarkError):
        xeb_run([1], 10, ErrorChannelSpec(), seed=0)
    with pytest.raises(BenchmarkError):
        xeb_run([1, 2], 10, ErrorChannelSpec(), seed=0, single_qubit_errors=[ErrorChannelSpec()])
