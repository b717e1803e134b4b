import math

import pytest
import torch

from qnetsim.device import with_override
from qnetsim.dynamics import mhz
from qnetsim.hilbert import DTYPE, embed_operator, process_fidelity
from qnetsim.pipelines import (REGISTER, CzModel, ProcessLibrary, bell_state, cz_proxy_process, ghz_fidelity,
                               ghz_prep_state, ghz_transfer_state, ground_register, ideal_cz_process, loaded_t1,
                               network_ghz_states, receiver_population, run_steps, simulate_cz_process,
                               simulate_state_transfer, st_process)
from qnetsim.protocols import ProtocolError, ProtocolStep, StepKind
from qnetsim.utils_channels import chi_from_unitary


def _ideal_library(device):
    return ProcessLibrary(device, cz_model=CzModel.IDEAL, ideal_transfers=True, idle=False)


def test_cz_proxy_fidelity():
    assert process_fidelity(cz_proxy_process(), ideal_cz_process()) == pytest.approx(0.958)
    assert process_fidelity(cz_proxy_process(0.9), ideal_cz_process()) == pytest.approx(0.9)


def test_loaded_t1_prefers_device_value(device):
    fixed = with_override(device, "qubits.Q2A.t1_loaded_coupling", None)
    assert loaded_t1(fixed, "A", mhz(4.08)) == pytest.approx(1.4e-6)
    modeled = with_override(device, "qubits.Q2A.t1_loaded", None)
    t1 = loaded_t1(modeled, "A", mhz(4.08))
    assert 0 < t1 < device.qubit("Q2A").t1


def test_loaded_t1_scales_with_coupling(device):
    assert loaded_t1(device, "A", mhz(5.5)) == pytest.approx(1.4e-6)
    induced = (1 / 1.4e-6 - 1 / 7e-6) * (4.08 / 5.5)**2
    assert loaded_t1(device, "A", mhz(4.08)) == pytest.approx(1 / (1 / 7e-6 + induced))
    assert loaded_t1(device, "A", mhz(4.08)) == pytest.approx(2.19e-6, rel=0.01)
    assert loaded_t1(device, "A", 0.0) == pytest.approx(7e-6)
    assert loaded_t1(device, "B", mhz(6.11)) < 1.4e-6


def test_ideal_ghz_preparation_and_transfer(device):
    library = _ideal_library(device)
    prep = ghz_prep_state(library)
    assert prep.fidelity == pytest.approx(1.0, abs=1e-9)
    moved = ghz_transfer_state(library, prep.state)
    assert moved.fidelity == pytest.approx(1.0, abs=1e-9)
    assert ghz_fidelity(moved.state, ["Q1A", "Q2A", "Q3A"]) == pytest.approx(0.5, abs=1e-9)


def test_ghz_prep_with_proxy_cz(device):
    result = ghz_prep_state(ProcessLibrary(device, idle=False))
    assert 0.91 <= result.fidelity <= 0.96


def test_run_steps_rejects_cable_steps(device):
    steps = [ProtocolStep(StepKind.ST_HALF, ("Q2A", "Q2B"), 0, {"duration": 1e-8})]
    with pytest.raises(ProtocolError):
        run_steps(ground_register(), steps, _ideal_library(device))
    with pytest.raises(ProtocolError):
        run_steps(ground_register(), [ProtocolStep(StepKind.CZ, ("Q1A", "Q3A"))], _ideal_library(device))


def test_library_rejects_unknown_cz_model(device):
    with pytest.raises(ProtocolError):
        ProcessLibrary(device, cz_model="perfect")


def test_idle_steps_decay(device):
    library = ProcessLibrary(device, cz_model=CzModel.IDEAL, ideal_transfers=True, idle=True)
    excited = run_steps(ground_register(), [ProtocolStep(StepKind.ROTATION, ("Q1B",), 0, {"axis": "x", "angle": math.pi})], library)
    decayed = run_steps(excited, [ProtocolStep(StepKind.IDLE, ("Q1B",), 0, {"duration": 1e-6})], library)
    z = torch.tensor([0.0, 1.0], dtype=DTYPE)
    population = decayed.expect(embed_operator(torch.diag(z), "Q1B", REGISTER))
    assert population == pytest.approx(math.exp(-1e-6 / 29e-6), rel=1e-9)


@pytest.mark.slow
def test_state_transfer_efficiency(device):
    traj = simulate_state_transfer(device)
    assert 0.86 <= receiver_population(traj) <= 0.90


@pytest.mark.slow
def test_state_transfer_process_fidelity(device):
    chi = st_process(device)
    fidelity = process_fidelity(chi, chi_from_unitary(torch.eye(2, dtype=DTYPE)))
    assert fidelity == pytest.approx(0.920, abs=0.015)


@pytest.mark.slow
def test_bell_state_fidelity(device):
    assert bell_state(device).fidelity == pytest.approx(0.915, abs=0.02)


@pytest.mark.slow
def test_ghz_transfer_fidelity(device):
    library = ProcessLibrary(device)
    assert ghz_transfer_state(library).fidelity == pytest.approx(0.648, abs=0.04)


@pytest.mark.slow
def test_network_ghz_fidelities(device):
    result = network_ghz_states(ProcessLibrary(device))
    assert result.fidelities["II"] == pytest.approx(0.829, abs=0.04)
    assert result.fidelities["III"] == pytest.approx(0.738, abs=0.04)
    assert result.fidelities["I"] > result.fidelities["II"] > result.fidelities["III"]


@pytest.mark.slow
def test_simulated_cz_process(device):
    fidelity = process_fidelity(simulate_cz_process(device, "A", 1), ideal_cz_process())
    assert 0.93 <= fidelity < 0.999
