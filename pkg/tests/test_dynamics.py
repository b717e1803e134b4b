import math
from dataclasses import replace

import pytest
import torch

from qnetsim.dynamics import (ControlFrame, DecoherenceError, EvolveOptions, InstantGate, IntegrationError, PulseSchedule,
                              ScheduleError, SiteDecoherence, build_hamiltonian, collapse_operators, damped_vacuum_rabi,
                              dump_trajectory, evolve_master_equation, excitation_numbers, excitation_populations, mhz,
                              network_space, ns, schedule_unitary, write_trajectory_csv)
from qnetsim.hilbert import DTYPE, DensityMatrix, HilbertError, basis_ket
from qnetsim.utils_io import load_states, read_csv_columns


G = mhz(5.5)


def _rabi(device, options, duration=ns(100)):
    space = network_space(["Q2A"], 1)
    rho0 = DensityMatrix.basis(space, {"Q2A": 1})
    schedule = PulseSchedule([ControlFrame(duration, couplers={"A": G})])
    return evolve_master_equation(rho0, schedule, device, space, options)


def test_lossless_vacuum_rabi(device):
    traj = _rabi(device, EvolveOptions(lossless=True, sample_stride=1))
    assert len(traj) > 100
    for t, p in zip(traj.times, traj.populations["Q2A"]):
        assert p == pytest.approx(math.cos(G * t)**2, abs=1e-6)


def test_damped_vacuum_rabi_matches_master_equation(device):
    t1_q, t1_m = 7e-6, 473e-9
    overrides = {"Q2A": SiteDecoherence(t1=t1_q, t_phi=math.inf), "M1": SiteDecoherence(t1=t1_m)}
    traj = _rabi(device, EvolveOptions(overrides=overrides, sample_stride=5), duration=ns(300))
    for t, p in zip(traj.times, traj.populations["Q2A"]):
        assert p == pytest.approx(damped_vacuum_rabi(t, G, 1 / t1_q, 1 / t1_m), abs=1e-5)


def test_step_halving_converges(device):
    coarse = _rabi(device, EvolveOptions(dt_max=2e-10)).final_state.matrix
    fine = _rabi(device, EvolveOptions(dt_max=1e-10)).final_state.matrix
    assert float((coarse - fine).abs().max()) < 1e-7


def test_excitation_restriction_is_exact(device):
    space = network_space(["Q2A", "Q2B"], 3)
    rho0 = DensityMatrix.basis(space, {"Q2A": 1})
    schedule = PulseSchedule([ControlFrame(ns(40), couplers={"A": G, "B": G})])
    restricted = evolve_master_equation(rho0, schedule, device, space, EvolveOptions(restrict_excitations=True))
    full = evolve_master_equation(rho0, schedule, device, space, EvolveOptions(restrict_excitations=False))
    assert torch.allclose(restricted.final_state.matrix, full.final_state.matrix, atol=1e-10)
    assert excitation_numbers(space).tolist()[:4] == [0, 1, 1, 2]


def test_instant_gate_replaces_sample(device):
    space = network_space(["Q1A"])
    schedule = PulseSchedule([InstantGate("Q1A", "x", math.pi), ControlFrame(ns(10))])
    traj = evolve_master_equation(DensityMatrix.basis(space), schedule, device, space, EvolveOptions(lossless=True))
    assert traj.times[0] == 0.0
    assert traj.times[1] > 0.0
    assert traj.populations["Q1A"][0] == pytest.approx(1.0)
    assert traj.final_state.trace() == pytest.approx(1.0)


def test_lossy_evolution_stays_positive(device):
    space = network_space(["Q2A", "Q2B"], 1)
    ket = (basis_ket(space) + basis_ket(space, {"Q2A": 1})) / math.sqrt(2)
    schedule = PulseSchedule([ControlFrame(ns(60), couplers={"A": G, "B": G})])
    options = EvolveOptions(sample_stride=1, overrides={"Q2A": SiteDecoherence(t1=0.5e-6), "Q2B": SiteDecoherence(t1=0.5e-6)})
    traj = evolve_master_equation(DensityMatrix.from_ket(space, ket), schedule, device, space, options)
    assert len(traj) > 50
    for state in traj.states:
        assert float(torch.linalg.eigvalsh(0.5 * (state.matrix + state.matrix.mH)).min()) >= -1e-6


def test_positivity_violation_raises(device):
    with pytest.raises(IntegrationError, match="positivity"):
        _rabi(device, EvolveOptions(positivity_tolerance=-0.1))


def test_node_b_coupling_sign(device):
    space = network_space(["Q2B"], 1)
    h = build_hamiltonian(ControlFrame(ns(1), couplers={"B": G}), space, device.fsr).matrix
    # |e,0> -> |g,1> with mode index 1 carries (-1)^1
    assert h[1, 2].real == pytest.approx(-G)


def test_qubit_exchange_coupling(device):
    space = network_space(["Q1A", "Q2A"], 0, qutrits=["Q2A"])
    h = build_hamiltonian(ControlFrame(ns(1), qubit_couplings={"Q1A-Q2A": G}), space, device.fsr, device).matrix
    assert torch.allclose(h, h.mH)
    # |g,e> <-> |e,g> and |g,f> <-> |e,e> with sqrt(2)
    assert h[3, 1].real == pytest.approx(G)
    assert h[4, 2].real == pytest.approx(math.sqrt(2) * G)
    assert h[5, 1] == 0


def test_mode_frame_centered(device):
    space = network_space([], 3)
    h = build_hamiltonian(ControlFrame(ns(1)), space, device.fsr).matrix
    assert h.diagonal().real[[4, 2, 1]].tolist() == pytest.approx([-mhz(105), 0.0, mhz(105)])


def test_hamiltonian_rejects_bad_spaces(device):
    with pytest.raises(HilbertError):
        build_hamiltonian(ControlFrame(ns(1)), network_space(["Q2A"], 2), device.fsr)
    with pytest.raises(ScheduleError):
        build_hamiltonian(ControlFrame(ns(1)), network_space(["Q2A"], qutrits=["Q2A"]), device.fsr)


def test_schedule_unitary_is_unitary(device):
    space = network_space(["Q1A", "Q2A"], 1, qutrits=["Q2A"])
    schedule = PulseSchedule([
        ControlFrame(ns(12), detunings={"Q2A": mhz(-50)}, couplers={"A": G}, qubit_couplings={"Q1A-Q2A": mhz(16.7)}),
        InstantGate("Q1A", "y", math.pi / 2),
    ])
    u = schedule_unitary(schedule, space, device)
    assert torch.allclose(u @ u.mH, torch.eye(space.dim, dtype=DTYPE), atol=1e-10)


@pytest.mark.parametrize("build", [
    lambda: ControlFrame(0.0),
    lambda: ControlFrame(ns(1), couplers={"C": G}),
    lambda: ControlFrame(ns(1), detunings={"Q1A": math.nan}),
    lambda: InstantGate("Q1A", "w", 1.0),
    lambda: InstantGate("Q1A", "x", 7.0),
    lambda: PulseSchedule([]),
])
def test_invalid_schedule_items(build):
    with pytest.raises(ScheduleError):
        build()


def test_trajectory_csv(tmp_path, device):
    traj = _rabi(device, EvolveOptions(lossless=True), duration=ns(20))
    path = tmp_path / "trajectory.csv"
    write_trajectory_csv(traj, path)
    rows = read_csv_columns(path, ["time_ns", "population"])
    assert len(rows) == 2 * len(traj)
    assert rows[-1]["time_ns"] == pytest.approx(20.0)


def test_trajectory_state_dump(tmp_path, device):
    traj = _rabi(device, EvolveOptions(lossless=True), duration=ns(20))
    path = tmp_path / "states.bin"
    dump_trajectory(traj, path)
    loaded = load_states(path)
    assert len(loaded) == len(traj)
    assert torch.allclose(loaded[-1], traj.final_state.matrix)


def _dissipator(ops, rho):
    out = torch.zeros_like(rho)
    for op in ops:
        l = op.matrix
        ld = l.conj().T
        out += l @ rho @ ld - 0.5 * (ld @ l @ rho + rho @ ld @ l)
    return out


def test_collapse_operators_rates(device):
    space = network_space(["Q2A"], 3)
    ops = collapse_operators(device, space, {"Q2A": SiteDecoherence(t1=7e-6, t_phi=math.inf)})
    # relaxation on Q2A plus photon loss on M1..M3
    assert len(ops) == 4
    rho = DensityMatrix.basis(space, {"M3": 1}).matrix
    decay = _dissipator(ops, rho)
    assert float(torch.trace(decay @ rho).real) == pytest.approx(-1 / 473e-9, rel=1e-9)
    assert len(collapse_operators(device, space)) == 5


def test_collapse_operator_coherence_decay(device):
    space = network_space(["Q1A"], 0)
    plus = torch.full((2, 2), 0.5, dtype=DTYPE)
    relax_only = _dissipator(collapse_operators(device, space, {"Q1A": SiteDecoherence(t1=7e-6, t_phi=math.inf)}), plus)
    assert float(relax_only[0, 1].real) == pytest.approx(-0.5 / (2 * 7e-6), rel=1e-9)
    dephase_only = _dissipator(collapse_operators(device, space, {"Q1A": SiteDecoherence(t1=math.inf, t_phi=3.4e-6)}), plus)
    assert float(dephase_only[0, 1].real) == pytest.approx(-0.5 / 3.4e-6, rel=1e-9)
    assert float(dephase_only[1, 1].real) == pytest.approx(0.0, abs=1e-6)


def test_collapse_operators_qutrit_relaxation(device):
    space = network_space(["Q1A"], 0, qutrits=["Q1A"])
    ops = collapse_operators(device, space, {"Q1A": SiteDecoherence(t1=12e-6, t_phi=math.inf)})
    rho_f = DensityMatrix.basis(space, {"Q1A": 2}).matrix
    assert float(_dissipator(ops, rho_f)[2, 2].real) == pytest.approx(-2 / 12e-6, rel=1e-9)


def test_collapse_operators_need_lifetimes(device):
    without_q1a = replace(device, qubits={k: v for k, v in device.qubits.items() if k != "Q1A"})
    with pytest.raises(DecoherenceError, match="Q1A"):
        collapse_operators(without_q1a, network_space(["Q1A"], 0))
    collapse_operators(without_q1a, network_space(["Q1A"], 0), {"Q1A": SiteDecoherence(t1=1e-5, t_phi=1e-5)})
    with pytest.raises(DecoherenceError, match="M6"):
        collapse_operators(device, network_space(["Q2A"], 7))


def test_excitation_populations(device):
    traj = _rabi(device, EvolveOptions(lossless=True, sample_stride=1), duration=ns(30))
    qubit = excitation_populations(traj, "Q2A")
    mode = excitation_populations(traj, "M1")
    assert qubit[0] == pytest.approx(1.0, abs=1e-12)
    for a, b in zip(qubit, mode):
        assert a + b == pytest.approx(1.0, abs=1e-8)
        assert -1e-8 <= a <= 1 + 1e-8
    with pytest.raises(HilbertError):
        excitation_populations(traj, "Q9Z")
