from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence
import math

import numpy as np
import torch

from . import benchmarking as bench
from .circuit_model import (CouplingSample, QSample, T1Sample, channel_mode_q, coupler_phase_for_coupling, coupling_at_phase,
                            fit_coupler_inductance, fit_loaded_t1, fit_wirebond_loss, measurement_channel, mode_inductance,
                            node_coupling_context, qubit_loaded_t1, read_coupling_samples, read_q_samples, read_t1_samples)
from .device import DeviceConfig, Node, qubit_label
from .dynamics import (ControlFrame, EvolveOptions, PulseSchedule, SiteDecoherence, damped_vacuum_rabi, dump_trajectory,
                       evolve_master_equation, excitation_populations, mhz, network_space, ns, write_trajectory_csv)
from .hilbert import DensityMatrix, ghz_ket, partial_trace, pauli_labels, process_fidelity, state_fidelity
from .logger import logger
from .pipelines import (CZ_PROXY_FIDELITY, CzModel, ProcessLibrary, bell_state, cz_proxy_process, ghz_prep_state,
                        ghz_transfer_state, ideal_cz_process, loaded_t1, network_ghz_states, receiver_population,
                        simulate_cz_process, simulate_state_transfer, st_outputs, transfer_options)
from .protocols import DEFAULT_TRANSFER_MHZ_NS, TransferParams, TransferVariant, schedule_state_transfer
from .scheduling import save_schedule
from .tomography import ConfusionMatrix, reconstruct_process, state_tomography
from .utils_channels import chi_from_unitary
from .utils_io import derive_seed, make_generator, matrix_to_json, write_csv, write_json


class ExperimentError(ValueError):
    pass


class UnknownExperimentError(ExperimentError):
    pass


@dataclass
class ExperimentContext:
    device: DeviceConfig
    params: dict
    seed: int = 0
    shots: Optional[int] = None
    out: Path = Path(".")


@dataclass(frozen=True)
class Experiment:
    name: str
    description: str
    run: Callable[[ExperimentContext], dict]
    defaults: dict = field(default_factory=dict)


TRANSFER_PARAM_KEYS = {"dw_a": "dw_a_mhz", "dw_b": "dw_b_mhz", "g_a": "g_a_mhz", "g_b": "g_b_mhz",
                       "tau": "tau_ns", "delta_tau": "delta_tau_ns"}


def transfer_defaults(variant: str) -> dict:
    return {key: DEFAULT_TRANSFER_MHZ_NS[variant][name] for name, key in TRANSFER_PARAM_KEYS.items()}


def transfer_params_from(params: dict) -> TransferParams:
    return TransferParams.from_mhz_ns(**{name: float(params[key]) for name, key in TRANSFER_PARAM_KEYS.items()})


def _qubit_confusions(device: DeviceConfig, labels: Sequence[str]) -> list[ConfusionMatrix]:
    return [ConfusionMatrix.from_qubit(device.qubit(label)) for label in labels]


def _write_matrix(path: Path, matrix, labels: Sequence[str]=None):
    write_json(path, matrix_to_json(matrix, labels))


def _tomography_fidelity(ctx: ExperimentContext, rho: DensityMatrix, labels: Sequence[str]) -> float:
    '''GHZ fidelity of the given qubits after simulated readout with ctx.shots per setting.'''
    reduced = partial_trace(rho, labels)
    estimate = state_tomography(reduced, _qubit_confusions(ctx.device, labels), ctx.shots, seed=ctx.seed)
    _write_matrix(ctx.out / "rho_tomography.json", estimate, labels)
    return state_fidelity(estimate, ghz_ket(reduced.space))


# vacuum Rabi

def _rabi_populations(device: DeviceConfig, node: str, g: float, detuning: float, duration: float,
                      sample: float) -> tuple[list[float], list[float]]:
    '''Excited population of Q2 of a node coupled to all standing modes, sampled every sample seconds.'''
    q_2 = qubit_label(2, node)
    space = network_space([q_2], device.mode_count)
    n_frames = max(1, int(round(duration / sample)))
    frame = ControlFrame(duration=sample, detunings={q_2: detuning}, couplers={node: g})
    options = EvolveOptions(sample_stride=10**9, store_states=False,
                            overrides={q_2: SiteDecoherence(t1=loaded_t1(device, node, g))})
    traj = evolve_master_equation(DensityMatrix.basis(space, {q_2: 1}), PulseSchedule([frame] * n_frames), device, space, options)
    return traj.times, excitation_populations(traj, q_2)


def _parabolic_vertex(x: Sequence[float], y: Sequence[float], i: int) -> float:
    denominator = y[i - 1] - 2 * y[i] + y[i + 1]
    if denominator == 0:
        return x[i]
    return x[i] + 0.5 * (x[i + 1] - x[i]) * (y[i - 1] - y[i + 1]) / denominator


def find_stripes(detunings: Sequence[float], averages: Sequence[float], depth: float=0.9) -> list[float]:
    '''
    Detunings where the time-averaged excited population dips: interior local minima below depth times the
    median, refined by a parabola through the minimum and its neighbours. Assumes a uniform grid.
    '''
    threshold = depth * float(np.median(averages))
    stripes = []
    for i in range(1, len(averages) - 1):
        if averages[i] < averages[i - 1] and averages[i] <= averages[i + 1] and averages[i] < threshold:
            stripes.append(_parabolic_vertex(detunings, averages, i))
    return stripes


def run_rabi_chevron(ctx: ExperimentContext) -> dict:
    p = ctx.params
    detunings = np.linspace(p["detuning_min_mhz"], p["detuning_max_mhz"], int(p["detuning_points"])).tolist()
    rows, averages = [], []
    for detuning in detunings:
        times, pops = _rabi_populations(ctx.device, p["node"], mhz(p["g_mhz"]), mhz(detuning), ns(p["duration_ns"]),
                                        ns(p["sample_ns"]))
        rows.extend((detuning, t * 1e9, pop) for t, pop in zip(times, pops))
        averages.append(float(np.mean(pops)))
    write_csv(ctx.out / "chevron.csv", ["detuning_mhz", "time_ns", "population"], rows)
    stripes = find_stripes(detunings, averages)
    spacing = (stripes[-1] - stripes[0]) / (len(stripes) - 1) if len(stripes) > 1 else None
    logger.info(f"Rabi chevron: {len(stripes)} stripes, spacing {spacing} MHz")
    return {"stripe_detunings_mhz": stripes, "stripe_spacing_mhz": spacing}


def run_rabi_slice(ctx: ExperimentContext) -> dict:
    '''Resonant vacuum Rabi oscillation with the communication mode against the damped single-mode formula.'''
    p = ctx.params
    device, node = ctx.device, p["node"]
    g = mhz(p["g_mhz"])
    times, pops = _rabi_populations(device, node, g, mhz(p["detuning_mhz"]), ns(p["duration_ns"]), ns(p["sample_ns"]))
    gamma_q = 1 / loaded_t1(device, node, g)
    gamma_r = 1 / device.mode_lifetime(device.communication_mode)
    analytic = [damped_vacuum_rabi(t, g, gamma_q, gamma_r) for t in times]
    write_csv(ctx.out / "rabi_slice.csv", ["time_ns", "population", "analytic"],
              ((t * 1e9, a, b) for t, a, b in zip(times, pops, analytic)))
    first = next((i for i in range(1, len(pops) - 1) if pops[i] <= pops[i - 1] and pops[i] <= pops[i + 1]), None)
    if first is None:
        raise ExperimentError(f"No swap minimum within duration_ns={p['duration_ns']} at g_mhz={p['g_mhz']}; "
                              f"lengthen duration_ns past half a Rabi period")
    first_swap = _parabolic_vertex([t * 1e9 for t in times], pops, first)
    early = [abs(a - b) for t, a, b in zip(times, pops, analytic) if t <= ns(p["compare_ns"])]
    logger.info(f"Rabi slice: first swap at {first_swap:.2f} ns")
    return {"first_swap_ns": first_swap, "max_early_deviation": max(early)}


# state transfer

def run_transfer(ctx: ExperimentContext) -> dict:
    params = transfer_params_from(ctx.params)
    schedule = schedule_state_transfer(params)
    save_schedule(schedule, ctx.out / "schedule.json")
    traj = simulate_state_transfer(ctx.device, params, options=transfer_options(ctx.device, params))
    write_trajectory_csv(traj, ctx.out / "trajectory.csv")
    if ctx.params["dump_states"]:
        dump_trajectory(traj, ctx.out / "states.bin")
    population = receiver_population(traj)
    logger.info(f"State transfer: receiver population {population:.4f} after {schedule.duration * 1e9:.1f} ns")
    return {"receiver_population": population, "duration_ns": schedule.duration * 1e9}


def run_transfer_tomo(ctx: ExperimentContext) -> dict:
    params = transfer_params_from(ctx.params)
    inputs, outputs = st_outputs(ctx.device, params)
    identity = chi_from_unitary(torch.eye(2, dtype=torch.complex128))
    chi = reconstruct_process(inputs, outputs)
    _write_matrix(ctx.out / "chi.json", chi.chi, pauli_labels(1))
    summary = {"process_fidelity": process_fidelity(chi, identity)}
    if ctx.shots is not None:
        confusion = _qubit_confusions(ctx.device, ["Q2B"])
        measured = [state_tomography(out, confusion, ctx.shots, seed=derive_seed(ctx.seed, i)).matrix
                    for i, out in enumerate(outputs)]
        chi_shots = reconstruct_process(inputs, measured)
        _write_matrix(ctx.out / "chi_tomography.json", chi_shots.chi, pauli_labels(1))
        summary["process_fidelity_tomography"] = process_fidelity(chi_shots, identity)
    logger.info(f"State transfer process fidelity {summary['process_fidelity']:.4f}")
    return summary


# GHZ pipelines

def _library(ctx: ExperimentContext, transfer: TransferParams=None) -> ProcessLibrary:
    return ProcessLibrary(ctx.device, cz_model=ctx.params["cz_model"], transfer_params=transfer,
                          cz_fidelity=float(ctx.params["cz_fidelity"]))


def run_ghz_prep(ctx: ExperimentContext) -> dict:
    node = ctx.params["node"]
    labels = [qubit_label(i, node) for i in (1, 2, 3)]
    result = ghz_prep_state(_library(ctx), node)
    _write_matrix(ctx.out / "rho.json", partial_trace(result.state, labels), labels)
    summary = {"fidelity": result.fidelity}
    if ctx.shots is not None:
        summary["fidelity_tomography"] = _tomography_fidelity(ctx, result.state, labels)
    return summary


def run_ghz_transfer(ctx: ExperimentContext) -> dict:
    library = _library(ctx, transfer_params_from(ctx.params))
    prep = ghz_prep_state(library, Node.A)
    result = ghz_transfer_state(library, prep.state)
    labels = [qubit_label(i, Node.B) for i in (1, 2, 3)]
    _write_matrix(ctx.out / "rho.json", partial_trace(result.state, labels), labels)
    summary = {"prep_fidelity": prep.fidelity, "fidelity": result.fidelity}
    if ctx.shots is not None:
        summary["fidelity_tomography"] = _tomography_fidelity(ctx, result.state, labels)
    return summary


def run_bell_st_half(ctx: ExperimentContext) -> dict:
    params = transfer_params_from(ctx.params)
    result = bell_state(ctx.device, params)
    _write_matrix(ctx.out / "rho.json", result.state, ["Q2A", "Q2B"])
    summary = {"fidelity": result.fidelity, "phase": result.phase}
    if ctx.shots is not None:
        estimate = state_tomography(result.state, _qubit_confusions(ctx.device, ["Q2A", "Q2B"]), ctx.shots, seed=ctx.seed)
        summary["fidelity_tomography"] = state_fidelity(estimate, ghz_ket(result.state.space))
    return summary


def run_network_ghz(ctx: ExperimentContext) -> dict:
    params = transfer_params_from(ctx.params)
    result = network_ghz_states(_library(ctx), params, bell_state(ctx.device, params))
    write_csv(ctx.out / "stages.csv", ["stage", "fidelity"], result.fidelities.items())
    return {f"fidelity_{stage}": value for stage, value in result.fidelities.items()}


def run_cz_tomo(ctx: ExperimentContext) -> dict:
    node, j = ctx.params["node"], int(ctx.params["partner"])
    chi = simulate_cz_process(ctx.device, node, j)
    _write_matrix(ctx.out / "chi.json", chi.chi, pauli_labels(2))
    ideal = ideal_cz_process()
    fidelity = process_fidelity(chi, ideal)
    logger.info(f"CZ on (Q{j}{node}, Q2{node}): process fidelity {fidelity:.4f}")
    return {"fidelity": fidelity, "proxy_fidelity": process_fidelity(cz_proxy_process(), ideal)}


# benchmarking

def run_rb(ctx: ExperimentContext) -> dict:
    p = ctx.params
    qubit = p["qubit"]
    average = p["average_fidelity"]
    if average is None:
        if qubit not in ctx.device.rb_average_fidelity:
            raise ExperimentError(f"No RB average fidelity for '{qubit}' in device; set params.average_fidelity")
        average = ctx.device.rb_average_fidelity[qubit]
    error = bench.ErrorChannelSpec(bench.ErrorKind.DEPOLARIZING, bench.depolarizing_for_average_fidelity(average))
    result = bench.rb_run(p["lengths"], int(p["n_sequences"]), error, ctx.seed)
    bench.write_rb_csv(ctx.out / "rb.csv", result)
    summary = bench.rb_summary(result)
    summary.update({"qubit": qubit, "injected_average_fidelity": average})
    return summary


def run_xeb(ctx: ExperimentContext) -> dict:
    p = ctx.params
    strengths = [bench.depolarizing_for_average_fidelity(ctx.device.rb_average_fidelity[q]) for q in p["qubits"]]
    result = bench.xeb_run(p["cycles"], int(p["n_circuits"]),
                           bench.ErrorChannelSpec(bench.ErrorKind.DEPOLARIZING, float(p["cz_error"])), ctx.seed,
                           single_qubit_errors=[bench.ErrorChannelSpec(bench.ErrorKind.DEPOLARIZING, s) for s in strengths])
    bench.write_xeb_csv(ctx.out / "xeb.csv", result)
    summary = bench.xeb_summary(result)
    summary["cz_error"] = bench.cz_error_from_xeb(result.cycle_error, strengths)
    return summary


# circuit-model fits

def _noisy(values: Sequence[float], noise: float, generator: torch.Generator) -> list[float]:
    if noise == 0:
        return list(values)
    factors = 1 + noise * torch.randn(len(values), generator=generator, dtype=torch.float64)
    return [v * float(f) for v, f in zip(values, factors)]


def run_fit_wirebond(ctx: ExperimentContext) -> dict:
    p = ctx.params
    device = ctx.device
    cfg = measurement_channel(device)
    l_m = mode_inductance(cfg)
    if p["samples_csv"] is not None:
        samples = read_q_samples(p["samples_csv"])
    else:
        omegas = [2 * math.pi * f * 1e9 for f in np.linspace(p["f_min_ghz"], p["f_max_ghz"], int(p["n_points"]))]
        qs = _noisy([channel_mode_q(w, device.wirebond, l_m, cfg) for w in omegas], p["noise"], make_generator(ctx.seed))
        samples = [QSample(omega=w, q=q) for w, q in zip(omegas, qs)]
    fit = fit_wirebond_loss(samples, cfg, l_m)
    write_csv(ctx.out / "wirebond.csv", ["freq_hz", "q_value", "q_fit"],
              ((s.omega / (2 * math.pi), s.q, channel_mode_q(s.omega, fit.model, l_m, cfg)) for s in samples))
    return {"r_s_ohm": fit.model.r_s, "q_0": fit.model.q_0, "residual_norm": fit.residual_norm}


def run_fit_coupler(ctx: ExperimentContext) -> dict:
    p = ctx.params
    context = node_coupling_context(ctx.device, p["node"])
    truth = context.pop("coupler")
    if p["samples_csv"] is not None:
        samples = read_coupling_samples(p["samples_csv"])
    else:
        deltas = np.linspace(math.pi / 2, math.pi, int(p["n_points"])).tolist()
        gs = _noisy([abs(coupling_at_phase(d, truth, **context)) for d in deltas], p["noise"], make_generator(ctx.seed))
        samples = [CouplingSample(delta=d, g=g) for d, g in zip(deltas, gs)]
    start = replace(truth, l_t=p["l_t_guess_nh"] * 1e-9)
    fit = fit_coupler_inductance(samples, start, **context)
    fitted = replace(truth, l_t=fit.l_t)
    write_csv(ctx.out / "coupler.csv", ["delta_rad", "g_hz", "g_fit_hz"],
              ((s.delta, s.g / (2 * math.pi), abs(coupling_at_phase(s.delta, fitted, **context)) / (2 * math.pi)) for s in samples))
    g_max = abs(coupling_at_phase(math.pi, fitted, **context)) / (2 * math.pi)
    return {"node": p["node"], "l_t_nh": fit.l_t * 1e9, "g_max_mhz": g_max * 1e-6, "residual_norm": fit.residual_norm}


def run_fit_loaded_t1(ctx: ExperimentContext) -> dict:
    p = ctx.params
    device, node = ctx.device, p["node"]
    qubit = device.qubit(qubit_label(2, node))
    context = node_coupling_context(device, node)
    truth = context["coupler"]
    if p["samples_csv"] is not None:
        samples = read_t1_samples(p["samples_csv"])
    else:
        # stay clear of delta = pi/2, where the coupler is off and T1 is intrinsic
        deltas = np.linspace(math.pi / 2 + 0.1, math.pi, int(p["n_points"])).tolist()
        t1s = _noisy([qubit_loaded_t1(d, qubit, truth, device.channel) for d in deltas], p["noise"], make_generator(ctx.seed))
        samples = [T1Sample(delta=d, t1=t1) for d, t1 in zip(deltas, t1s)]
    fit = fit_loaded_t1(samples, qubit, replace(truth, r_g=p["r_g_guess_ohm"]), device.channel)
    fitted = replace(truth, r_g=fit.r_g)
    write_csv(ctx.out / "loaded_t1.csv", ["delta_rad", "t1_s", "t1_fit_s"],
              ((s.delta, s.t1, qubit_loaded_t1(s.delta, qubit, fitted, device.channel)) for s in samples))
    context["coupler"] = fitted
    delta = coupler_phase_for_coupling(mhz(p["g_transfer_mhz"]), **context)
    t1_transfer = qubit_loaded_t1(delta, qubit, fitted, device.channel)
    return {"r_g_ohm": fit.r_g, "residual_norm": fit.residual_norm, "t1_at_transfer_coupling_us": t1_transfer * 1e6}


_FIT_DEFAULTS = {"samples_csv": None, "noise": 0.0, "n_points": 25}
_GHZ_DEFAULTS = {"cz_model": CzModel.PROXY, "cz_fidelity": CZ_PROXY_FIDELITY}

EXPERIMENTS: dict[str, Experiment] = {e.name: e for e in [
    Experiment("rabi-chevron", "Q2 excited population vs. detuning and time, stripes at the standing modes",
               run_rabi_chevron, {"node": Node.A, "g_mhz": 5.5, "detuning_min_mhz": -250.0, "detuning_max_mhz": 250.0,
                                  "detuning_points": 51, "duration_ns": 400.0, "sample_ns": 4.0}),
    Experiment("rabi-slice", "Resonant vacuum Rabi oscillation with the communication mode",
               run_rabi_slice, {"node": Node.A, "g_mhz": 5.5, "detuning_mhz": 0.0, "duration_ns": 1000.0,
                                "sample_ns": 2.0, "compare_ns": 100.0}),
    Experiment("transfer", "Hybrid state transfer of |e> from Q2A to Q2B",
               run_transfer, {**transfer_defaults(TransferVariant.FULL), "dump_states": False}),
    Experiment("transfer-tomo", "Process matrix of the state transfer",
               run_transfer_tomo, transfer_defaults(TransferVariant.FULL)),
    Experiment("ghz-prep", "Three-qubit GHZ preparation on one node",
               run_ghz_prep, {"node": Node.A, **_GHZ_DEFAULTS}),
    Experiment("ghz-transfer", "GHZ state of node A sent to node B by three transfers",
               run_ghz_transfer, {**_GHZ_DEFAULTS, **transfer_defaults(TransferVariant.FULL)}),
    Experiment("bell-st-half", "Remote Bell pair from a half transfer",
               run_bell_st_half, transfer_defaults(TransferVariant.HALF)),
    Experiment("network-ghz", "Two-node GHZ states grown from the half-transfer Bell pair",
               run_network_ghz, {**_GHZ_DEFAULTS, **transfer_defaults(TransferVariant.HALF)}),
    Experiment("cz-tomo", "Process matrix of the qutrit-model CZ",
               run_cz_tomo, {"node": Node.A, "partner": 1}),
    Experiment("rb", "Single-qubit Clifford randomized benchmarking",
               run_rb, {"qubit": "Q1A", "average_fidelity": None, "lengths": [1, 5, 10, 25, 50, 100, 200, 400],
                        "n_sequences": 30}),
    Experiment("xeb", "Two-qubit cross-entropy benchmarking of CZ cycles",
               run_xeb, {"qubits": ["Q1A", "Q2A"], "cz_error": 0.033, "cycles": [1, 2, 4, 6, 8, 10, 12, 15, 20],
                         "n_circuits": 50}),
    Experiment("fit-wirebond", "Wirebond loss model fit to standing-mode quality factors",
               run_fit_wirebond, {**_FIT_DEFAULTS, "f_min_ghz": 4.0, "f_max_ghz": 8.0}),
    Experiment("fit-coupler", "Coupler junction inductance fit to g(delta)",
               run_fit_coupler, {**_FIT_DEFAULTS, "node": Node.A, "l_t_guess_nh": 0.8}),
    Experiment("fit-loaded-t1", "Ground resistance fit to the loaded qubit T1(delta)",
               run_fit_loaded_t1, {**_FIT_DEFAULTS, "node": Node.A, "r_g_guess_ohm": 0.5, "g_transfer_mhz": 5.5}),
]}
EXPERIMENT_NAMES = list(EXPERIMENTS)


def get_experiment(name: str) -> Experiment:
    if name not in EXPERIMENTS:
        raise UnknownExperimentError(f"Unknown experiment '{name}'; registered experiments are {EXPERIMENT_NAMES}")
    return EXPERIMENTS[name]


def resolve_params(experiment: Experiment, params: dict) -> dict:
    unknown = sorted(set(params) - set(experiment.defaults))
    if len(unknown) > 0:
        raise ExperimentError(f"Unknown parameter(s) {unknown} for '{experiment.name}'; options are {sorted(experiment.defaults)}")
    return {**experiment.defaults, **params}


def run_experiment(name: str, ctx: ExperimentContext) -> dict:
    '''Runs one registered experiment with its defaults filled in; artifacts go to ctx.out.'''
    experiment = get_experiment(name)
    ctx = replace(ctx, params=resolve_params(experiment, ctx.params))
    ctx.out.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running '{name}' into {ctx.out}")
    return experiment.run(ctx)
