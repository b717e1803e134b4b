from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Union
import math

import numpy as np
from scipy.optimize import bisect, least_squares

from .device import ChannelConfig, CouplerConfig, DeviceConfig, QubitConfig, WirebondLossModel
from .logger import logger
from .utils_io import read_csv_columns


TWO_PI = 2 * math.pi


class FitError(RuntimeError):
    pass


class CouplingRangeError(ValueError):
    pass


@dataclass(frozen=True)
class StandingMode:
    l_m: float
    omega_m: float
    c_m: float


@dataclass(frozen=True)
class QSample:
    omega: float
    q: float


@dataclass(frozen=True)
class CouplingSample:
    delta: float
    g: float


@dataclass(frozen=True)
class T1Sample:
    delta: float
    t1: float


@dataclass(frozen=True)
class WirebondFit:
    model: WirebondLossModel
    residual_norm: float


@dataclass(frozen=True)
class CouplerFit:
    l_t: float
    residual_norm: float


@dataclass(frozen=True)
class LoadedT1Fit:
    r_g: float
    residual_norm: float


def _require_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be > 0, got {value}")


def mode_inductance(cfg: ChannelConfig) -> float:
    return 0.5 * (cfg.cable_l * cfg.cable_length + 2 * cfg.cpw_l * cfg.cpw_length)


def standing_mode_params(cfg: ChannelConfig, fsr: float, m: int) -> StandingMode:
    '''Series-LC equivalent of the m-th standing mode of the shorted cable.'''
    if m < 1:
        raise ValueError(f"Mode number must be >= 1, got {m}")
    _require_positive(fsr=fsr)
    l_m = mode_inductance(cfg)
    omega_m = m * TWO_PI * fsr
    return StandingMode(l_m=l_m, omega_m=omega_m, c_m=1.0 / (omega_m**2 * l_m))


def derived_fsr(cfg: ChannelConfig) -> float:
    # one-way delay of the cable plus both on-chip CPW sections
    delay = cfg.cable_length * math.sqrt(cfg.cable_l * cfg.cable_c) + 2 * cfg.cpw_length * math.sqrt(cfg.cpw_l * cfg.cpw_c)
    return 1.0 / (2 * delay)


def coupler_inductance(delta: float, cfg: CouplerConfig) -> float:
    cos_delta = math.cos(delta)
    if abs(cos_delta) < 1e-12:
        return 0.0
    return cfg.l_g**2 / (2 * cfg.l_g + cfg.l_w + cfg.l_t / cos_delta)


def qubit_mode_coupling(m_c: float, omega_m: float, omega_q: float, l_q: float, l_g: float, l_m: float) -> float:
    return -(m_c / 2) * math.sqrt(omega_m * omega_q / ((l_g + l_q) * (l_g + l_m)))


def coupling_at_phase(delta: float, coupler: CouplerConfig, l_q: float, l_m: float, omega_m: float, omega_q: float) -> float:
    return qubit_mode_coupling(coupler_inductance(delta, coupler), omega_m, omega_q, l_q, coupler.l_g, l_m)


def coupler_phase_for_coupling(g_target: float, coupler: CouplerConfig, l_q: float, l_m: float, omega_m: float,
                               omega_q: float) -> float:
    '''
    Coupler phase delta in [pi/2, pi] giving |g| = |g_target|, found by bisection on the monotonic branch.
    '''
    g_max = abs(coupling_at_phase(math.pi, coupler, l_q, l_m, omega_m, omega_q))
    target = abs(g_target)
    if target == 0:
        return math.pi / 2
    if target > g_max * (1 + 1e-12):
        raise CouplingRangeError(f"|g|/2pi = {target / TWO_PI / 1e6:.4f} MHz exceeds the coupler maximum {g_max / TWO_PI / 1e6:.4f} MHz")
    if target >= g_max:
        return math.pi

    def residual(delta):
        return abs(coupling_at_phase(delta, coupler, l_q, l_m, omega_m, omega_q)) - target

    return bisect(residual, math.pi / 2, math.pi, xtol=1e-15, rtol=8.9e-16, maxiter=200)


def channel_mode_q(omega_m: float, model: WirebondLossModel, l_m: float, cfg: ChannelConfig) -> float:
    '''Quality factor of a standing mode from the wirebond series resistance and the intrinsic cable Q.'''
    _require_positive(omega_m=omega_m, l_m=l_m)
    beta_c = omega_m * math.sqrt(cfg.cpw_l * cfg.cpw_c)
    cos2 = math.cos(beta_c * cfg.cpw_length)**2
    if model.r_s == 0 or cos2 < 1e-12:
        return model.q_0
    q_loss = omega_m * l_m / (cos2 * model.r_s)
    return 1.0 / (1.0 / q_loss + 1.0 / model.q_0)


def measurement_channel(device: DeviceConfig) -> ChannelConfig:
    '''Channel geometry of the wirebond loss measurement (its own CPW length when recorded).'''
    if device.wirebond.cpw_length is None:
        return device.channel
    return replace(device.channel, cpw_length=device.wirebond.cpw_length)


def fit_wirebond_loss(samples: Iterable[QSample], cfg: ChannelConfig, l_m: float=None, max_nfev: int=1000) -> WirebondFit:
    '''
    Least-squares fit of (R_s, Q_0) with residuals in 1/Q, where the loss model is linear.
    '''
    samples = list(samples)
    if len(samples) < 3:
        raise FitError(f"Wirebond fit needs at least 3 samples, got {len(samples)}")
    if len({s.omega for s in samples}) < 2:
        raise FitError("Wirebond fit data is degenerate: all samples share one frequency")
    l_m = l_m if l_m is not None else mode_inductance(cfg)
    omega = np.array([s.omega for s in samples])
    inv_q = 1.0 / np.array([s.q for s in samples])
    beta_l = omega * math.sqrt(cfg.cpw_l * cfg.cpw_c) * cfg.cpw_length
    loss_slope = np.cos(beta_l)**2 / (omega * l_m)
    # scale 1/Q residuals and 1/Q_0 to order one for the solver
    scale = 1e5

    def residuals(x):
        r_s, inv_q0 = x[0], x[1] / scale
        return scale * (loss_slope * r_s + inv_q0 - inv_q)

    result = least_squares(residuals, x0=[0.5, 1.0], bounds=([0.0, 1e-12], [np.inf, np.inf]),
                           xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=max_nfev)
    if not result.success:
        raise FitError(f"Wirebond fit did not converge: {result.message}")
    r_s, q_0 = float(result.x[0]), scale / float(result.x[1])
    residual_norm = float(np.linalg.norm(result.fun)) / scale
    logger.info(f"Wirebond fit: R_s = {r_s:.4f} Ohm, Q_0 = {q_0:.4g}, |residual| = {residual_norm:.3e}")
    return WirebondFit(model=WirebondLossModel(r_s=r_s, q_0=q_0), residual_norm=residual_norm)


def fit_coupler_inductance(samples: Iterable[CouplingSample], coupler: CouplerConfig, l_q: float, l_m: float,
                           omega_m: float, omega_q: float, max_nfev: int=1000) -> CouplerFit:
    '''One-parameter least squares for the junction inductance L_T from measured |g(delta)|.'''
    samples = list(samples)
    if len(samples) < 2:
        raise FitError(f"Coupler fit needs at least 2 samples, got {len(samples)}")
    nano = 1e-9

    def residuals(x):
        trial = replace(coupler, l_t=x[0] * nano)
        return np.array([(abs(coupling_at_phase(s.delta, trial, l_q, l_m, omega_m, omega_q)) - abs(s.g)) / (TWO_PI * 1e6)
                         for s in samples])

    # below 2 L_g + L_w the coupler inductance has a pole inside [pi/2, pi]
    lower = (2 * coupler.l_g + coupler.l_w) / nano * (1 + 1e-6)
    result = least_squares(residuals, x0=[max(coupler.l_t / nano, 1.01 * lower)], bounds=([lower], [100.0]), xtol=1e-12, ftol=1e-12,
                           gtol=1e-12, max_nfev=max_nfev)
    if not result.success:
        raise FitError(f"Coupler fit did not converge: {result.message}")
    l_t = float(result.x[0]) * nano
    logger.info(f"Coupler fit: L_T = {l_t / nano:.4f} nH")
    return CouplerFit(l_t=l_t, residual_norm=float(np.linalg.norm(result.fun)))


def _cpw_input_impedance(load: complex, omega: float, cfg: ChannelConfig) -> complex:
    z0 = math.sqrt(cfg.cpw_l / cfg.cpw_c)
    t = math.tan(omega * math.sqrt(cfg.cpw_l * cfg.cpw_c) * cfg.cpw_length)
    return z0 * (load + 1j * z0 * t) / (z0 + 1j * load * t)


def _parallel(z1: complex, z2: complex) -> complex:
    return z1 * z2 / (z1 + z2)


def qubit_input_admittance(delta: float, omega_q: float, qubit: QubitConfig, coupler: CouplerConfig,
                           cfg: ChannelConfig) -> complex:
    '''
    Admittance seen by the qubit capacitance: L_q into the coupler node, L_g to ground, the junction arm
    (L_w + L_T/cos delta), the far L_g to ground, then the CPW section to the wirebond where R_g shunts
    to ground in parallel with the channel's series inductance.
    '''
    l_q = qubit.l_q
    if l_q is None:
        raise ValueError("qubit_input_admittance needs the qubit inductance l_q (cable-coupled qubits only)")
    jw = 1j * omega_q
    z_wirebond = _parallel(complex(coupler.r_g), jw * mode_inductance(cfg)) if coupler.r_g > 0 else 0j
    z_cpw = _cpw_input_impedance(z_wirebond, omega_q, cfg)
    z_b = _parallel(jw * coupler.l_g, z_cpw)
    z_arm = jw * (coupler.l_w + coupler.l_t / math.cos(delta)) + z_b
    z_a = _parallel(jw * coupler.l_g, z_arm)
    return 1.0 / (jw * l_q + z_a)


def qubit_loaded_t1(delta: float, qubit: QubitConfig, coupler: CouplerConfig, cfg: ChannelConfig,
                    omega_q: float=None) -> float:
    '''
    Effective T1 of a cable-coupled qubit with the coupler at phase delta: 1/T1 = 1/T1_intrinsic + Re[Y]/C_q.
    omega_q defaults to the qubit's idle frequency.
    '''
    omega_q = omega_q if omega_q is not None else TWO_PI * qubit.f_idle
    if qubit.l_q is None:
        raise ValueError("qubit_loaded_t1 needs the qubit inductance l_q (cable-coupled qubits only)")
    if coupler.r_g == 0 or coupler_inductance(delta, coupler) == 0.0:
        return qubit.t1
    c_q = 1.0 / (omega_q**2 * (coupler.l_g + qubit.l_q))
    gamma = max(0.0, qubit_input_admittance(delta, omega_q, qubit, coupler, cfg).real / c_q)
    return 1.0 / (1.0 / qubit.t1 + gamma)


def fit_loaded_t1(samples: Iterable[T1Sample], qubit: QubitConfig, coupler: CouplerConfig, cfg: ChannelConfig,
                  omega_q: float=None, max_nfev: int=1000) -> LoadedT1Fit:
    '''Fits the shunt resistance R_g to measured T1(delta), residuals on a log scale.'''
    samples = list(samples)
    if len(samples) < 2:
        raise FitError(f"Loaded-T1 fit needs at least 2 samples, got {len(samples)}")

    def residuals(x):
        trial = replace(coupler, r_g=x[0])
        return np.array([math.log(qubit_loaded_t1(s.delta, qubit, trial, cfg, omega_q)) - math.log(s.t1) for s in samples])

    result = least_squares(residuals, x0=[max(coupler.r_g, 0.1)], bounds=([0.0], [1e3]), xtol=1e-12, ftol=1e-12,
                           gtol=1e-12, max_nfev=max_nfev)
    if not result.success:
        raise FitError(f"Loaded-T1 fit did not converge: {result.message}")
    logger.info(f"Loaded-T1 fit: R_g = {result.x[0]:.4f} Ohm")
    return LoadedT1Fit(r_g=float(result.x[0]), residual_norm=float(np.linalg.norm(result.fun)))


def read_q_samples(path: Union[str, Path]) -> list[QSample]:
    return [QSample(omega=TWO_PI * row["freq_hz"], q=row["q_value"]) for row in read_csv_columns(path, ["freq_hz", "q_value"])]


def read_coupling_samples(path: Union[str, Path]) -> list[CouplingSample]:
    return [CouplingSample(delta=row["delta_rad"], g=TWO_PI * row["g_hz"]) for row in read_csv_columns(path, ["delta_rad", "g_hz"])]


def read_t1_samples(path: Union[str, Path]) -> list[T1Sample]:
    return [T1Sample(delta=row["delta_rad"], t1=row["t1_s"]) for row in read_csv_columns(path, ["delta_rad", "t1_s"])]


def node_coupling_context(device: DeviceConfig, node: str) -> dict:
    '''Keyword arguments shared by the coupling maps of one node's cable-coupled qubit.'''
    qubit = device.qubit(f"Q2{node}")
    omega = TWO_PI * device.communication_mode_frequency
    return dict(coupler=device.coupler(node), l_q=qubit.l_q, l_m=mode_inductance(device.channel), omega_m=omega, omega_q=omega)
