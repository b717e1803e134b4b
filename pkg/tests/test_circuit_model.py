import math
from dataclasses import replace

import pytest
import torch

from qnetsim.circuit_model import (TWO_PI, CouplingRangeError, CouplingSample, FitError, QSample, T1Sample,
                                   channel_mode_q, coupler_inductance, coupler_phase_for_coupling, coupling_at_phase, derived_fsr,
                                   fit_coupler_inductance, fit_loaded_t1, fit_wirebond_loss, measurement_channel,
                                   mode_inductance, node_coupling_context, qubit_loaded_t1, qubit_mode_coupling,
                                   read_q_samples, standing_mode_params)
from qnetsim.device import WirebondLossModel
from qnetsim.utils_io import write_csv


def test_mode_inductance(device):
    assert mode_inductance(device.channel) == pytest.approx(121.05e-9, rel=1e-3)


def test_standing_mode(device):
    mode = standing_mode_params(device.channel, device.fsr, 3)
    assert mode.omega_m == pytest.approx(TWO_PI * 315e6)
    assert 1 / math.sqrt(mode.l_m * mode.c_m) == pytest.approx(mode.omega_m)
    with pytest.raises(ValueError):
        standing_mode_params(device.channel, device.fsr, 0)


def test_derived_fsr_close_to_configured(device):
    assert derived_fsr(device.channel) == pytest.approx(device.fsr, rel=0.02)


def test_coupling_range(device):
    ctx = node_coupling_context(device, "A")
    g_max = abs(coupling_at_phase(math.pi, **ctx)) / TWO_PI
    assert g_max == pytest.approx(29e6, abs=1e6)
    assert coupling_at_phase(math.pi / 2, **ctx) == 0.0


def test_phase_for_coupling_inverts_the_map(device):
    ctx = node_coupling_context(device, "B")
    target = TWO_PI * 5.5e6
    delta = coupler_phase_for_coupling(target, **ctx)
    assert math.pi / 2 < delta < math.pi
    assert abs(coupling_at_phase(delta, **ctx)) == pytest.approx(target, rel=1e-9)
    assert coupler_phase_for_coupling(0.0, **ctx) == math.pi / 2
    with pytest.raises(CouplingRangeError):
        coupler_phase_for_coupling(TWO_PI * 50e6, **ctx)


def test_wirebond_fit_recovers_model(device):
    cfg = measurement_channel(device)
    l_m = mode_inductance(cfg)
    truth = WirebondLossModel(r_s=0.38, q_0=90.9e3)
    samples = [QSample(omega=TWO_PI * f, q=channel_mode_q(TWO_PI * f, truth, l_m, cfg)) for f in
               [4.0e9 + 0.25e9 * i for i in range(17)]]
    fit = fit_wirebond_loss(samples, cfg, l_m)
    assert fit.model.r_s == pytest.approx(0.38, rel=1e-3)
    assert fit.model.q_0 == pytest.approx(90.9e3, rel=1e-3)
    assert fit.residual_norm < 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_wirebond_fit_with_noisy_samples(device, seed):
    cfg = measurement_channel(device)
    l_m = mode_inductance(cfg)
    generator = torch.Generator().manual_seed(seed)
    freqs = [4.0e9 + 0.25e9 * i for i in range(17)]
    factors = 1 + 0.05 * torch.randn(len(freqs), generator=generator, dtype=torch.float64)
    samples = [QSample(omega=TWO_PI * f, q=channel_mode_q(TWO_PI * f, device.wirebond, l_m, cfg) * float(k))
               for f, k in zip(freqs, factors)]
    fit = fit_wirebond_loss(samples, cfg, l_m)
    assert fit.model.r_s == pytest.approx(device.wirebond.r_s, rel=0.15)


def test_wirebond_fit_degenerate(device):
    with pytest.raises(FitError):
        fit_wirebond_loss([QSample(omega=1.0, q=1e4)] * 5, device.channel)
    with pytest.raises(FitError):
        fit_wirebond_loss([QSample(omega=1.0, q=1e4), QSample(omega=2.0, q=1e4)], device.channel)


def test_read_q_samples(tmp_path):
    path = tmp_path / "q.csv"
    write_csv(path, ["freq_hz", "q_value"], [[5e9, 1e4], [6e9, 2e4]])
    samples = read_q_samples(path)
    assert samples[1].omega == pytest.approx(TWO_PI * 6e9)
    assert samples[1].q == 2e4


def test_coupler_fit_recovers_junction_inductance(device):
    ctx = node_coupling_context(device, "A")
    deltas = [math.pi / 2 + 0.05 + i * 0.06 for i in range(25)]
    samples = [CouplingSample(delta=d, g=coupling_at_phase(d, **ctx)) for d in deltas]
    start = {**ctx, "coupler": replace(ctx["coupler"], l_t=0.8e-9)}
    fit = fit_coupler_inductance(samples, **start)
    assert fit.l_t == pytest.approx(0.62e-9, rel=1e-4)


def test_loaded_t1_fit_recovers_shunt(device):
    qubit = device.qubit("Q2A")
    coupler = device.coupler("A")
    deltas = [math.pi / 2 + 0.05 + i * 0.06 for i in range(25)]
    samples = [T1Sample(delta=d, t1=qubit_loaded_t1(d, qubit, coupler, device.channel)) for d in deltas]
    assert samples[-1].t1 < samples[0].t1 <= qubit.t1
    fit = fit_loaded_t1(samples, qubit, replace(coupler, r_g=0.5), device.channel)
    assert fit.r_g == pytest.approx(coupler.r_g, rel=1e-3)


def test_loaded_t1_at_rabi_coupling(device):
    # T1 of Q2A with the coupler set for the 5.5 MHz vacuum Rabi, against the fitted loaded value
    qubit = device.qubit("Q2A")
    ctx = node_coupling_context(device, "A")
    delta = coupler_phase_for_coupling(TWO_PI * 5.5e6, **ctx)
    assert device.coupler("A").r_g == 1.0
    t1 = qubit_loaded_t1(delta, qubit, ctx["coupler"], device.channel)
    assert t1 == pytest.approx(qubit.t1_loaded, rel=0.3)


def test_loaded_t1_rate_scales_with_coupling_squared(device):
    qubit = device.qubit("Q2A")
    ctx = node_coupling_context(device, "A")

    def induced(g_mhz):
        delta = coupler_phase_for_coupling(TWO_PI * g_mhz * 1e6, **ctx)
        return 1 / qubit_loaded_t1(delta, qubit, ctx["coupler"], device.channel) - 1 / qubit.t1

    assert induced(4.08) / induced(5.5) == pytest.approx((4.08 / 5.5)**2, rel=0.1)


def test_loaded_t1_without_shunt_is_intrinsic(device):
    qubit = device.qubit("Q2A")
    coupler = replace(device.coupler("A"), r_g=0.0)
    assert qubit_loaded_t1(2.5, qubit, coupler, device.channel) == qubit.t1
    with pytest.raises(ValueError):
        qubit_loaded_t1(2.5, device.qubit("Q1A"), device.coupler("A"), device.channel)


def test_coupler_inductance(device):
    coupler = replace(device.coupler("A"), l_g=0.2e-9, l_w=0.1e-9, l_t=0.620e-9)
    assert coupler_inductance(math.pi / 2, coupler) == 0.0
    assert coupler_inductance(math.pi, coupler) == pytest.approx(-0.04e-9 / 0.12, rel=1e-9)
    assert coupler_inductance(0.0, coupler) == pytest.approx(0.04e-9 / 1.12, rel=1e-9)


def test_qubit_mode_coupling_scaling():
    omega = TWO_PI * 5.8e9
    args = dict(l_q=8.4e-9, l_g=0.2e-9, l_m=121e-9)
    assert qubit_mode_coupling(0.0, omega, omega, **args) == 0.0
    g = qubit_mode_coupling(-0.333e-9, omega, omega, **args)
    assert g > 0
    assert qubit_mode_coupling(-0.333e-9, 2 * omega, omega, **args) == pytest.approx(math.sqrt(2) * g, rel=1e-12)
