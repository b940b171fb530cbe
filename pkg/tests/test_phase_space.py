from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughwave import metric as M
from roughwave import phase_space as PS
from roughwave import wave as W
from roughwave.exceptions import DimensionMismatch, NyquistViolation, PreconditionViolated, ScaleTooFine
from roughwave.perturbation import make_wave_packet


@pytest.fixture(scope="module")
def packet_run():
    f = M.flat(1)
    g = W.GridSpec.build(f, 256, 2.0)
    pk = make_wave_packet(f, g, [0.3], [1.0], 16, 0.05)
    tr = W.simulate(pk.state(), f, g)
    return f, g, tr, PS.husimi_transform(tr, PS.default_scale(16))


def test_plane_wave_concentrates_at_its_frequency():
    k, n, sig = 8, 128, 1 / 16
    om = np.sqrt((2 * np.pi * k) ** 2 + 1)
    tt = np.arange(0, 1.0, 1 / 2048)
    x = np.arange(n) / n
    U = np.exp(1j * (2 * np.pi * k * x[None] - om * tt[:, None]))
    d = PS.husimi_samples(tt, U, sig)
    T_, X_ = np.meshgrid(d.tau, d.xi, indexing="ij")
    near = np.hypot(T_ + om, X_ - 2 * np.pi * k) < 2 / sig
    assert (d.mass * near[None, None]).sum() / d.total_mass >= 0.95


def test_zero_trajectory_gives_zero_density():
    tt = np.arange(0, 1.0, 1 / 256)
    d = PS.husimi_samples(tt, np.zeros((tt.size, 64)), 0.1)
    assert d.total_mass == 0 and d.degenerate
    c = PS.char_concentration(d)
    assert c.fraction == 1.0 and c.degenerate


def test_two_separated_packets_add(packet_run):
    f, g, _, _ = packet_run
    pa = make_wave_packet(f, g, [0.2], [1.0], 16, 0.04)
    pb = make_wave_packet(f, g, [0.7], [1.0], 16, 0.04)
    ta = W.simulate(pa.state(), f, g)
    tb = W.simulate(pb.state(), f, g)
    ts = ta.times[ta.saved_steps]
    sig = 0.07  # window tails at distance 0.5 are what the cross term measures
    da = PS.husimi_samples(ts, ta.u, sig, energy=1.0)
    db = PS.husimi_samples(ts, tb.u, sig, energy=1.0)
    dab = PS.husimi_samples(ts, ta.u + tb.u, sig, energy=1.0)
    cross = np.abs(dab.mass - da.mass - db.mass).sum() / (da.mass + db.mass).sum()
    assert cross <= 0.05


def test_mass_reproduces_energy(packet_run):
    *_, d = packet_run
    assert d.total_mass == pytest.approx(1.0, abs=0.02)
    assert np.all(d.mass >= 0)


def test_free_packet_concentrates_and_follows_ray(packet_run):
    *_, d = packet_run
    assert PS.char_concentration(d, 0.1).fraction >= 0.9
    assert PS.centroid_transport_error(d, 0.3).max() < 0.02


def test_static_symbol_sees_no_mass(packet_run):
    *_, d = packet_run
    sym = PS.PhaseSymbol(1.0, 0.4, 1.3, 0.3, direction="static")
    fwd = PS.PhaseSymbol(1.0, 0.4, 1.3, 0.3)
    # only Gaussian window leakage reaches the static directions
    assert abs(d.pair(sym)) < 1e-6 * d.pair(fwd)


def test_symbol_away_from_ray_pairs_to_nearly_zero(packet_run):
    _, _, tr, _ = packet_run
    d = PS.husimi_transform(tr, 0.1)
    on = PS.PhaseSymbol(1.0, 0.1, 1.3, 0.1)
    off = PS.PhaseSymbol(1.0, 0.1, 1.8, 0.1)  # half a period from the ray
    assert abs(d.pair(off)) <= 1e-3 * d.pair(on)
    hp = [PS.transport_residual([d], s)[0] for s in (on, off)]
    assert hp[1] <= 1e-3 * max(hp[0], d.pair(on))


def test_static_bump_is_off_characteristic():
    tt = np.arange(0, 3.0, 1 / 512)
    x = np.arange(256) / 256
    r = np.mod(x - 0.3 + 0.5, 1) - 0.5
    u0 = np.exp(-r**2 / (2 * 0.05**2)) * np.cos(2 * np.pi * 8 * r)
    d = PS.husimi_samples(tt, np.repeat(u0[None], tt.size, 0), PS.default_scale(8))
    assert PS.char_concentration(d, 0.1).fraction < 0.1


@given(st.floats(0.5, 2.5), st.floats(0, 1), st.floats(-3, 3), st.floats(-3, 3))
def test_hamilton_derivative_against_finite_differences(t, x, tau, xi):
    metric = M.smooth_bump_metric(1)
    sym = PS.PhaseSymbol(1.5, 1.0, 0.4, 0.45)
    if tau**2 + xi**2 < 0.1:
        return
    G = float(metric.g_upper(np.array([[x]]))[0, 0, 0])
    dG = float(metric.grad_g_upper(np.array([[x]]))[0, 0, 0, 0])
    a = lambda t_, x_, ta_, xi_: float(sym(np.array(t_), np.array(x_), np.array(ta_), np.array(xi_)))
    h = 1e-6
    at = (a(t + h, x, tau, xi) - a(t - h, x, tau, xi)) / (2 * h)
    ax = (a(t, x + h, tau, xi) - a(t, x - h, tau, xi)) / (2 * h)
    axi = (a(t, x, tau, xi + h) - a(t, x, tau, xi - h)) / (2 * h)
    atau = (a(t, x, tau + h, xi) - a(t, x, tau - h, xi)) / (2 * h)
    # {p, a} for p = -tau^2 + G xi^2
    expect = -2 * tau * at + 2 * G * xi * ax - dG * xi**2 * axi
    got = float(sym.hamilton_derivative(metric)(np.array(t), np.array(x), np.array(tau), np.array(xi)))
    assert got == pytest.approx(expect, abs=1e-6 * (1 + abs(expect)))
    # the symbol does not depend on the radial scale of (tau, xi)
    assert a(t, x, 2 * tau, 2 * xi) == pytest.approx(a(t, x, tau, xi), abs=1e-14)
    del atau


def test_ladder_helpers(tmp_path):
    assert PS.is_decreasing([3, 2, 1]) and not PS.is_decreasing([1, 1])
    PS.write_summary_csv([(8, 0.9, 0.1), (16, 0.95, 0.05)], tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[1]["k"] == "16" and float(rows[0]["residual"]) == 0.1
    assert PS.resolving_scale(0.05, 32) == pytest.approx(7 / (0.05 * 2 * np.pi * 32))


def test_overlap_self_is_one(packet_run):
    *_, d = packet_run
    assert PS.overlap_mass(d, d) == pytest.approx(1.0)


def test_density_binary_round_trip(packet_run, tmp_path):
    *_, d = packet_run
    d.write(tmp_path / "dens")
    back = PS.PhaseDensity.read(tmp_path / "dens")
    assert np.array_equal(back.mass, d.mass) and np.array_equal(back.tau, d.tau)
    raw = np.fromfile(tmp_path / "dens.bin", dtype="<f8")
    assert raw.size == d.mass.size and np.array_equal(raw.reshape(d.mass.shape), d.mass)


def test_resolution_errors():
    tt = np.arange(0, 1.0, 1 / 256)
    u = np.zeros((tt.size, 64))
    with pytest.raises(ScaleTooFine):
        PS.husimi_samples(tt, u, 0.01)
    x = np.arange(64) / 64
    fast = np.cos(2 * np.pi * 20 * x)[None] * np.ones((16, 1))
    with pytest.raises(NyquistViolation):
        PS.husimi_samples(np.arange(16) / 16, fast, 0.3)
    with pytest.raises(PreconditionViolated):
        PS.husimi_samples(tt[:20], u[:20], 0.1)
    with pytest.raises(DimensionMismatch):
        PS.husimi_samples(tt, u, 0.1, metric=M.flat(2))
    with pytest.raises(PreconditionViolated):
        PS.PhaseSymbol(0, 1, 0, 1, direction="sideways")(np.zeros(1), np.zeros(1), np.ones(1), np.ones(1))


def test_transformer(packet_run):
    _, _, tr, d = packet_run
    est = PS.HusimiTransformer(k=16, etas=(0.05, 0.1)).fit(tr)
    out = est.transform()
    assert out.shape == (2,) and out[0] <= out[1]
    assert out[1] == pytest.approx(PS.char_concentration(d, 0.1).fraction)
