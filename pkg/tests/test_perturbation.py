from __future__ import annotations

import csv

import numpy as np
import pytest

from roughwave import metric as M
from roughwave import perturbation as P
from roughwave import region as R
from roughwave import wave as W
from roughwave.exceptions import GccFailure, NyquistViolation


@pytest.fixture(scope="module")
def base():
    f = M.flat(1)
    g = W.GridSpec.build(f, 256, 0.8)
    return f, g


@pytest.mark.parametrize("k", [4, 8, 16, 32])
def test_packet_normalization_and_band(base, k):
    f, g = base
    pk = P.make_wave_packet(f, g, [0.5], [1], k, 0.05)
    assert W.energy(pk.state(), f, g) == pytest.approx(1.0, abs=1e-10)
    frac = P.band_fraction(pk, g)
    assert frac > 0.5
    if k >= 16:
        assert frac > 0.99


def test_packet_resolution_checks(base):
    f, g = base
    with pytest.raises(NyquistViolation):
        P.make_wave_packet(f, g, [0.5], [1], 40, 0.05)
    with pytest.raises(NyquistViolation):
        P.make_wave_packet(f, g, [0.5], [1], 8, 0.01)


def test_packet_travels_along_direction(base):
    f, g = base
    pk = P.make_wave_packet(f, g, [0.3], [1], 16, 0.05)
    tr = W.simulate(pk.state(), f, g, save_every=g.nsteps)
    x = g.nodes()[:, 0]
    dens = tr.u[-1] ** 2
    # centroid of |u|^2 near x0 + T (group speed close to 1 at this k)
    ang = np.angle(np.sum(dens * np.exp(2j * np.pi * x))) / (2 * np.pi) % 1.0
    assert ang == pytest.approx((0.3 + 0.8) % 1.0, abs=0.02)


def test_matched_metric_residual_identity(base):
    f, g = base
    pk = P.make_wave_packet(f, g, [0.5], [1], 8, 0.05)
    r = P.cross_control_experiment(f, 0.0, pk, R.arc(0.2, 0.8), 0.8, tol=1e-8, n=256)
    assert r.residual_energy == pytest.approx(r.matched_residual, rel=1e-9, abs=1e-14)
    assert r.control_distance == 0.0
    assert r.energy_identity_error < 1e-10
    assert r.cross_term > 0  # the control does work on its own target


def test_perturbed_run_energy_balance(base):
    f, g = base
    pk = P.make_wave_packet(f, g, [0.5], [1], 8, 0.05)
    r = P.cross_control_experiment(f, 0.05, pk, R.arc(0.2, 0.8), 0.8, n=256)
    assert r.energy_identity_error < 1e-10
    assert r.residual_energy > r.matched_residual
    assert all(v >= 0 for v in (r.residual_energy, r.matched_residual, r.control_distance, r.cross_term))


def test_gcc_precondition_enforced(base):
    f, g = base
    pk = P.make_wave_packet(f, g, [0.5], [1], 8, 0.05)
    with pytest.raises(GccFailure):
        P.cross_control_experiment(f, 0.05, pk, R.arc(0.45, 0.55), 0.3, n=256)


def test_cross_term_diagnostic_cases():
    mk = lambda k, c: P.CrossControlResult(0.05, k, 0.0, 0.0, 0.0, c)
    rep = P.cross_term_diagnostic([mk(8, 1.0), mk(16, 0.5), mk(32, 0.25)])
    assert rep.slope == pytest.approx(-1.0) and rep.decreasing and not rep.degenerate
    rep = P.cross_term_diagnostic([mk(8, 1.0)])
    assert rep.degenerate and rep.slope is None and rep.decreasing is None


def test_smooth_data_zero_eps_and_slope():
    f = M.flat(1)
    datum = lambda x: (np.sin(2 * np.pi * x[:, 0]), 0 * x[:, 0])
    rep = P.smooth_data_continuity_experiment(f, R.arc(0.2, 0.8, "smooth"), 1.0, [0.0], datum, n=128)
    assert rep.distance == [0.0] and rep.slope is None
    rep = P.smooth_data_continuity_experiment(f, R.arc(0.2, 0.8, "smooth"), 1.0, [0.005, 0.01, 0.02], datum, n=128)
    assert rep.within and rep.slope == pytest.approx(1.0, abs=0.15)


def test_results_csv(tmp_path):
    rows = [P.CrossControlResult(0.05, k, 0.1 * k, 1e-9, 1.0, 0.5) for k in (8, 16)]
    P.write_results_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        data = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in data] == [8, 16] and float(data[1]["residual"]) == 1.6
