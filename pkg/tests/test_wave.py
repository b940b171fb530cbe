from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughwave import metric as M
from roughwave import wave as W
from roughwave.exceptions import CflViolation, DimensionMismatch, PreconditionViolated


def _grid(field, n, T, **kw):
    return W.GridSpec.build(field, n, T, **kw)


def test_flat_operator_kernel_and_symbol():
    n = 256
    op = W.assemble_operator(M.flat(1), n)
    assert np.max(np.abs(op.apply(np.ones(n)))) < 1e-9
    x = np.arange(n) / n
    u = np.sin(2 * np.pi * x)
    h = 1 / n
    lam = 2 / h**2 * (1 - np.cos(2 * np.pi * h))
    assert np.allclose(op.apply(u), -lam * u, atol=1e-9 * lam)


def test_flat_2d_operator_symbol():
    n = 32
    op = W.assemble_operator(M.flat(2), n)
    x = W.GridSpec(2, n, 1e-3, 0.0).nodes()
    u = np.cos(2 * np.pi * x[:, 0]) * np.sin(4 * np.pi * x[:, 1])
    h = 1 / n
    lam = 2 / h**2 * (2 - np.cos(2 * np.pi * h) - np.cos(4 * np.pi * h))
    assert np.allclose(op.apply(u), -lam * u, atol=1e-9 * lam)


@pytest.mark.parametrize("field", [M.variable_kappa_metric(1), M.kink_metric(2), M.MetricField(2, "1", (("1.2", "0.3*sin(2*pi*x1)"), ("0.3*sin(2*pi*x1)", "1")))])
def test_operator_symmetric_in_weighted_product(field, rng):
    n = 64 if field.dim == 1 else 16
    op = W.assemble_operator(field, n)
    for _ in range(100):
        u, v = rng.standard_normal((2, n**field.dim))
        a, b = op.inner(op.apply(u), v), op.inner(u, op.apply(v))
        assert abs(a - b) <= 1e-12 * (abs(a) + abs(b) + 1)


def test_zero_state_stays_zero():
    f = M.flat(1)
    g = _grid(f, 64, 0.5)
    tr = W.simulate(W.WaveState.zeros(g), f, g)
    assert np.all(tr.u == 0) and np.all(tr.v == 0) and np.all(tr.energy == 0)


def test_dispersion_relation():
    f = M.flat(1)
    n = 256
    g = _grid(f, n, 1.0)
    x = g.nodes()[:, 0]
    mode = np.cos(2 * np.pi * x)
    tr = W.simulate(W.WaveState(mode, np.zeros(n)), f, g)
    a = tr.u @ mode / (mode @ mode)
    # a_{k+1} + a_{k-1} = 2 cos(w dt) a_k for a single discrete mode
    c = np.dot(a[2:] + a[:-2], a[1:-1]) / (2 * np.dot(a[1:-1], a[1:-1]))
    w_meas = np.arccos(c) / g.dt
    h = 1 / n
    w_h = np.sqrt(2 / h**2 * (1 - np.cos(2 * np.pi * h)) + 1)
    assert w_meas == pytest.approx(w_h, rel=1e-4)


def test_constant_data_scalar_leapfrog():
    f = M.flat(1)
    g = _grid(f, 32, 2.0)
    tr = W.simulate(W.WaveState(np.ones(32), np.zeros(32)), f, g)
    theta = np.arccos(1 - g.dt**2 / 2)
    k = np.arange(g.nsteps + 1)
    assert np.allclose(tr.u[:, 0], np.cos(theta * k), atol=1e-12)
    assert np.ptp(tr.u, axis=1).max() < 1e-12


def test_energy_closed_forms():
    f = M.flat(1)
    g = _grid(f, 256, 1.0)
    assert W.energy(W.WaveState.zeros(g), f, g) == 0
    x = g.nodes()[:, 0]
    e = W.energy(W.WaveState(np.sin(2 * np.pi * x), np.zeros(256)), f, g)
    assert e == pytest.approx(0.25 * (1 + 4 * np.pi**2), rel=1e-3)


def test_conserved_form_over_long_run():
    f = M.flat(1)
    g = _grid(f, 256, 4.0)
    x = g.nodes()[:, 0]
    tr = W.simulate(W.WaveState(np.sin(2 * np.pi * x) + 0.3 * np.cos(6 * np.pi * x), np.cos(2 * np.pi * x)), f, g)
    assert tr.discrete_energy_drift() <= 1e-6
    # the physical energy oscillates at O((dt omega)^2)
    assert tr.energy_drift() < 1e-3


@given(st.integers(0, 2**31 - 1))
def test_conservation_and_reversibility_random_data(seed):
    rng = np.random.default_rng(seed)
    f = M.kink_metric(2)
    g = _grid(f, 12, 0.3)
    s0 = W.WaveState(rng.standard_normal(144), rng.standard_normal(144))
    tr = W.simulate(s0, f, g)
    assert tr.discrete_energy_drift() < 1e-11
    assert np.all(tr.energy > 0)
    back = W.simulate(W.WaveState(tr.u[-1], tr.v[-1], g.T), f, g, backward=True)
    assert np.allclose(back.u[-1], s0.u, atol=1e-10) and np.allclose(back.v[-1], s0.v, atol=1e-10)


def test_source_work_balance(rng):
    f = M.variable_kappa_metric(1)
    g = _grid(f, 64, 1.0)
    x = g.nodes()[:, 0]
    src = lambda t: np.sin(3 * t) * np.exp(-((x - 0.5) ** 2) / 0.01)
    tr = W.simulate(W.WaveState(np.sin(2 * np.pi * x), np.zeros(64)), f, g, source=src)
    assert np.allclose(tr.discrete_energy - tr.discrete_energy[0], tr.work, atol=1e-12)


def test_source_record_equals_callable():
    f = M.flat(1)
    g = _grid(f, 32, 0.5)
    x = g.nodes()[:, 0]
    fn = lambda t: np.cos(t) * np.sin(2 * np.pi * x)
    rec = np.stack([fn(t) for t in g.times])
    a = W.simulate(W.WaveState.zeros(g), f, g, source=fn, save_every=g.nsteps)
    b = W.simulate(W.WaveState.zeros(g), f, g, source=rec, save_every=g.nsteps)
    assert np.allclose(a.u[-1], b.u[-1], atol=1e-14)


def test_step_matches_simulate():
    f = M.flat(1)
    g = _grid(f, 32, 0.1)
    x = g.nodes()[:, 0]
    s = W.WaveState(np.sin(2 * np.pi * x), np.zeros(32))
    for _ in range(g.nsteps):
        s = W.step(s, f, g)
    tr = W.simulate(W.WaveState(np.sin(2 * np.pi * x), np.zeros(32)), f, g, save_every=g.nsteps)
    assert np.allclose(s.u, tr.u[-1], atol=1e-14)


def test_cfl_and_shape_checks():
    f = M.flat(1)
    bad = W.GridSpec(1, 64, 0.05, 1.0)
    with pytest.raises(CflViolation):
        W.simulate(W.WaveState(np.zeros(64), np.zeros(64)), f, bad)
    g = _grid(f, 64, 0.1)
    with pytest.raises(DimensionMismatch):
        W.simulate(W.WaveState(np.zeros(63), np.zeros(63)), f, g)
    with pytest.raises(PreconditionViolated):
        W.GridSpec.build(f, 64, -1.0)


def test_grid_dt_bound():
    for f in (M.flat(2), M.kink_metric(2), M.conformal_perturbation(M.flat(1), -0.3)):
        g = _grid(f, 64, 1.0)
        assert g.dt * g.nsteps == pytest.approx(1.0)
        assert g.dt <= 0.5 / 64 / np.sqrt(W.max_upper_eig(f, 64)) * (1 + 1e-12)


def test_trajectory_binary_round_trip(tmp_path):
    f = M.flat(2)
    g = _grid(f, 8, 0.2)
    x = g.nodes()
    tr = W.simulate(W.WaveState(np.sin(2 * np.pi * x[:, 0]), np.zeros(64)), f, g, save_every=5)
    W.write_trajectory(tr, tmp_path / "traj")
    header, arr = W.read_trajectory(tmp_path / "traj")
    assert arr.shape == (len(tr.saved_steps), 2, 8, 8)
    assert np.array_equal(arr[:, 0].reshape(len(tr.saved_steps), -1), tr.u)
    assert (tmp_path / "traj.bin").stat().st_size == arr.size * 8
    raw = np.fromfile(tmp_path / "traj.bin", dtype="<f8")
    assert np.array_equal(raw, arr.ravel())
