"""Cross-metric control experiments and smooth-data continuity.

The control computed for ``g`` is fed, unchanged, to the equation with
``(1 + eps) g``. For high-frequency packet data the residual energy stays of
order one, while for smooth data the mismatch is linear in ``eps``.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .exceptions import GccFailure, NyquistViolation
from .gcc import check_gcc
from .hum import compute_hum_control
from .metric import MetricField, conformal_perturbation
from .region import ControlRegion
from .wave import GridSpec, WaveState, assemble_operator, energy, simulate


@dataclass
class WavePacket:
    x0: np.ndarray
    direction: np.ndarray
    k: int
    sigma: float
    y0: np.ndarray
    y1: np.ndarray
    omega: float

    def state(self) -> WaveState:
        return WaveState(self.y0.copy(), self.y1.copy())


def _wrapped(grid: GridSpec, x0):
    x = grid.nodes()
    return np.mod(x - np.asarray(x0, dtype=float) + 0.5, 1.0) - 0.5


def make_wave_packet(field: MetricField, grid: GridSpec, x0, direction, k: int, sigma: float) -> WavePacket:
    """Gaussian packet ``a(x) cos(2 pi k dir.(x - x0))`` moving along ``dir``.

    ``v0 = omega a sin(...)`` with ``omega`` the discrete frequency of the
    carrier, so the packet travels one way; energy is normalized to 1.
    """
    if k > grid.n / 8:
        raise NyquistViolation("k must not exceed a quarter of the Nyquist wavenumber", k=k, limit=grid.n / 8)
    if sigma < 8 * grid.h:
        raise NyquistViolation("envelope must span at least 8 grid cells", sigma=sigma, h=grid.h)
    op = assemble_operator(field, grid.n)
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    d = d / np.linalg.norm(d)
    r = _wrapped(grid, np.atleast_1d(x0))
    env = np.exp(-np.sum(r**2, axis=1) / (2 * sigma**2))
    phase = 2 * np.pi * k * (r @ d)
    carrier = np.cos(2 * np.pi * k * (grid.nodes() @ d))
    omega = float(np.sqrt(op.inner(carrier, op.K @ carrier) / op.inner(carrier, carrier)))
    u0 = env * np.cos(phase)
    v0 = omega * env * np.sin(phase)
    e = energy(WaveState(u0, v0), op, grid)
    s = 1.0 / np.sqrt(e)
    return WavePacket(np.atleast_1d(np.asarray(x0, float)), d, int(k), float(sigma), u0 * s, v0 * s, omega)


def band_fraction(packet: WavePacket, grid: GridSpec) -> float:
    """Share of the energy-weighted Fourier mass with ``|m|`` in ``[k/2, 2k]``."""
    shape = grid.shape
    m = np.fft.fftfreq(grid.n, 1.0 / grid.n)
    mag = np.sqrt(sum(mm**2 for mm in np.meshgrid(*([m] * grid.dim), indexing="ij")))
    u = np.abs(np.fft.fftn(packet.y0.reshape(shape))) ** 2
    v = np.abs(np.fft.fftn(packet.y1.reshape(shape))) ** 2
    w = (1 + (2 * np.pi * mag) ** 2) * u + v
    band = (mag >= packet.k / 2) & (mag <= 2 * packet.k)
    return float(w[band].sum() / w.sum())


@dataclass
class CrossControlResult:
    eps: float
    k: int
    residual_energy: float
    matched_residual: float
    control_distance: float
    cross_term: float
    energy_identity_error: float = 0.0
    cg_iterations: tuple = ()
    extra: dict = dc_field(default_factory=dict)

    def row(self) -> dict:
        return {"eps": self.eps, "k": self.k, "residual": self.residual_energy,
                "matched_residual": self.matched_residual, "control_distance": self.control_distance,
                "cross_term": self.cross_term}


def _weighted_norm(grid, op, rec):
    return float(np.sqrt(np.dot(grid.time_weights(), (rec * rec) @ op.weights)))


def cross_control_experiment(field: MetricField, eps: float, packet: WavePacket, region: ControlRegion, T: float,
                             tol: float = 1e-8, n: int | None = None, gcc_sampling=(64, 32),
                             check: bool = True, keep_trajectories: bool = False) -> CrossControlResult:
    """Drive ``(1+eps) g`` with the HUM control computed for ``g``."""
    n = n if n is not None else int(round(np.sqrt(packet.y0.size) if field.dim == 2 else packet.y0.size))
    pert = conformal_perturbation(field, eps)
    # one grid for both metrics so that the control record is shared
    grid = GridSpec.build(field, n, T)
    grid_p = GridSpec.build(pert, n, T)
    if grid_p.dt < grid.dt:
        grid = grid_p
    if check:
        for name, fld in (("base", field), ("perturbed", pert)):
            rep = check_gcc(fld, region, T, gcc_sampling)
            if not rep.holds:
                raise GccFailure(f"GCC fails for the {name} field", which=name, eps=eps, report=rep.to_dict())
    op = assemble_operator(field, n)
    op_p = assemble_operator(pert, n)
    b = region.weight(grid.nodes())
    cert = compute_hum_control(field, grid, region, packet.y0, packet.y1, tol)
    src = cert.control * b
    y_t = simulate(packet.state(), op_p, grid, source=src, save_every=grid.nsteps, observe=b, observe_kind="v")
    residual = energy(y_t.final, op, grid)
    # discrete energy balance for (1+eps) g: change of the conserved form equals the source work
    de = y_t.discrete_energy[-1] - y_t.discrete_energy[0]
    ident = abs(de - y_t.work[-1]) / max(abs(y_t.discrete_energy[0]), 1e-300)
    if eps == 0:
        cert_p = cert
    else:
        cert_p = compute_hum_control(pert, grid, region, packet.y0, packet.y1, tol)
    dist = _weighted_norm(grid, op, cert.control - cert_p.control)
    extra = {
        "perturbed_matched_residual": cert_p.final_energy,
        "perturbed_energy_T": float(y_t.energy[-1]),
        "perturbed_energy_0": float(y_t.energy[0]),
        "work": float(y_t.work[-1]),
        "control_norm": cert.control_l2_norm,
        "dt": grid.dt,
        "n": n,
    }
    if keep_trajectories:
        extra["control"] = cert.control
        extra["trajectory"] = y_t
    return CrossControlResult(float(eps), packet.k, float(residual), float(cert.final_energy), dist,
                              float(abs(y_t.work[-1])), float(ident), (cert.cg_iterations, cert_p.cg_iterations), extra)


@dataclass
class DecayReport:
    k: list
    cross_term: list
    slope: float | None
    decreasing: bool | None
    degenerate: bool


def cross_term_diagnostic(results) -> DecayReport:
    """Least-squares slope of ``log |cross term|`` against ``log k``."""
    ks = [r.k for r in results]
    ct = [abs(r.cross_term) for r in results]
    if len(set(ks)) < 2 or any(c <= 0 for c in ct):
        return DecayReport(ks, ct, None, None, True)
    slope = float(np.polyfit(np.log(ks), np.log(ct), 1)[0])
    return DecayReport(ks, ct, slope, slope < 0, len(ks) < 3)


@dataclass
class SlopeReport:
    eps: list
    distance: list
    slope: float | None
    within: bool | None
    cg_iterations: int = 0


def smooth_data_continuity_experiment(field: MetricField, region: ControlRegion, T: float, eps_ladder, datum,
                                      n: int = 256, tol: float = 1e-10, band=(0.85, 1.15)) -> SlopeReport:
    """``E_g(y - y_eps)(T)^{1/2}`` against ``eps`` for one fixed control.

    ``datum`` is ``(y0, y1)`` on the grid or a callable ``x -> (y0, y1)``.
    The control is the HUM control for ``g``; both ``y`` (metric ``g``) and
    ``y_eps`` (metric ``(1+eps) g``) are driven by it from the same data.
    """
    eps_ladder = [float(e) for e in eps_ladder]
    grid = GridSpec.build(conformal_perturbation(field, min(eps_ladder + [0.0])), n, T)
    if callable(datum):
        y0, y1 = datum(grid.nodes())
    else:
        y0, y1 = datum
    y0 = np.asarray(y0, float).ravel()
    y1 = np.asarray(y1, float).ravel()
    op = assemble_operator(field, n)
    b = region.weight(grid.nodes())
    cert = compute_hum_control(field, grid, region, y0, y1, tol)
    src = cert.control * b
    y = simulate(WaveState(y0, y1), op, grid, source=src, save_every=grid.nsteps).final
    dists = []
    for e in eps_ladder:
        if e == 0:
            dists.append(0.0)
            continue
        ye = simulate(WaveState(y0, y1), assemble_operator(conformal_perturbation(field, e), n), grid,
                      source=src, save_every=grid.nsteps).final
        diff = WaveState(y.u - ye.u, y.v - ye.v)
        dists.append(float(np.sqrt(energy(diff, op, grid))))
    pos = [(e, d) for e, d in zip(eps_ladder, dists) if e > 0 and d > 0]
    if len(pos) < 2:
        return SlopeReport(eps_ladder, dists, None, None, cert.cg_iterations)
    slope = float(np.polyfit(np.log([p[0] for p in pos]), np.log([p[1] for p in pos]), 1)[0])
    return SlopeReport(eps_ladder, dists, slope, band[0] <= slope <= band[1], cert.cg_iterations)


def write_results_csv(results, path) -> None:
    cols = ["eps", "k", "residual", "matched_residual", "control_distance", "cross_term"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in results:
            row = r.row()
            w.writerow([row["eps"], row["k"]] + [repr(float(row[c])) for c in cols[2:]])
