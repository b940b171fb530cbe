"""Windowed space-time Fourier densities of 1D wave trajectories.

For a trajectory ``u(t, x)`` on ``[0, T] x T^1`` and a window scale
``sigma`` the density at window centre ``(t_c, x_c)`` and frequency
``(tau, xi)`` is ``1/2 (1 + tau^2 + g^{11}(x_c) xi^2) |U|^2`` with::

    U = int int u(t, x) G(t - t_c) G_per(x - x_c) exp(-i (tau t + xi x)) dt dx

``G`` a Gaussian of width ``sigma`` (periodized in ``x``). Centres are
spaced ``sigma / 2`` apart; the sum of squared windows over centres is then
constant to high accuracy, so the total mass reproduces the time-averaged
energy (Plancherel). Masses are stored already multiplied by cell measures
and divided by the time-averaged energy.

Quantities on phase space are evaluated after projecting ``(tau, xi)`` to
the cosphere ``tau^2 + g^{11} xi^2 = 1``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np

from .exceptions import DimensionMismatch, NyquistViolation, PreconditionViolated, ScaleTooFine
from .metric import MetricField, flat
from .wave import WaveTrajectory


def default_scale(k: float) -> float:
    """Window width ``k^{-1/2}``: geometric mean of a wavelength ``1/k`` and 1."""
    return float(k) ** -0.5


def resolving_scale(eps: float, k: float, factor: float = 7.0) -> float:
    """Window width whose frequency blur ``1/sigma`` is ``factor`` times finer than the
    speed split ``eps * 2 pi k`` between the metrics ``g`` and ``(1 + eps) g``."""
    return factor / (eps * 2 * np.pi * k)


@dataclass
class PhaseDensity:
    t: np.ndarray  # window centres in time, (nt,)
    x: np.ndarray  # window centres in space, (nx,)
    tau: np.ndarray  # (ntau,)
    xi: np.ndarray  # (nxi,)
    mass: np.ndarray  # (nt, nx, ntau, nxi), nonnegative
    sigma: float
    g11: np.ndarray  # g^{11} at the spatial centres
    normalization: dict = dc_field(default_factory=dict)

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def degenerate(self) -> bool:
        return not self.total_mass > 0

    def cosphere(self):
        """Broadcastable ``(tau_hat, xi_hat)`` with ``tau_hat^2 + g11 xi_hat^2 = 1``."""
        tau = self.tau[None, None, :, None]
        xi = self.xi[None, None, None, :]
        g = self.g11[None, :, None, None]
        r = np.sqrt(tau**2 + g * xi**2)
        r = np.where(r > 0, r, 1.0)
        return tau / r, xi / r

    def symbol(self):
        """``p = -tau^2 + g11 xi^2`` on the cosphere, in ``[-1, 1]``."""
        th, xh = self.cosphere()
        return -(th**2) + self.g11[None, :, None, None] * xh**2

    def speed_ratio(self):
        """``|tau| / |xi|_g`` at every cell (``inf`` where ``xi = 0``)."""
        tau = np.abs(self.tau)[None, None, :, None]
        xi = np.sqrt(self.g11)[None, :, None, None] * np.abs(self.xi)[None, None, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(xi > 0, tau / np.where(xi > 0, xi, 1.0), np.inf)

    def pair(self, fn: Callable) -> float:
        """``sum mass * fn(t, x, tau_hat, xi_hat)`` with broadcast arguments."""
        th, xh = self.cosphere()
        vals = fn(self.t[:, None, None, None], self.x[None, :, None, None], th, xh)
        return float(np.sum(self.mass * np.broadcast_to(vals, self.mass.shape)))

    def marginal_tx(self) -> np.ndarray:
        return self.mass.sum(axis=(2, 3))

    def header(self) -> dict:
        return {
            "format": "roughwave-phase-density",
            "version": 1,
            "dtype": "<f8",
            "order": "C",
            "shape": list(self.mass.shape),
            "axes": ["t", "x", "tau", "xi"],
            "sigma": self.sigma,
            "t": self.t.tolist(),
            "x": self.x.tolist(),
            "tau": self.tau.tolist(),
            "xi": self.xi.tolist(),
            "g11": self.g11.tolist(),
            "normalization": self.normalization,
        }

    def write(self, stem) -> tuple:
        """``stem.json`` header plus ``stem.bin`` little-endian float64 masses."""
        stem = Path(stem)
        hp, bp = stem.with_suffix(".json"), stem.with_suffix(".bin")
        hp.write_text(json.dumps(self.header(), indent=1))
        bp.write_bytes(np.ascontiguousarray(self.mass, dtype="<f8").tobytes(order="C"))
        return hp, bp

    @classmethod
    def read(cls, stem) -> "PhaseDensity":
        stem = Path(stem)
        h = json.loads(stem.with_suffix(".json").read_text())
        m = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=h["dtype"]).reshape(h["shape"]).copy()
        return cls(np.array(h["t"]), np.array(h["x"]), np.array(h["tau"]), np.array(h["xi"]), m, h["sigma"],
                   np.array(h["g11"]), h["normalization"])


# ----------------------------------------------------------------------------
# transform


def _periodic_gauss(x, sigma):
    """``sum_m exp(-(x + m)^2 / (2 sigma^2))`` over enough images."""
    reps = int(np.ceil(4 * sigma)) + 1
    out = np.zeros_like(x)
    for m in range(-reps, reps + 1):
        out += np.exp(-((x + m) ** 2) / (2 * sigma**2))
    return out


def _bandwidth(u, rel: float = 1e-10) -> int:
    """Smallest ``|m|`` holding all but ``rel`` of the H1-weighted spatial spectrum."""
    n = u.shape[1]
    spec = (np.abs(np.fft.fft(u, axis=1)) ** 2).sum(axis=0)
    m = np.abs(np.fft.fftfreq(n, 1.0 / n)).astype(int)
    w = np.bincount(m, weights=spec * (1 + (2 * np.pi * m) ** 2))
    tot = w.sum()
    if tot <= 0:
        return 0
    c = np.cumsum(w) / tot
    return int(min(np.searchsorted(c, 1 - rel) + 1, n // 2))


def husimi_samples(times, u, sigma: float, metric: MetricField | None = None, energy=None,
                   pad: int = 2, rel_band: float = 1e-10, max_cells: int = 40_000_000) -> PhaseDensity:
    """Density from samples ``u`` of shape (nt, n) on uniform ``times`` and ``x_i = i / n``.

    ``u`` may be complex. ``energy`` is the reference used for normalization
    (time-averaged energy; computed from the samples when omitted).
    """
    times = np.asarray(times, dtype=float)
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != times.size:
        raise DimensionMismatch("u must have shape (len(times), n)", shape=list(u.shape), nt=times.size)
    metric = metric if metric is not None else flat(1)
    if metric.dim != 1:
        raise DimensionMismatch("phase-space densities are implemented for one space dimension", dim=metric.dim)
    nt_all, n = u.shape
    h = 1.0 / n
    dt0 = float(times[1] - times[0]) if nt_all > 1 else np.inf
    if not np.allclose(np.diff(times), dt0, rtol=1e-9, atol=1e-12):
        raise PreconditionViolated("times must be uniform")
    if sigma < 4 * h:
        raise ScaleTooFine("window narrower than 4 grid cells", sigma=sigma, h=h)
    xg = np.arange(n) * h
    gmax = float(np.max(metric.g_upper(xg[:, None])[:, 0, 0]))
    mband = _bandwidth(u, rel_band)
    xi_band = 2 * np.pi * mband + 8.0 / sigma
    tau_band = 1.25 * np.sqrt(1.0 + gmax * xi_band**2) + 8.0 / sigma
    if dt0 > np.pi / tau_band:
        raise NyquistViolation("time sampling too coarse for the spatial bandwidth", dt=dt0,
                               limit=np.pi / tau_band, xi_band=xi_band)
    stride = max(1, int(np.floor(np.pi / (1.5 * tau_band) / dt0)))
    ts, us = times[::stride], u[::stride]
    dts = dt0 * stride
    if sigma < 4 * dts:
        raise ScaleTooFine("window shorter than 4 time steps", sigma=sigma, dt=dts)
    half = 3.0 * sigma
    step = sigma / 2.0
    tcs = np.arange(ts[0] + half, ts[-1] - half + 1e-12, step)
    if tcs.size == 0:
        raise PreconditionViolated("trajectory shorter than one window", T=float(ts[-1] - ts[0]), needs=2 * half)
    nxc = int(np.ceil(1.0 / step))
    xcs = np.arange(nxc) / nxc
    dxc = 1.0 / nxc
    npatch = int(np.floor(half / dts))
    lag = dts * np.arange(-npatch, npatch + 1)
    Nt = pad * lag.size
    tau = np.fft.fftshift(2 * np.pi * np.fft.fftfreq(Nt, dts))
    xi_all = 2 * np.pi * np.fft.fftfreq(n, h)
    keep_xi = np.abs(xi_all) <= xi_band
    keep_tau = np.abs(tau) <= tau_band
    xi = xi_all[keep_xi]
    order = np.argsort(xi, kind="stable")
    xi = xi[order]
    tau_k = tau[keep_tau]
    if tcs.size * nxc * tau_k.size * xi.size > max_cells:
        raise PreconditionViolated("density too large; increase sigma or shorten the trajectory",
                                   cells=int(tcs.size * nxc * tau_k.size * xi.size))
    gt = np.exp(-(lag**2) / (2 * sigma**2))
    gx = np.stack([_periodic_gauss(xg - c, sigma) for c in xcs])  # (nxc, n)
    g11 = metric.g_upper(xcs[:, None])[:, 0, 0]
    weight = 0.5 * (1.0 + tau_k[:, None] ** 2 + g11[:, None, None] * xi[None, None, :] ** 2)  # (nxc, ntau, nxi)
    mass = np.zeros((tcs.size, nxc, tau_k.size, xi.size))
    for a, tc in enumerate(tcs):
        j0 = int(round((tc - ts[0]) / dts))
        patch = us[j0 - npatch:j0 + npatch + 1] * gt[:, None]  # (nlag, n)
        f = np.fft.fft(patch[None, :, :] * gx[:, None, :], n=Nt, axis=1)
        f = np.fft.fft(f, axis=2)
        f = np.fft.fftshift(f, axes=1)[:, keep_tau][:, :, keep_xi][:, :, order]
        mass[a] = weight * np.abs(f * (dts * h)) ** 2
    # cell measures: dtau dxi / (2 pi)^2 times centre spacing over the discrete window norm int G^2
    dtau = 2 * np.pi / (Nt * dts)
    dxi = 2 * np.pi
    wnorm = dts * np.sum(gt**2) * h * np.sum(gx[0] ** 2)
    cell = dtau * dxi / (2 * np.pi) ** 2 * step * dxc / wnorm
    span = step * tcs.size
    mass *= cell / span
    if energy is None:
        energy = _sample_energy(ts, us, metric)
    norm = {"sigma": float(sigma), "energy_reference": float(energy), "time_span": float(span),
            "t_stride": stride, "dt": dts, "xi_band": float(xi_band), "tau_band": float(tau_band),
            "unnormalized_mass": float(mass.sum())}
    if energy > 0:
        mass /= energy
    return PhaseDensity(tcs, xcs, tau_k, xi, mass, float(sigma), g11, norm)


def _sample_energy(ts, us, metric):
    """Time-averaged ``1/2 int (u^2 + g11 u_x^2 + u_t^2)`` from samples (spectral derivatives)."""
    n = us.shape[1]
    m = np.fft.fftfreq(n, 1.0 / n)
    ux = np.fft.ifft(2j * np.pi * m * np.fft.fft(us, axis=1), axis=1)
    ut = np.gradient(us, ts, axis=0)
    g = metric.g_upper((np.arange(n) / n)[:, None])[:, 0, 0]
    e = 0.5 * (np.abs(us) ** 2 + g * np.abs(ux) ** 2 + np.abs(ut) ** 2).mean(axis=1)
    return float(e.mean())


def husimi_transform(trajectory: WaveTrajectory, sigma: float, metric: MetricField | None = None,
                     t_range=None, **kw) -> PhaseDensity:
    """Density of a saved 1D trajectory; ``energy`` defaults to its mean physical energy."""
    g = trajectory.grid
    if g.dim != 1:
        raise DimensionMismatch("phase-space densities are implemented for one space dimension", dim=g.dim)
    ts = trajectory.times[trajectory.saved_steps]
    u = trajectory.u
    if t_range is not None:
        sel = (ts >= t_range[0] - 1e-12) & (ts <= t_range[1] + 1e-12)
        ts, u = ts[sel], u[sel]
    if "energy" not in kw:
        e = trajectory.energy[trajectory.saved_steps]
        if t_range is not None:
            e = e[sel]
        kw["energy"] = float(np.mean(e))
    return husimi_samples(ts, u, sigma, metric, **kw)


# ----------------------------------------------------------------------------
# diagnostics


@dataclass
class Concentration:
    fraction: float
    eta: float
    degenerate: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def char_concentration(density: PhaseDensity, eta: float = 0.1) -> Concentration:
    """Share of mass with ``|p| < eta`` on the cosphere (1.0 and flagged when the density vanishes)."""
    tot = density.total_mass
    if not tot > 0:
        return Concentration(1.0, float(eta), True)
    near = np.abs(density.symbol()) < eta
    return Concentration(float(np.sum(density.mass * near) / tot), float(eta), False)


def _smooth_bump(s):
    """C^inf bump on (-1, 1) with value 1 at 0."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    ss = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - ss**2)), 0.0)


def _smooth_bump_prime(s):
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    ss = np.where(inside, s, 0.0)
    return np.where(inside, _smooth_bump(ss) * (-2 * ss / (1 - ss**2) ** 2), 0.0)


@dataclass(frozen=True)
class PhaseSymbol:
    """``a = B_t((t - t0)/Lt) B_x(wrap(x - x0)/Lx) c(s)``, ``s = xi / sqrt(tau^2 + xi^2)``.

    ``direction="forward"`` takes ``c(s) = (1 + s) / 2`` (weights right-moving
    covectors); ``"static"`` takes ``c(s) = B(s / 0.3)``, which vanishes on
    the characteristic directions ``|s| = 1/sqrt 2`` of a flat metric.
    """

    t0: float
    lt: float
    x0: float
    lx: float
    direction: str = "forward"

    def _c(self, s):
        if self.direction == "forward":
            return 0.5 * (1 + s), 0.5 * np.ones_like(s)
        if self.direction == "static":
            return _smooth_bump(s / 0.3), _smooth_bump_prime(s / 0.3) / 0.3
        raise PreconditionViolated("direction must be 'forward' or 'static'", direction=self.direction)

    def _b(self, t, x):
        st = (t - self.t0) / self.lt
        dx = np.mod(x - self.x0 + 0.5, 1.0) - 0.5
        sx = dx / self.lx
        bt, bx = _smooth_bump(st), _smooth_bump(sx)
        return bt * bx, _smooth_bump_prime(st) / self.lt * bx, bt * _smooth_bump_prime(sx) / self.lx

    def __call__(self, t, x, tau, xi):
        b, _, _ = self._b(t, x)
        r2 = tau**2 + xi**2
        s = xi / np.sqrt(np.where(r2 > 0, r2, 1.0))
        return b * self._c(s)[0]

    def hamilton_derivative(self, metric: MetricField):
        """Return ``(t, x, tau, xi) -> H_p a`` for ``p = -tau^2 + G(x) xi^2`` (1D, needs dG)."""
        def hp(t, x, tau, xi):
            b, bt, bx = self._b(t, x)
            r2 = tau**2 + xi**2
            r2 = np.where(r2 > 0, r2, 1.0)
            s = xi / np.sqrt(r2)
            c, dc = self._c(s)
            xs = np.asarray(x, dtype=float)
            flatx = xs.reshape(-1)
            G = metric.g_upper(flatx[:, None])[:, 0, 0].reshape(xs.shape)
            if metric.is_constant():
                dG = np.zeros_like(G)
            else:
                dG = metric.grad_g_upper(flatx[:, None])[:, 0, 0, 0].reshape(xs.shape)
            ds_dxi = tau**2 / r2**1.5
            return (-2 * tau * bt + 2 * G * xi * bx) * c - dG * xi**2 * b * dc * ds_dxi

        return hp


def transport_residual(densities, symbol: PhaseSymbol, metric: MetricField | None = None) -> list:
    """``|<density, H_p a>|`` for each density of a ladder."""
    metric = metric if metric is not None else flat(1)
    hp = symbol.hamilton_derivative(metric)
    return [abs(d.pair(hp)) if not d.degenerate else 0.0 for d in densities]


def is_decreasing(values) -> bool:
    return all(b < a for a, b in zip(values[:-1], values[1:]))


def speed_histogram(density: PhaseDensity, edges) -> np.ndarray:
    """Mass distribution of ``|tau| / |xi|_g`` over ``edges`` (normalized to 1)."""
    r = np.broadcast_to(density.speed_ratio(), density.mass.shape)
    hist, _ = np.histogram(r.ravel(), bins=edges, weights=density.mass.ravel())
    tot = hist.sum()
    return hist / tot if tot > 0 else hist


def overlap_mass(a: PhaseDensity, b: PhaseDensity, edges=None) -> float:
    """``sum min(P_a, P_b)`` of the speed-ratio distributions: 0 for disjoint, 1 for identical."""
    edges = np.linspace(0.5, 1.5, 401) if edges is None else edges
    return float(np.minimum(speed_histogram(a, edges), speed_histogram(b, edges)).sum())


def x_centroids(density: PhaseDensity) -> np.ndarray:
    """Circular mean position of the mass at each time centre."""
    m = density.marginal_tx()
    z = (m * np.exp(2j * np.pi * density.x)[None, :]).sum(axis=1)
    return np.mod(np.angle(z) / (2 * np.pi), 1.0)


def centroid_transport_error(density: PhaseDensity, x0: float, speed: float = 1.0, t0: float = 0.0) -> np.ndarray:
    """Wrapped distance between centroids and the ray ``x0 + speed (t - t0)``."""
    c = x_centroids(density)
    ray = x0 + speed * (density.t - t0)
    return np.abs(np.mod(c - ray + 0.5, 1.0) - 0.5)


def write_summary_csv(rows, path) -> None:
    """Rows of ``(k, fraction, residual)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "fraction", "residual"])
        for k, f, r in rows:
            w.writerow([int(k), repr(float(f)), repr(float(r))])


# ----------------------------------------------------------------------------
# estimator wrapper

from sklearn.base import BaseEstimator  # noqa: E402


class HusimiTransformer(BaseEstimator):
    """``fit(trajectory)`` stores ``density_``; ``transform`` returns char fractions per ``eta``."""

    def __init__(self, sigma: float | None = None, k: float | None = None, metric=None, etas=(0.1,)):
        self.sigma = sigma
        self.k = k
        self.metric = metric
        self.etas = etas

    def _scale(self):
        if self.sigma is not None:
            return float(self.sigma)
        if self.k is None:
            raise PreconditionViolated("give sigma or k")
        return default_scale(self.k)

    def fit(self, trajectory, y=None):
        self.density_ = husimi_transform(trajectory, self._scale(), self.metric)
        return self

    def transform(self, trajectory=None):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "density_")
        d = self.density_ if trajectory is None else husimi_transform(trajectory, self._scale(), self.metric)
        return np.array([char_concentration(d, e).fraction for e in self.etas])
