"""Wave symbol, Hamiltonian field and bicharacteristic integration.

Phase space points are ``(t, x, tau, xi)`` with symbol
``p = -tau^2 + g^{ij}(x) xi_i xi_j``. On the characteristic sphere we use
``tau = -1/sqrt(2)`` so that ``dt/ds = sqrt(2) > 0``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .exceptions import (
    InsufficientRegularity,
    OffCharacteristic,
    PreconditionViolated,
    StepUnderflow,
    ZeroDirection,
)
from .metric import MetricField

TAU_CHAR = -1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class PhasePoint:
    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, dtype=float)))

    def xi_norm2(self, field: MetricField) -> float:
        return float(self.xi @ field.g_upper(self.x) @ self.xi)

    def on_char(self, field: MetricField, tol: float = 1e-8) -> bool:
        return abs(symbol_p(field, self)) <= tol

    def on_sphere(self, field: MetricField, tol: float = 1e-8) -> bool:
        return abs(self.tau**2 + self.xi_norm2(field) - 1.0) <= tol

    def to_dict(self) -> dict:
        return {"t": self.t, "x": self.x.tolist(), "tau": self.tau, "xi": self.xi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PhasePoint":
        return cls(d["t"], d["x"], d["tau"], d["xi"])


def symbol_p(field: MetricField, pt: PhasePoint) -> float:
    """``-tau^2 + |xi|_x^2``."""
    return -pt.tau**2 + pt.xi_norm2(field)


def _require_gradient(field: MetricField):
    if not field.regularity.has_gradient:
        raise InsufficientRegularity(
            "the Hamiltonian field of a Lipschitz metric is only L^inf; no pointwise field",
            regularity=field.regularity.value,
        )


def hamiltonian_field(field: MetricField, pt: PhasePoint):
    """Components ``(dt/ds, dx/ds, dtau/ds, dxi/ds)`` of ``H_p`` at ``pt``."""
    _require_gradient(field)
    gu = field.g_upper(pt.x)
    dg = field.grad_g_upper(pt.x, gu)
    dx = 2.0 * gu @ pt.xi
    dxi = -np.einsum("kij,i,j->k", dg, pt.xi, pt.xi)
    return -2.0 * pt.tau, dx, 0.0, dxi


def normalize_to_char(field: MetricField, x, direction) -> PhasePoint:
    """Point over ``x`` on the characteristic sphere with covector along ``direction``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    if not np.any(d):
        raise ZeroDirection("direction must be nonzero")
    n2 = float(d @ field.g_upper(x) @ d)
    xi = d * np.sqrt(0.5 / n2)
    return PhasePoint(0.0, x, TAU_CHAR, xi)


# -- vectorized right-hand side ------------------------------------------------

def rhs_batch(field: MetricField, x, xi):
    """``(dx/ds, dxi/ds)`` for arrays ``x, xi`` of shape (N, d)."""
    _, _, gu, _ = field.coefficients(x)
    dx = 2.0 * np.einsum("nij,nj->ni", gu, xi)
    if field.is_constant():
        return dx, np.zeros_like(xi)
    dg = field.grad_g_upper(x, gu)
    dxi = -np.einsum("nkij,ni,nj->nk", dg, xi, xi)
    return dx, dxi


def _make_rhs(field: MetricField):
    d = field.dim
    const = field.is_constant()

    def rhs(z):
        x = z[1:1 + d]
        tau = z[1 + d]
        xi = z[2 + d:]
        _, _, gu, _ = field.coefficients(x)
        out = np.empty_like(z)
        out[0] = -2.0 * tau
        out[1:1 + d] = 2.0 * gu @ xi
        out[1 + d] = 0.0
        if const:
            out[2 + d:] = 0.0
        else:
            dg = field.grad_g_upper(x, gu)
            out[2 + d:] = -np.einsum("kij,i,j->k", dg, xi, xi)
        return out

    return rhs


def _invariants(field, z):
    d = field.dim
    x, xi = z[1:1 + d], z[2 + d:]
    xi2 = float(xi @ field.g_upper(x) @ xi)
    return -z[1 + d] ** 2 + xi2, xi2


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(rhs, z, h, k1):
    ks = [k1]
    for i in range(1, 7):
        zi = z + h * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(rhs(zi))
    z5 = z + h * sum(b * k for b, k in zip(_B5, ks) if b)
    err = h * sum((b5 - b4) * k for b5, b4, k in zip(_B5, _B4, ks))
    return z5, err, ks[-1]


@dataclass
class Bicharacteristic:
    """Discretized integral curve of ``H_p``.

    ``x`` is wrapped onto the torus, ``x_unwrapped`` is the continuous lift.
    ``step_stats`` holds per-sample drifts of tau, p and |xi|_x^2 relative
    to the start.
    """

    field: MetricField
    s: np.ndarray
    t: np.ndarray
    x_unwrapped: np.ndarray
    tau: np.ndarray
    xi: np.ndarray
    step_stats: dict = dc_field(default_factory=dict)
    rejected_steps: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.mod(self.x_unwrapped, 1.0)

    @property
    def samples(self):
        return [(float(s), PhasePoint(t, x, ta, xi)) for s, t, x, ta, xi in zip(self.s, self.t, self.x, self.tau, self.xi)]

    @property
    def start(self) -> PhasePoint:
        return PhasePoint(self.t[0], self.x[0], self.tau[0], self.xi[0])

    @property
    def end(self) -> PhasePoint:
        return PhasePoint(self.t[-1], self.x[-1], self.tau[-1], self.xi[-1])

    def max_drifts(self) -> dict:
        return {k: float(np.max(np.abs(v))) for k, v in self.step_stats.items()}

    def to_csv(self, path) -> None:
        d = self.x_unwrapped.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "t"] + [f"x{i + 1}" for i in range(d)] + ["tau"] + [f"xi{i + 1}" for i in range(d)] + ["p_drift"])
            for j in range(len(self.s)):
                row = [self.s[j], self.t[j], *self.x[j], self.tau[j], *self.xi[j], self.step_stats["p"][j]]
                w.writerow([repr(float(v)) for v in row])


def _pack(pt: PhasePoint) -> np.ndarray:
    return np.concatenate([[pt.t], pt.x, [pt.tau], pt.xi])


def _integrate(field, start, s_span, tol, max_step, hook=None, rtol_factor=1e-3):
    d = field.dim
    s0, s1 = float(s_span[0]), float(s_span[1])
    rhs = _make_rhs(field)
    z = _pack(start)
    p_ref, xi2_ref = _invariants(field, z)
    tau0 = z[1 + d]
    direction = 1.0 if s1 >= s0 else -1.0
    span = abs(s1 - s0)
    ss, zs = [s0], [z.copy()]
    drifts = {"tau": [0.0], "p": [0.0], "xi2": [0.0]}
    if span == 0.0:
        return ss, zs, drifts, 0
    h = min(max_step, span, 0.05)
    local_tol = tol * rtol_factor
    s = s0
    k1 = rhs(z)
    rejected = 0
    h_min = 1e-12 * max(1.0, span)
    while direction * (s1 - s) > 1e-15 * max(1.0, abs(s1)):
        h = min(h, abs(s1 - s), max_step)
        zn, err, kn = _dp_step(rhs, z, direction * h, k1)
        scale = 1.0 + np.abs(z)
        enorm = float(np.max(np.abs(err) / (local_tol * scale)))
        p_new, xi2_new = _invariants(field, zn)
        drift_ok = abs(p_new - p_ref) <= 0.5 * tol and abs(xi2_new - xi2_ref) <= 0.5 * tol
        if enorm <= 1.0 and drift_ok and np.all(np.isfinite(zn)):
            s += direction * h
            z, k1 = zn, kn
            if hook is not None:
                z = hook(z)
                k1 = rhs(z)
                p_ref, xi2_ref = _invariants(field, z) if hook.reset_reference else (p_ref, xi2_ref)
            p_now, xi2_now = _invariants(field, z)
            ss.append(s)
            zs.append(z.copy())
            p0, xi20 = _invariants(field, zs[0])
            drifts["tau"].append(abs(z[1 + d] - tau0))
            drifts["p"].append(abs(p_now - p0))
            drifts["xi2"].append(abs(xi2_now - xi20))
            fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** (-0.2)))
            h *= fac
        else:
            rejected += 1
            h *= 0.5 if not drift_ok else max(0.1, min(0.5, 0.9 * enorm ** (-0.2)))
            if h < h_min:
                raise StepUnderflow(
                    "step size underflow",
                    s=s,
                    x=np.mod(z[1:1 + d], 1.0).tolist(),
                    xi=z[2 + d:].tolist(),
                )
    return ss, zs, drifts, rejected


def integrate_bicharacteristic(field: MetricField, start: PhasePoint, s_span=(0.0, 1.0), tol: float = 1e-8,
                               max_step: float = 0.25) -> Bicharacteristic:
    """Adaptive Dormand-Prince integration of ``H_p`` from ``start``.

    Steps are rejected when the local error estimate or the drift of the
    invariants ``p`` and ``|xi|_x^2`` exceeds its budget, so every sample
    keeps all drifts below ``tol``.
    """
    _require_gradient(field)
    p0 = symbol_p(field, start)
    if abs(p0) > 10 * tol:
        raise PreconditionViolated("start point is not on the characteristic set", p=p0, tol=tol)
    ss, zs, drifts, rejected = _integrate(field, start, s_span, tol, max_step)
    return _assemble(field, ss, zs, drifts, rejected)


def _assemble(field, ss, zs, drifts, rejected):
    d = field.dim
    Z = np.array(zs)
    return Bicharacteristic(
        field=field,
        s=np.array(ss),
        t=Z[:, 0],
        x_unwrapped=Z[:, 1:1 + d],
        tau=Z[:, 1 + d],
        xi=Z[:, 2 + d:],
        step_stats={k: np.array(v) for k, v in drifts.items()},
        rejected_steps=rejected,
    )


def rk4_fixed(field: MetricField, start: PhasePoint, s_end: float, n_steps: int) -> np.ndarray:
    """Classical fixed-step RK4; returns the packed end state."""
    rhs = _make_rhs(field)
    z = _pack(start)
    h = s_end / n_steps
    for _ in range(n_steps):
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def grad_modulus(field: MetricField, x, scale: float = 1e-4) -> np.ndarray:
    """Local modulus of continuity of ``d g^{ij}`` at scale ``scale``.

    Works on a batch ``x`` of shape (N, d); returns shape (N,).
    """
    x = np.atleast_2d(x)
    if field.is_constant():
        return np.zeros(len(x))
    base = field.grad_g_upper(x)
    out = np.zeros(len(x))
    for k in range(field.dim):
        for sgn in (1.0, -1.0):
            y = x.copy()
            y[:, k] += sgn * scale
            diff = np.abs(field.grad_g_upper(y) - base).reshape(len(x), -1).max(axis=1)
            out = np.maximum(out, diff)
    return out


class _JitterHook:
    reset_reference = True

    def __init__(self, field, jitter, rng, scale):
        self.field = field
        self.jitter = jitter
        self.rng = rng
        self.scale = scale

    def __call__(self, z):
        d = self.field.dim
        x = z[1:1 + d]
        m = grad_modulus(self.field, x[None], self.scale)[0]
        noise = self.rng.standard_normal(d)
        if m == 0.0:
            return z
        z = z.copy()
        xi = z[2 + d:] + self.jitter * m * noise
        n2 = float(xi @ self.field.g_upper(x) @ xi)
        # back onto |xi|_x^2 = tau^2, i.e. the characteristic sphere
        z[2 + d:] = xi * np.sqrt(z[1 + d] ** 2 / n2)
        return z


def funnel_ensemble(field: MetricField, start: PhasePoint, s_span=(0.0, 1.0), n: int = 8, jitter: float = 1e-3,
                    seed: int = 0, tol: float = 1e-8, max_step: float = 0.01, modulus_scale: float = 1e-4):
    """Sample the solution funnel through ``start``.

    Member 0 is the plain integral curve. The other members receive, after
    every accepted step, a random kick of size ``jitter * m(x)`` on ``xi``
    where ``m`` is the local modulus of continuity of the metric gradient,
    followed by re-projection onto the characteristic sphere. For smooth
    fields ``m`` is O(modulus_scale) and the funnel collapses.
    """
    if n < 1:
        raise PreconditionViolated("n must be >= 1", n=n)
    _require_gradient(field)
    curves = [integrate_bicharacteristic(field, start, s_span, tol, max_step=max_step)]
    rngs = np.random.default_rng(seed).spawn(n - 1) if n > 1 else []
    for rng in rngs:
        hook = _JitterHook(field, jitter, rng, modulus_scale)
        ss, zs, drifts, rej = _integrate(field, start, s_span, tol, max_step, hook=hook)
        curves.append(_assemble(field, ss, zs, drifts, rej))
    return curves


def funnel_spread(curves) -> float:
    """Largest endpoint distance of ensemble members from member 0."""
    ref = curves[0].x_unwrapped[-1]
    return float(max(np.linalg.norm(c.x_unwrapped[-1] - ref) for c in curves))


@dataclass
class GeodesicPath:
    """Spatial projection ``t -> X(t)`` of a bicharacteristic."""

    t: np.ndarray
    x_unwrapped: np.ndarray
    speed: np.ndarray

    @property
    def x(self):
        return np.mod(self.x_unwrapped, 1.0)

    def max_speed_error(self) -> float:
        return float(np.max(np.abs(self.speed - 1.0)))


def project_to_geodesic(curve: Bicharacteristic, tol: float = 1e-6) -> GeodesicPath:
    """Project to space-time; checks unit g-speed at every sample."""
    field = curve.field
    gu = field.g_upper(curve.x)
    xi2 = np.einsum("ni,nij,nj->n", curve.xi, gu, curve.xi)
    p = -curve.tau**2 + xi2
    if np.max(np.abs(p)) > tol:
        j = int(np.argmax(np.abs(p)))
        raise OffCharacteristic("curve is not on Char(p)", s=float(curve.s[j]), p=float(p[j]))
    # dX/dt = (2 g^{-1} xi) / (-2 tau), so |dX/dt|_g = |xi|_x / |tau|
    speed = np.sqrt(xi2) / np.abs(curve.tau)
    if np.max(np.abs(speed - 1.0)) > tol:
        j = int(np.argmax(np.abs(speed - 1.0)))
        raise OffCharacteristic("projected path is not unit speed", s=float(curve.s[j]), speed=float(speed[j]))
    return GeodesicPath(curve.t.copy(), curve.x_unwrapped.copy(), speed)
