"""Conservative finite differences for ``d_t^2 u - A u + u = f`` on T^d.

``A = kappa^{-1} (det g)^{-1/2} d_i(kappa (det g)^{1/2} g^{ij} d_j)`` is
discretized in flux form with coefficients at staggered points, so that
``A_h = -W^{-1} S`` with ``S`` symmetric positive semidefinite and ``W`` the
diagonal of node weights ``kappa sqrt(det g) h^d``. Time stepping is
velocity Verlet (kick-drift-kick leapfrog).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .exceptions import CflViolation, DimensionMismatch, NonFiniteState, PreconditionViolated
from .metric import MetricField, sample_grid


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int
    dt: float
    T: float
    c_cfl: float = 0.5

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def nsteps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nsteps + 1) * self.dt

    def time_weights(self) -> np.ndarray:
        """Trapezoid weights ``c_n dt`` on the step times."""
        w = np.full(self.nsteps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def nodes(self) -> np.ndarray:
        return sample_grid(self.dim, self.n).reshape(-1, self.dim)

    @classmethod
    def build(cls, field: MetricField, n: int, T: float, c_cfl: float = 0.5, dim: int | None = None) -> "GridSpec":
        """Largest stable ``dt`` that divides ``T`` into whole steps."""
        dim = field.dim if dim is None else dim
        if T < 0:
            raise PreconditionViolated("T must be nonnegative", T=T)
        dt_max = c_cfl / n / np.sqrt(max_upper_eig(field, n))
        steps = max(1, int(np.ceil(T / dt_max - 1e-12)))
        return cls(dim, n, T / steps if T > 0 else dt_max, T, c_cfl)


@lru_cache(maxsize=64)
def max_upper_eig(field: MetricField, n: int) -> float:
    pts = np.concatenate([sample_grid(field.dim, n).reshape(-1, field.dim),
                          sample_grid(field.dim, n, 0.5).reshape(-1, field.dim)])
    return float(np.max(np.linalg.eigvalsh(field.g_upper(pts))))


@dataclass
class WaveState:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self) -> "WaveState":
        return WaveState(self.u.copy(), self.v.copy(), self.t)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "WaveState":
        return cls(np.zeros(grid.size), np.zeros(grid.size), 0.0)


class DiscreteOperator:
    """Flux-form ``A_h`` with its weights and stiffness matrix."""

    def __init__(self, field: MetricField, n: int):
        self.field = field
        self.n = n
        self.dim = field.dim
        h = 1.0 / n
        hd = h**self.dim
        nodes = sample_grid(self.dim, n)
        kap, _, _, sq = field.coefficients(nodes)
        self.weights = (kap * sq).ravel() * hd
        blocks, coefs = self._faces(field, n)
        G = sps.vstack(blocks).tocsr()
        C = coefs.tocsr()
        self.stiffness = (G.T @ C @ G * hd).tocsr()
        self.stiffness = 0.5 * (self.stiffness + self.stiffness.T)
        winv = sps.diags(1.0 / self.weights)
        self.A = -(winv @ self.stiffness).tocsr()
        # K = I - A_h, used by the stepper and the energy
        self.K = (sps.identity(n**self.dim, format="csr") - self.A).tocsr()

    @staticmethod
    def _shift(n, dim, axis):
        """Sparse matrix mapping ``u`` to ``u`` shifted by +1 along ``axis``."""
        e = sps.csr_matrix((np.ones(n), (np.arange(n), (np.arange(n) + 1) % n)), shape=(n, n))
        eye = sps.identity(n, format="csr")
        mats = [e if k == axis else eye for k in range(dim)]
        out = mats[0]
        for m in mats[1:]:
            out = sps.kron(out, m, format="csr")
        return out

    def _faces(self, field, n):
        d = self.dim
        h = 1.0 / n
        N = n**d
        eye = sps.identity(N, format="csr")
        shifts = [self._shift(n, d, k) for k in range(d)]
        blocks, diag = [], []
        for k in range(d):
            off = np.zeros(d)
            off[k] = 0.5
            pts = sample_grid(d, n) + off / n
            kap, _, gu, sq = field.coefficients(pts)
            diag.append((kap * sq * gu[..., k, k]).ravel())
            blocks.append((shifts[k] - eye) / h)
        coefs = sps.diags(np.concatenate(diag))
        if d == 2:
            pts = sample_grid(d, n, 0.5)
            kap, _, gu, sq = field.coefficients(pts)
            c12 = (kap * sq * gu[..., 0, 1]).ravel()
            if np.any(c12 != 0.0):
                s1, s2 = shifts
                # cell-centred gradients averaged over the two parallel edges
                d1 = 0.5 * ((s1 - eye) + (s1 - eye) @ s2) / h
                d2 = 0.5 * ((s2 - eye) + (s2 - eye) @ s1) / h
                blocks += [d1, d2]
                z = sps.csr_matrix((N, N))
                cc = sps.diags(c12)
                cross = sps.bmat([[z, cc], [cc, z]])
                coefs = sps.block_diag([coefs, cross])
        return blocks, coefs

    def apply(self, u):
        return self.A @ u

    def inner(self, u, v) -> float:
        return float(np.dot(u * self.weights, v))

    def dirichlet(self, u) -> float:
        return float(u @ (self.stiffness @ u))


@lru_cache(maxsize=32)
def assemble_operator(field: MetricField, n: int) -> DiscreteOperator:
    """Assemble (and cache) ``A_h`` for ``field`` on the ``n``-point grid."""
    return DiscreteOperator(field, n)


def _op(field_or_op, grid: GridSpec) -> DiscreteOperator:
    if isinstance(field_or_op, DiscreteOperator):
        op = field_or_op
    else:
        op = assemble_operator(field_or_op, grid.n)
    if op.n != grid.n or op.dim != grid.dim:
        raise DimensionMismatch("operator and grid disagree", n=[op.n, grid.n], dim=[op.dim, grid.dim])
    return op


def check_cfl(field: MetricField, grid: GridSpec) -> None:
    bound = grid.c_cfl * grid.h / np.sqrt(max_upper_eig(field, grid.n))
    if grid.dt > bound * (1 + 1e-12):
        raise CflViolation("time step exceeds the CFL bound", dt=grid.dt, bound=bound)


def energy(state: WaveState, field, grid: GridSpec) -> float:
    """``1/2 (|u|^2 + |grad_g u|^2 + |v|^2)`` in the weighted discrete norms."""
    op = _op(field, grid)
    return 0.5 * (op.inner(state.u, state.u) + op.dirichlet(state.u) + op.inner(state.v, state.v))


def discrete_energy(state: WaveState, field, grid: GridSpec) -> float:
    """Quadratic form conserved exactly by the Verlet scheme.

    ``1/2 |v|^2 + 1/2 <u, K u> - dt^2/8 |K u|^2`` with ``K = I - A_h``.
    It differs from :func:`energy` by O((dt omega)^2).
    """
    op = _op(field, grid)
    Ku = op.K @ state.u
    return 0.5 * op.inner(state.v, state.v) + 0.5 * op.inner(state.u, Ku) - grid.dt**2 / 8.0 * op.inner(Ku, Ku)


def _source_fn(source, grid: GridSpec, nsteps: int, backward: bool):
    if source is None:
        return lambda n, t: None
    if callable(source):
        return lambda n, t: np.asarray(source(t), dtype=float).ravel()
    rec = np.asarray(source, dtype=float)
    rec = rec.reshape(rec.shape[0], -1)
    if rec.shape[0] != nsteps + 1 or rec.shape[1] != grid.size:
        raise DimensionMismatch("source record shape", shape=list(rec.shape), expected=[nsteps + 1, grid.size])
    if backward:
        return lambda n, t: rec[nsteps - n]
    return lambda n, t: rec[n]


def step(state: WaveState, field, grid: GridSpec, source=None, dt: float | None = None) -> WaveState:
    """One Verlet step. ``source`` is ``None`` or ``callable(t) -> array``."""
    op = _op(field, grid)
    if not isinstance(field, DiscreteOperator):
        check_cfl(field, grid)
    dt = grid.dt if dt is None else dt
    f0 = None if source is None else np.asarray(source(state.t), dtype=float).ravel()
    f1 = None if source is None else np.asarray(source(state.t + dt), dtype=float).ravel()
    a = -(op.K @ state.u)
    if f0 is not None:
        a = a + f0
    vh = state.v + 0.5 * dt * a
    u = state.u + dt * vh
    a = -(op.K @ u)
    if f1 is not None:
        a = a + f1
    v = vh + 0.5 * dt * a
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NonFiniteState("non-finite values after step", t=state.t + dt)
    return WaveState(u, v, state.t + dt)


@dataclass
class WaveTrajectory:
    """Sampled states plus per-step energy and source ledgers."""

    grid: GridSpec
    times: np.ndarray  # every step
    energy: np.ndarray  # physical energy at every step
    discrete_energy: np.ndarray  # conserved form at every step
    work: np.ndarray  # cumulative source work at every step
    saved_steps: np.ndarray
    u: np.ndarray  # (n_saved, N)
    v: np.ndarray
    observation: np.ndarray | None = None  # (nsteps+1, N)
    meta: dict = dc_field(default_factory=dict)

    @property
    def final(self) -> WaveState:
        return WaveState(self.u[-1].copy(), self.v[-1].copy(), float(self.times[-1]))

    @property
    def initial(self) -> WaveState:
        return WaveState(self.u[0].copy(), self.v[0].copy(), float(self.times[0]))

    def state(self, k: int) -> WaveState:
        return WaveState(self.u[k].copy(), self.v[k].copy(), float(self.times[self.saved_steps[k]]))

    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / e0) if e0 > 0 else 0.0

    def discrete_energy_drift(self) -> float:
        e0 = self.discrete_energy[0]
        return float(np.max(np.abs(self.discrete_energy - e0)) / e0) if e0 > 0 else 0.0


def simulate(initial: WaveState, field, grid: GridSpec, source=None, observe=None, observe_kind: str = "u",
             save_every: int = 1, backward: bool = False, check_every: int = 64) -> WaveTrajectory:
    """Run ``grid.nsteps`` Verlet steps from ``initial``.

    ``source`` may be ``None``, a callable of ``t`` returning a grid field,
    or a record of shape (nsteps+1, N) indexed by step time (in forward
    order, also when ``backward`` is set). ``observe`` is a weight field
    ``b``; when given, ``b * u`` (or ``b * v``) is stored at every step.
    ``backward`` integrates from ``initial.t`` towards ``initial.t - T``.
    """
    op = _op(field, grid)
    if not isinstance(field, DiscreteOperator):
        check_cfl(field, grid)
    nsteps = grid.nsteps
    dt = -grid.dt if backward else grid.dt
    src = _source_fn(source, grid, nsteps, backward)
    K = op.K
    w = op.weights
    u = np.asarray(initial.u, dtype=float).ravel().copy()
    v = np.asarray(initial.v, dtype=float).ravel().copy()
    if u.size != grid.size or v.size != grid.size:
        raise DimensionMismatch("state does not match grid", size=u.size, expected=grid.size)
    t0 = float(initial.t)
    times = t0 + dt * np.arange(nsteps + 1)
    en = np.empty(nsteps + 1)
    den = np.empty(nsteps + 1)
    work = np.zeros(nsteps + 1)
    saved = list(range(0, nsteps + 1, save_every))
    if saved[-1] != nsteps:
        saved.append(nsteps)
    saved_set = set(saved)
    U = np.empty((len(saved), grid.size))
    V = np.empty((len(saved), grid.size))
    obs = None
    if observe is not None:
        b = np.asarray(observe, dtype=float).ravel()
        obs = np.empty((nsteps + 1, grid.size))
    half = 0.5 * dt
    Ku = K @ u

    def record(n, Ku):
        en[n] = 0.5 * (np.dot(w * u, Ku) + np.dot(w * v, v))
        den[n] = 0.5 * np.dot(w * v, v) + 0.5 * np.dot(w * u, Ku) - dt * dt / 8.0 * np.dot(w * Ku, Ku)
        if obs is not None:
            obs[n] = b * (u if observe_kind == "u" else v)

    record(0, Ku)
    U[0], V[0] = u, v
    isave = 1
    f_next = src(0, t0)
    acc_work = 0.0
    for n in range(nsteps):
        f_now = f_next
        if f_now is not None:
            # source half-kick, exact work increment
            dv = half * f_now
            acc_work += np.dot(w * dv, v + 0.5 * dv) if not backward else -np.dot(w * dv, v + 0.5 * dv)
            v = v + dv
        v = v - half * Ku
        u = u + dt * v
        Ku = K @ u
        v = v - half * Ku
        f_next = src(n + 1, times[n + 1])
        if f_next is not None:
            dv = half * f_next
            acc_work += np.dot(w * dv, v + 0.5 * dv) if not backward else -np.dot(w * dv, v + 0.5 * dv)
            v = v + dv
        work[n + 1] = acc_work
        record(n + 1, Ku)
        if (n + 1) in saved_set:
            U[isave], V[isave] = u, v
            isave += 1
        if (n + 1) % check_every == 0 and not np.isfinite(en[n + 1]):
            raise NonFiniteState("non-finite energy", t=float(times[n + 1]), step=n + 1)
    if not np.isfinite(en[-1]):
        raise NonFiniteState("non-finite energy", t=float(times[-1]), step=nsteps)
    return WaveTrajectory(grid, times, en, den, work, np.array(saved), U, V, obs)


def state_from_functions(grid: GridSpec, u0, v0=None, t: float = 0.0) -> WaveState:
    """Sample callables ``u0(x), v0(x)`` (x of shape (N, d)) on the grid."""
    x = grid.nodes()
    u = np.asarray(u0(x), dtype=float).ravel()
    v = np.zeros_like(u) if v0 is None else np.asarray(v0(x), dtype=float).ravel()
    return WaveState(u, v, t)


# -- flat binary export --------------------------------------------------------

def write_trajectory(traj: WaveTrajectory, stem) -> tuple:
    """Write ``stem.json`` (header) and ``stem.bin`` (payload).

    Payload: little-endian float64, C order, shape
    ``(n_saved, 2, n, ..., n)``; index 1 selects ``u`` (0) or ``v`` (1).
    """
    stem = Path(stem)
    g = traj.grid
    data = np.stack([traj.u, traj.v], axis=1).reshape((len(traj.saved_steps), 2) + g.shape)
    header = {
        "format": "roughwave-trajectory",
        "version": 1,
        "dtype": "<f8",
        "order": "C",
        "shape": list(data.shape),
        "axes": ["sample", "component(u,v)"] + [f"x{k + 1}" for k in range(g.dim)],
        "dim": g.dim,
        "n": g.n,
        "dt": g.dt,
        "T": g.T,
        "times": [float(traj.times[k]) for k in traj.saved_steps],
        "energy": [float(traj.energy[k]) for k in traj.saved_steps],
    }
    hpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    hpath.write_text(json.dumps(header, indent=1))
    bpath.write_bytes(data.astype("<f8", copy=False).tobytes(order="C"))
    return hpath, bpath


def read_trajectory(stem):
    """Inverse of :func:`write_trajectory`; returns ``(header, array)``."""
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    arr = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=header["dtype"]).reshape(header["shape"])
    return header, arr
