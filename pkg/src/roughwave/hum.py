"""Minimal-norm exact controls and observability constants.

Adjoint data live at the ``L^2 x H^{-1}`` level and are paired with states
through the discrete ``L^2`` product (pivot). The Gramian is
``Lambda phi = (-d_t psi(0), psi(0))`` where ``phi`` solves the free
equation forward and ``psi`` the equation with source ``b^2 phi`` backward
from zero. With trapezoid time weights this is exactly symmetric for the
Verlet scheme.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import connected_components
import scipy.sparse as sps
from sklearn.base import BaseEstimator

from .exceptions import CgStagnation, PreconditionViolated, SingularForm
from .region import ControlRegion
from .wave import DiscreteOperator, GridSpec, WaveState, assemble_operator, check_cfl, energy, simulate
from .metric import MetricField


@dataclass
class AdjointData:
    phi0: np.ndarray
    phi1: np.ndarray

    def __add__(self, other):
        return AdjointData(self.phi0 + other.phi0, self.phi1 + other.phi1)

    def scaled(self, a: float) -> "AdjointData":
        return AdjointData(a * self.phi0, a * self.phi1)


@dataclass
class ControlCertificate:
    control: np.ndarray  # (nsteps+1, N) record of b * phi_hat on the step times
    final_energy: float
    initial_energy: float
    cg_iterations: int
    cg_residual: float
    control_l2_norm: float
    phi_hat: AdjointData | None = None
    residual_history: list = dc_field(default_factory=list)

    @property
    def relative_final_energy(self) -> float:
        return self.final_energy / self.initial_energy if self.initial_energy > 0 else 0.0

    def summary(self) -> dict:
        return {
            "final_energy": self.final_energy,
            "initial_energy": self.initial_energy,
            "relative_final_energy": self.relative_final_energy,
            "cg_iterations": self.cg_iterations,
            "cg_residual": self.cg_residual,
            "control_l2_norm": self.control_l2_norm,
        }


class HumProblem:
    """Discrete control problem for a fixed field, grid and region."""

    def __init__(self, field: MetricField, grid: GridSpec, region: ControlRegion):
        if not isinstance(field, DiscreteOperator):
            check_cfl(field, grid)
        self.field = field
        self.grid = grid
        self.region = region
        self.op = assemble_operator(field, grid.n) if not isinstance(field, DiscreteOperator) else field
        self.b = region.weight(grid.nodes())
        self.b2 = self.b**2
        self.tw = grid.time_weights()

    def inner(self, a: AdjointData, c: AdjointData) -> float:
        """Pivot product ``<a0, c0>_h + <a1, c1>_h``."""
        return self.op.inner(a.phi0, c.phi0) + self.op.inner(a.phi1, c.phi1)

    def observe(self, phi: AdjointData) -> np.ndarray:
        """Record ``b * phi(t_n)`` of the free solution from ``phi``."""
        tr = simulate(WaveState(phi.phi0, phi.phi1), self.op, self.grid, observe=self.b, save_every=self.grid.nsteps)
        return tr.observation

    def observed_norm2(self, rec: np.ndarray) -> float:
        """Trapezoid space-time ``L^2`` norm squared of a record."""
        w = self.op.weights
        return float(np.dot(self.tw, (rec * rec) @ w))

    def apply(self, phi: AdjointData, return_record: bool = False):
        rec = self.observe(phi)
        source = rec * self.b  # b^2 phi
        end = WaveState(np.zeros(self.grid.size), np.zeros(self.grid.size), self.grid.T)
        back = simulate(end, self.op, self.grid, source=source, backward=True, save_every=self.grid.nsteps)
        out = AdjointData(-back.v[-1], back.u[-1].copy())
        return (out, rec) if return_record else out


def gramian_apply(field, grid: GridSpec, region: ControlRegion, T: float, phi: AdjointData) -> AdjointData:
    """``Lambda phi`` for the horizon ``T``."""
    if abs(grid.T - T) > 1e-12:
        grid = GridSpec(grid.dim, grid.n, grid.dt, T, grid.c_cfl)
    return HumProblem(field, grid, region).apply(phi)


def _ritz(alphas, betas):
    """Extreme Ritz values of the preconditioned operator from CG scalars."""
    k = len(alphas)
    if k == 0:
        return []
    d = np.empty(k)
    e = np.empty(max(k - 1, 0))
    for j in range(k):
        d[j] = 1.0 / alphas[j] + (betas[j - 1] / alphas[j - 1] if j > 0 else 0.0)
        if j < k - 1:
            e[j] = np.sqrt(betas[j]) / alphas[j]
    vals = sla.eigvalsh_tridiagonal(d, e) if k > 1 else d
    return [float(vals[0]), float(vals[-1])]


class FourierFilter:
    """Projector onto grid Fourier modes with ``|m| <= cutoff``.

    Conjugated by ``W^{1/2}`` so that it is self-adjoint in the weighted
    product ``<u, v>_h`` for any weights.
    """

    def __init__(self, op: DiscreteOperator, cutoff: float):
        n, d = op.n, op.dim
        m = np.fft.fftfreq(n, 1.0 / n)
        mesh = np.meshgrid(*([m] * d), indexing="ij")
        self.mask = (np.sqrt(sum(mm**2 for mm in mesh)) <= cutoff + 1e-9)
        self.shape = (n,) * d
        self.sw = np.sqrt(op.weights)
        self.cutoff = cutoff

    def __call__(self, u):
        v = (self.sw * u).reshape(self.shape)
        v = np.real(np.fft.ifftn(np.fft.fftn(v) * self.mask)).ravel()
        return v / self.sw

    def adjoint(self, a: AdjointData) -> AdjointData:
        return AdjointData(self(a.phi0), self(a.phi1))


def compute_hum_control(field, grid: GridSpec, region: ControlRegion, y0, y1, tol: float = 1e-8,
                        max_iter: int = 500, stagnation_window: int = 50, precondition: bool = True,
                        filter_cutoff: float | str | None = "default") -> ControlCertificate:
    """Solve ``Lambda phi = (-y1, y0)`` by preconditioned CG.

    The preconditioner ``(r0, r1) -> (r0, K r1)`` with ``K = I - A_h``
    matches the mode-wise scaling ``diag(1, omega^{-2})`` of the Gramian.
    Grid-scale modes of the discrete scheme propagate with vanishing group
    velocity and make the unfiltered Gramian nearly singular, so by default
    the system is restricted to Fourier modes ``|m| <= n/8`` (a quarter of
    the Nyquist wavenumber); pass ``filter_cutoff=None`` to disable. The
    control record is accumulated alongside the CG iterate.
    """
    prob = HumProblem(field, grid, region)
    op = prob.op
    if filter_cutoff == "default":
        filter_cutoff = grid.n / 8
    filt = FourierFilter(op, filter_cutoff) if filter_cutoff is not None else None
    project = filt.adjoint if filt is not None else (lambda a: a)
    y0 = np.asarray(y0, dtype=float).ravel()
    y1 = np.asarray(y1, dtype=float).ravel()
    e0 = energy(WaveState(y0, y1), op, grid)
    shape = (grid.nsteps + 1, grid.size)
    rhs = project(AdjointData(-y1, y0.copy()))
    rhs_norm = np.sqrt(prob.inner(rhs, rhs))
    if rhs_norm == 0.0:
        return ControlCertificate(np.zeros(shape), 0.0, 0.0, 0, 0.0, 0.0,
                                  AdjointData(np.zeros(grid.size), np.zeros(grid.size)))

    def prec(r):
        z = AdjointData(r.phi0.copy(), op.K @ r.phi1) if precondition else AdjointData(r.phi0.copy(), r.phi1.copy())
        return project(z)

    x = AdjointData(np.zeros(grid.size), np.zeros(grid.size))
    f = np.zeros(shape)
    r = rhs
    z = prec(r)
    p = z
    rz = prob.inner(r, z)
    history = [1.0]
    alphas, betas = [], []
    it = 0
    while True:
        res = np.sqrt(prob.inner(r, r)) / rhs_norm
        if res <= tol:
            break
        if it >= max_iter:
            raise CgStagnation("iteration budget exhausted", iterations=it, residual=res,
                               ritz=_ritz(alphas, betas), history=history[-10:])
        if len(history) > stagnation_window and history[-1] > 0.9 * history[-1 - stagnation_window]:
            raise CgStagnation("residual plateau", iterations=it, residual=res,
                               ritz=_ritz(alphas, betas), history=history[-10:])
        Ap, rec = prob.apply(p, return_record=True)
        Ap = project(Ap)
        pAp = prob.inner(p, Ap)
        if pAp <= 0:
            raise CgStagnation("Gramian not positive on search direction", iterations=it, pAp=pAp,
                               ritz=_ritz(alphas, betas))
        alpha = rz / pAp
        x = x + p.scaled(alpha)
        f += alpha * rec
        r = r + Ap.scaled(-alpha)
        z = prec(r)
        rz_new = prob.inner(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + p.scaled(beta)
        alphas.append(alpha)
        betas.append(beta)
        it += 1
        history.append(float(np.sqrt(prob.inner(r, r)) / rhs_norm))
    ctrl = simulate(WaveState(y0, y1), op, grid, source=f * prob.b, save_every=grid.nsteps)
    fin = ctrl.energy[-1]
    norm = np.sqrt(max(prob.observed_norm2(f), 0.0))
    return ControlCertificate(f, float(fin), float(e0), it, float(history[-1]), float(norm), x, history)


def controlled_solve(field, grid: GridSpec, region: ControlRegion, y0, y1, control: np.ndarray, **kw):
    """Forward solve with source ``b * control`` (the control operator)."""
    b = region.weight(grid.nodes())
    return simulate(WaveState(np.asarray(y0, float).ravel(), np.asarray(y1, float).ravel()), field, grid,
                    source=np.asarray(control) * b, **kw)


# -- observability ----------------------------------------------------------------

@dataclass
class ObservabilityResult:
    c_obs: float
    lambda_min: float
    smallest: list
    n_modes: int
    freq_cutoff: float
    T: float
    minimizer: WaveState
    block_count: int

    def summary(self) -> dict:
        return {
            "c_obs": self.c_obs,
            "lambda_min": self.lambda_min,
            "smallest_eigenvalues": self.smallest,
            "n_modes": self.n_modes,
            "freq_cutoff": self.freq_cutoff,
            "T": self.T,
            "blocks": self.block_count,
        }


def _fourier_modes(op: DiscreteOperator, cutoff_lambda: float):
    """W-orthonormal real Fourier modes of a constant-coefficient operator."""
    n, d = op.n, op.dim
    ax = np.arange(n) / n
    lam_bound = cutoff_lambda * (np.pi**2 / 4.0) * 1.0000001
    rng = np.arange(-(n // 2) + 1, n // 2 + 1)
    if d == 1:
        cand = [(m,) for m in range(0, n // 2 + 1)]
    else:
        cand = [(a, b) for a in rng for b in rng if (a > 0 or (a == 0 and b >= 0) or (a == n // 2))]
        seen, uniq = set(), []
        for m in cand:
            key = min(m, tuple((-c) % n if c else 0 for c in m))
            mm = tuple(((c + n // 2 - 1) % n) - n // 2 + 1 for c in m)
            neg = tuple(((-c + n // 2 - 1) % n) - n // 2 + 1 for c in m)
            k = min(mm, neg)
            if k not in seen:
                seen.add(k)
                uniq.append(mm)
        cand = uniq
    gu = op.field.g_upper(np.zeros(d))
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    cols, lams, labels = [], [], []
    for m in cand:
        mv = np.array(m, dtype=float)
        cont = 4 * np.pi**2 * float(mv @ gu @ mv)
        if cont > lam_bound:
            continue
        phase = 2 * np.pi * sum(mk * xk for mk, xk in zip(m, mesh))
        for kind, vec in (("cos", np.cos(phase)), ("sin", np.sin(phase))):
            vec = vec.ravel()
            nrm2 = op.inner(vec, vec)
            if nrm2 < 1e-10 * op.weights.sum():
                continue
            vec = vec / np.sqrt(nrm2)
            lam = op.dirichlet(vec)
            if lam <= cutoff_lambda * (1 + 1e-12):
                cols.append(vec)
                lams.append(lam)
                labels.append((m, kind))
    return np.array(cols).T, np.array(lams), labels


def _eigen_modes(op: DiscreteOperator, cutoff_lambda: float, max_size: int = 4096):
    N = op.weights.size
    if N > max_size:
        raise PreconditionViolated("dense eigen-decomposition limited to small grids", size=N, limit=max_size)
    s = 1.0 / np.sqrt(op.weights)
    S = op.stiffness.toarray() * s[:, None] * s[None, :]
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    keep = lam <= cutoff_lambda * (1 + 1e-12)
    return V[:, keep] * s[:, None], lam[keep], None


def _trig_kernels(om, T):
    a = om[:, None]
    b = om[None, :]
    dm, dp = a - b, a + b
    sinc = lambda x: T * np.sinc(x * T / np.pi)  # sin(xT)/x
    cosc = lambda x: 0.5 * x * T**2 * np.sinc(x * T / (2 * np.pi)) ** 2  # (1 - cos(xT))/x
    S = 0.5 * (sinc(dm) - sinc(dp))  # int sin(a t) sin(b t)
    C = 0.5 * (sinc(dm) + sinc(dp))  # int cos(a t) cos(b t)
    X = 0.5 * (cosc(dp) + cosc(dm))  # int sin(a t) cos(b t)
    return S, C, X


def estimate_observability_constant(field, grid: GridSpec, region: ControlRegion, T: float,
                                    freq_cutoff: float, drop_tol: float = 1e-13) -> ObservabilityResult:
    """Smallest ratio ``int_0^T |b d_t u|^2 / E(u)(0)`` over low modes.

    Free solutions are spanned by the discrete eigenmodes of ``-A_h`` with
    ``sqrt(lambda) <= 2 pi freq_cutoff``; time integrals are exact (the
    space discretization is kept, time is continuous). The quadratic form is
    block diagonal along the connected components of the modal coupling
    matrix, which is exploited before the dense symmetric eigensolve.
    """
    op = grid_op = assemble_operator(field, grid.n) if not isinstance(field, DiscreteOperator) else field
    n = grid.n
    if not 0 < freq_cutoff <= n / 2:
        raise PreconditionViolated("freq_cutoff must lie in (0, n/2]", freq_cutoff=freq_cutoff, n=n)
    cut = (2 * np.pi * freq_cutoff) ** 2
    if op.field.is_constant():
        E, lam, _ = _fourier_modes(op, cut)
    else:
        E, lam, _ = _eigen_modes(op, cut)
    om = np.sqrt(lam + 1.0)
    K = len(om)
    b = region.weight(grid.nodes())
    rows = np.nonzero(b)[0]
    Er = E[rows]
    M = Er.T @ (Er * (b[rows] ** 2 * op.weights[rows])[:, None])
    M = 0.5 * (M + M.T)
    scale = np.max(np.abs(M)) if M.size else 0.0
    mask = np.abs(M) > drop_tol * max(scale, 1e-300)
    ncomp, labels = connected_components(sps.csr_matrix(mask), directed=False)
    best = (np.inf, None, None)
    all_vals = []
    for c in range(ncomp):
        idx = np.nonzero(labels == c)[0]
        Mb = M[np.ix_(idx, idx)]
        S, C, X = _trig_kernels(om[idx], T)
        # energy coordinates: u = sum a_k cos(w t)/w e_k + ..., E = (|a|^2+|c|^2)/2
        Q = np.block([[Mb * S, -Mb * X], [-(Mb * X).T, Mb * C]])
        Q = Q + Q.T  # 2 Q, symmetric
        vals, vecs = np.linalg.eigh(Q)
        all_vals.extend(vals[:3].tolist())
        if vals[0] < best[0]:
            best = (vals[0], idx, vecs[:, 0])
    lam_min, idx, vec = best
    all_vals = sorted(all_vals)[:6]
    m = len(idx)
    a, c = vec[:m], vec[m:]
    u0 = E[:, idx] @ (a / om[idx])
    u1 = E[:, idx] @ c
    data = WaveState(u0, u1)
    if lam_min < 1e-12:
        raise SingularForm("observation form is numerically singular", lambda_min=float(lam_min),
                           freq_cutoff=freq_cutoff, candidate_energy=energy(data, op, grid))
    return ObservabilityResult(1.0 / lam_min, float(lam_min), all_vals, K, float(freq_cutoff), float(T), data, ncomp)


def observation_quotient(field, grid: GridSpec, region: ControlRegion, data: WaveState) -> float:
    """Time-stepped ``sum_n c_n dt |b v_n|^2 / E(0)`` for given data (oracle route)."""
    op = assemble_operator(field, grid.n) if not isinstance(field, DiscreteOperator) else field
    b = region.weight(grid.nodes())
    tr = simulate(data, op, grid, observe=b, observe_kind="v", save_every=grid.nsteps)
    obs = tr.observation
    num = float(np.dot(grid.time_weights(), (obs * obs) @ op.weights))
    return num / tr.energy[0]


# -- estimator wrappers ----------------------------------------------------------------

class HUMController(BaseEstimator):
    """Estimator-style wrapper: ``fit(y0, y1)`` computes the HUM control."""

    def __init__(self, field=None, region=None, n: int = 256, T: float = 2.0, tol: float = 1e-8,
                 c_cfl: float = 0.5, max_iter: int = 500):
        self.field = field
        self.region = region
        self.n = n
        self.T = T
        self.tol = tol
        self.c_cfl = c_cfl
        self.max_iter = max_iter

    def fit(self, y0, y1=None):
        from ._validation import check_grid_field

        self.grid_ = GridSpec.build(self.field, self.n, self.T, self.c_cfl)
        y0 = check_grid_field(y0, self.grid_, "y0")
        y1 = np.zeros_like(y0) if y1 is None else check_grid_field(y1, self.grid_, "y1")
        self.certificate_ = compute_hum_control(self.field, self.grid_, self.region, y0, y1, self.tol, self.max_iter)
        self.control_ = self.certificate_.control
        return self

    def transform(self, y0=None, y1=None):
        """Return the fitted control record."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "control_")
        return self.control_


class ObservabilityEstimator(BaseEstimator):
    """``fit()`` computes ``c_obs_`` for the configured problem."""

    def __init__(self, field=None, region=None, n: int = 128, T: float = 2.0, freq_cutoff: float = 8.0):
        self.field = field
        self.region = region
        self.n = n
        self.T = T
        self.freq_cutoff = freq_cutoff

    def fit(self, X=None, y=None):
        grid = GridSpec.build(self.field, self.n, self.T)
        self.result_ = estimate_observability_constant(self.field, grid, self.region, self.T, self.freq_cutoff)
        self.c_obs_ = self.result_.c_obs
        return self

    def predict(self, data: WaveState) -> float:
        """Observation quotient of ``data`` (inverse of its observability)."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "c_obs_")
        grid = GridSpec.build(self.field, self.n, self.T)
        return observation_quotient(self.field, grid, self.region, data)
