"""Sampled geometric control condition checks.

Every ray is an initial point ``x0`` on a uniform grid and a covector
direction on a uniform angular grid, normalized onto the characteristic
sphere. Its spatial projection is traced for ``t in (0, T (1 + slack))`` on
a time grid fine enough that no strip or box of the region can be crossed
between two samples; the first entry time is refined by bisection on the
linearly interpolated path.

A failure verdict comes with an explicit non-hitting witness. Success is
only certified on the sampled rays (plus, in funnel mode, on jittered funnel
members for C^1 metrics).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import BaseGccFails, HorizonExceeded, InsufficientRegularity, PreconditionViolated
from .hamiltonian import TAU_CHAR, PhasePoint, grad_modulus, rhs_batch
from .metric import MetricField, Regularity, conformal_perturbation, kink_profile, modulate, sample_grid
from .region import ControlRegion
from .wave import max_upper_eig

SQRT2 = np.sqrt(2.0)


@dataclass
class GccReport:
    holds: bool
    T: float
    worst_ray: PhasePoint
    hit_time_max: float
    hit_time_histogram: dict
    sampling: dict
    funnel_mode: bool
    margin: float
    n_missed: int = 0
    funnel_stats: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "holds": bool(self.holds),
            "T": self.T,
            "worst_ray": self.worst_ray.to_dict(),
            "hit_time_max": self.hit_time_max if np.isfinite(self.hit_time_max) else "inf",
            "hit_time_histogram": self.hit_time_histogram,
            "sampling": self.sampling,
            "funnel_mode": self.funnel_mode,
            "margin": self.margin if np.isfinite(self.margin) else "-inf",
            "n_missed": self.n_missed,
            "funnel_stats": self.funnel_stats,
        }


def ray_grid(dim: int, nx: int, ndir: int):
    """Initial points and unit covector directions of the sampling grid."""
    x = sample_grid(dim, nx).reshape(-1, dim)
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = 2 * np.pi * np.arange(ndir) / ndir
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
        # exact axis directions when ndir is a multiple of 4
        dirs[np.abs(dirs) < 1e-15] = 0.0
        dirs = np.round(dirs, 15)
    return x, dirs


def _normalize(field, x, d):
    gu = field.g_upper(x)
    n2 = np.einsum("ni,nij,nj->n", d, gu, d)
    return d * np.sqrt(0.5 / n2)[:, None]


def _rk4(field, x, xi, ds, nsub):
    for _ in range(nsub):
        k1x, k1p = rhs_batch(field, x, xi)
        k2x, k2p = rhs_batch(field, x + 0.5 * ds * k1x, xi + 0.5 * ds * k1p)
        k3x, k3p = rhs_batch(field, x + 0.5 * ds * k2x, xi + 0.5 * ds * k2p)
        k4x, k4p = rhs_batch(field, x + ds * k3x, xi + ds * k3p)
        x = x + ds / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        xi = xi + ds / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return x, xi


def _refine(region, xa, xb, ta, dt, iters=48):
    """Bisection for the entry time on the segment ``xa -> xb``."""
    lo = np.zeros(len(xa))
    hi = np.ones(len(xa))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = region.contains(xa + mid[:, None] * (xb - xa))
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    return ta + hi * dt


def trace_rays(field: MetricField, region: ControlRegion, x0, dirs, t_max: float, jitter: float = 0.0,
               rng=None, modulus_scale: float = 1e-4):
    """First-hit times (``inf`` when missed) and clearances of a ray batch."""
    R, d = x0.shape
    hit = np.full(R, np.inf)
    clearance = region.distance(x0)
    inside0 = region.contains(x0)
    hit[inside0] = 0.0
    const = field.is_constant()
    feature = region.min_feature()
    speed = np.sqrt(max_upper_eig(field, 32))
    dt = min(0.5 * feature / speed, 0.05, t_max) if t_max > 0 else 0.0
    nsteps = int(np.ceil(t_max / dt - 1e-12)) if dt > 0 else 0
    if nsteps:
        dt = t_max / nsteps
    ds = dt / SQRT2
    nsub = max(1, int(np.ceil(ds / 0.02)))
    act = np.nonzero(~inside0)[0]
    x = x0[act].copy()
    xi = _normalize(field, x, dirs[act])
    if const:
        vel = 2.0 * np.einsum("ij,nj->ni", field.g_upper(np.zeros(d)), xi) / SQRT2  # dX/dt
    t = 0.0
    for k in range(nsteps):
        if len(act) == 0:
            break
        if const:
            xn = x + dt * vel
            xin = xi
        else:
            xn, xin = _rk4(field, x, xi, ds / nsub, nsub)
            if jitter > 0:
                m = grad_modulus(field, xn, modulus_scale)
                xin = xin + jitter * m[:, None] * rng.standard_normal(xin.shape)
                xin = _normalize(field, xn, xin)
        now_in = region.contains(xn)
        if np.any(now_in):
            idx = np.nonzero(now_in)[0]
            hit[act[idx]] = _refine(region, x[idx], xn[idx], t, dt)
        keep = ~now_in
        cl = region.distance(xn[keep])
        act = act[keep]
        clearance[act] = np.minimum(clearance[act], cl)
        x, xi = xn[keep], xin[keep]
        if const:
            vel = vel[keep]
        t = (k + 1) * dt
    clearance[np.isfinite(hit)] = 0.0
    return hit, clearance


def _check(field, region, T_span, nx, ndir, funnel, seed, chunk):
    if not field.regularity.has_gradient:
        raise InsufficientRegularity("GCC is formulated for C^1 (or better) metrics", regularity=field.regularity.value)
    x, dirs = ray_grid(field.dim, nx, ndir)
    X = np.repeat(x, len(dirs), axis=0)
    D = np.tile(dirs, (len(x), 1))
    n_members, jitter = (1, 0.0) if funnel is None else (int(funnel[0]), float(funnel[1]))
    hits = np.empty(len(X))
    clear = np.empty(len(X))
    member_hits = 0
    member_total = 0
    for c0 in range(0, len(X), chunk):
        sl = slice(c0, c0 + chunk)
        h, cl = trace_rays(field, region, X[sl], D[sl], T_span)
        if n_members > 1 and not field.is_constant():
            rng = np.random.default_rng([seed, c0])
            for _ in range(n_members - 1):
                hm, clm = trace_rays(field, region, X[sl], D[sl], T_span, jitter, rng)
                member_hits += int(np.sum(np.isfinite(hm)))
                member_total += len(hm)
                h = np.maximum(h, hm)
                cl = np.maximum(cl, clm)
        hits[sl], clear[sl] = h, cl
    return X, D, hits, clear, (member_hits, member_total, n_members, jitter)


def check_gcc(field: MetricField, region: ControlRegion, T: float, sampling=(64, 64), funnel=None, seed: int = 0,
              slack: float = 0.05, chunk: int = 1 << 18) -> GccReport:
    """Check GCC for ``(region, T)`` on the ray sampling ``(nx, ndir)``.

    ``funnel=(n, jitter)`` also traces ``n - 1`` jittered funnel members of
    every ray; a ray then counts as controlled only if every member hits.
    """
    if not T > 0:
        raise PreconditionViolated("T must be positive", T=T)
    nx, ndir = int(sampling[0]), int(sampling[1])
    X, D, hits, clear, (mh, mt, nm, jit) = _check(field, region, T * (1 + slack), nx, ndir, funnel, seed, chunk)
    return _report(field, region, T, X, D, hits, clear, nx, ndir, funnel, mh, mt, nm, jit)


def _report(field, region, T, X, D, hits, clear, nx, ndir, funnel, mh, mt, nm, jit):
    missed = ~np.isfinite(hits)
    if np.any(missed):
        cand = np.nonzero(missed)[0]
        j = int(cand[np.argmax(clear[cand])])
        hmax = np.inf
    else:
        j = int(np.argmax(hits))
        hmax = float(hits[j])
    xi = _normalize(field, X[j:j + 1], D[j:j + 1])[0]
    worst = PhasePoint(0.0, X[j], TAU_CHAR, xi)
    fin = hits[np.isfinite(hits)]
    if fin.size:
        counts, edges = np.histogram(fin, bins=32, range=(0.0, max(float(fin.max()), 1e-12)))
    else:
        counts, edges = np.zeros(32, int), np.linspace(0, 1, 33)
    holds = bool(np.all(hits < T))
    stats = {}
    if funnel is not None:
        stats = {"members": nm, "jitter": jit, "member_hit_fraction": (mh / mt) if mt else 1.0,
                 "jittered_members_traced": mt}
    return GccReport(
        holds=holds,
        T=float(T),
        worst_ray=worst,
        hit_time_max=hmax,
        hit_time_histogram={"counts": counts.tolist(), "edges": edges.tolist()},
        sampling={"nx": nx, "ndir": ndir if field.dim == 2 else 2, "n_rays": int(len(X))},
        funnel_mode=funnel is not None,
        margin=float(T - hmax),
        n_missed=int(np.sum(missed)),
        funnel_stats=stats,
    )


def control_time_estimate(field: MetricField, region: ControlRegion, sampling=(64, 64), horizon: float = 10.0,
                          funnel=None, seed: int = 0) -> float:
    """Largest sampled first-hit time; raises if a ray misses before ``horizon``."""
    nx, ndir = int(sampling[0]), int(sampling[1])
    X, D, hits, clear, extra = _check(field, region, horizon, nx, ndir, funnel, seed, 1 << 18)
    if not np.all(np.isfinite(hits)):
        rep = _report(field, region, horizon, X, D, hits, clear, nx, ndir, funnel, *extra)
        raise HorizonExceeded("a sampled ray never reaches the region", ray=rep.worst_ray, horizon=horizon)
    return float(np.max(hits))


def robustness_margin(field: MetricField, region: ControlRegion, T: float, eps_grid, sampling=(32, 32),
                      alpha: float = 0.5) -> float:
    """Largest ``eps`` in ``eps_grid`` for which every probe keeps GCC.

    Probes at each level: ``(1 +/- eps) g`` and ``g (1 +/- eps s)`` with
    ``s`` the C^1 kink profile. Levels are scanned in increasing order and
    the scan stops at the first failure. Returns 0 if the smallest level
    already fails.
    """
    if not check_gcc(field, region, T, sampling).holds:
        raise BaseGccFails("GCC fails for the unperturbed field", T=T)
    best = 0.0
    for eps in sorted(float(e) for e in eps_grid):
        probes = [conformal_perturbation(field, eps), conformal_perturbation(field, -eps),
                  modulate(field, kink_profile(alpha), eps, Regularity.C1),
                  modulate(field, kink_profile(alpha), -eps, Regularity.C1)]
        if all(check_gcc(p, region, T, sampling).holds for p in probes):
            best = eps
        else:
            break
    return best


def straight_line_hit_time(x0, direction, strips) -> float:
    """Analytic first entry time of a unit-speed straight line on the flat torus.

    ``strips`` is a list of ``(axis, lo, hi)`` open strips with ``0 <= lo < hi <= 1``.
    """
    x0 = np.asarray(x0, dtype=float) % 1.0
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    best = np.inf
    for axis, lo, hi in strips:
        c = x0[axis]
        if lo < c < hi:
            return 0.0
        if v[axis] > 0:
            t = ((lo - c) % 1.0) / v[axis]
        elif v[axis] < 0:
            t = ((c - hi) % 1.0) / -v[axis]
        else:
            t = np.inf
        best = min(best, t)
    return best


class GccChecker(BaseEstimator):
    """``fit(field)`` runs :func:`check_gcc`; the verdict is in ``report_``."""

    def __init__(self, region=None, T: float = 1.0, nx: int = 64, ndir: int = 64, funnel=None, seed: int = 0):
        self.region = region
        self.T = T
        self.nx = nx
        self.ndir = ndir
        self.funnel = funnel
        self.seed = seed

    def fit(self, field, y=None):
        self.report_ = check_gcc(field, self.region, self.T, (self.nx, self.ndir), self.funnel, self.seed)
        self.holds_ = self.report_.holds
        return self

    def predict(self, T):
        """Verdict at other horizons, reusing the fitted hit-time maximum."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "report_")
        T = np.atleast_1d(np.asarray(T, dtype=float))
        return self.report_.hit_time_max < T
