"""Transport of nonnegative measures by continuous vector fields.

A finite atom cloud ``mu`` is invariant under ``X`` when ``<mu, X.grad a> = 0``
for every compactly supported test function ``a``. This module provides

* the weak residual of that identity over a dictionary of bumps,
* the ball-hitting predicate ``B(x + d X(x), d eps) ∩ F != {}``,
* the greedy construction of approximate integral curves inside ``F`` and
  its refinement along a ladder ``n -> inf``,
* the explicit family ``q = chi(v) beta(w)`` with ``X q = g + h``, where
  ``g >= 0`` for small ``delta`` and ``h`` lives in a small ball ahead of
  the base point.

No Lipschitz bound on ``X`` is assumed anywhere; integral curves are built
from the support of the measure, not from an ODE solver.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_points
from .exceptions import (DimensionMismatch, DomainExit, EmptyDictionary, PreconditionViolated, StuckAtStep,
                         VanishingField, ZeroFieldAtBase)

# ----------------------------------------------------------------------------
# one-dimensional profiles


def _real(s):
    return np.real(s) if np.iscomplexobj(s) else s


def chi(s):
    """``exp(1/(s-1))`` for ``s < 1`` and ``0`` otherwise. Accepts complex input."""
    s = np.asarray(s)
    inside = _real(s) < 1.0
    safe = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 / (safe - 1.0)), 0.0)


def chi_prime(s):
    s = np.asarray(s)
    inside = _real(s) < 1.0
    safe = np.where(inside, s, 0.0)
    return np.where(inside, -np.exp(1.0 / (safe - 1.0)) / (safe - 1.0) ** 2, 0.0)


def _psi(r):
    r = np.asarray(r)
    pos = _real(r) > 0.0
    safe = np.where(pos, r, 1.0)
    return np.where(pos, np.exp(-1.0 / safe), 0.0)


def _psi_prime(r):
    r = np.asarray(r)
    pos = _real(r) > 0.0
    safe = np.where(pos, r, 1.0)
    return np.where(pos, np.exp(-1.0 / safe) / safe**2, 0.0)


def beta(s):
    """Smooth step: 0 on ``(-inf, -1]``, increasing on ``(-1, -1/2)``, 1 on ``[-1/2, inf)``."""
    s = np.asarray(s)
    a = _psi(s + 1.0)
    b = _psi(-0.5 - s)
    return a / (a + b)


def beta_prime(s):
    s = np.asarray(s)
    a, da = _psi(s + 1.0), _psi_prime(s + 1.0)
    b, db = _psi(-0.5 - s), _psi_prime(-0.5 - s)
    # d/ds b = -db; quotient rule on a/(a+b)
    return (da * b + a * db) / (a + b) ** 2


# ----------------------------------------------------------------------------
# measures and fields


@dataclass
class DiscreteMeasure:
    """Weighted atoms with a k-d tree for exact ball queries."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.points.shape[0] != self.weights.size:
            raise DimensionMismatch("one weight per point is required", n_points=self.points.shape[0],
                                    n_weights=self.weights.size)
        if not np.all(self.weights > 0) or not np.all(np.isfinite(self.weights)):
            raise PreconditionViolated("weights must be positive and finite")
        if not np.all(np.isfinite(self.points)):
            raise PreconditionViolated("points must be finite")
        self._tree = cKDTree(self.points)
        self._floor = None

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(p, np.full(p.shape[0], 1.0 / p.shape[0]))

    def ball(self, center, radius: float) -> np.ndarray:
        """Indices of atoms with ``|x - center| < radius`` (open ball), sorted by distance then index."""
        c = np.asarray(center, dtype=float)
        if radius <= 0:
            return np.zeros(0, dtype=int)
        idx = np.asarray(self._tree.query_ball_point(c, radius * (1 + 1e-12) + 1e-300), dtype=int)
        if idx.size == 0:
            return idx
        d = np.linalg.norm(self.points[idx] - c, axis=1)
        keep = d < radius
        idx, d = idx[keep], d[keep]
        order = np.lexsort((idx, d))
        return idx[order]

    def nearest(self, x):
        """Distance to, and index of, the closest atom (ties go to the lowest index)."""
        d, i = self._tree.query(np.atleast_2d(np.asarray(x, dtype=float)), k=1)
        return d, i

    def distance(self, x) -> np.ndarray:
        return self.nearest(x)[0]

    @property
    def resolution_floor(self) -> float:
        """Largest nearest-neighbour spacing: below this scale emptiness is inconclusive."""
        if self._floor is None:
            if len(self) < 2:
                self._floor = 0.0
            else:
                d, _ = self._tree.query(self.points, k=2)
                self._floor = float(d[:, 1].max())
        return self._floor

    def pair(self, values) -> float:
        """``<mu, f>`` for values of ``f`` at the atoms (fixed summation order)."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["w"])
            for p, m in zip(self.points, self.weights):
                w.writerow([repr(float(c)) for c in p] + [repr(float(m))])

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        if head[-1] != "w" or any(h != f"x{i + 1}" for i, h in enumerate(head[:-1])):
            raise PreconditionViolated("measure CSV header must read x1,...,xd,w", header=head)
        data = np.array([[float(c) for c in r] for r in body if r], dtype=float)
        return cls(data[:, :-1], data[:, -1])


@dataclass
class ContinuousField:
    """Vectorized map ``(N, d) -> (N, d)`` with optional continuity metadata."""

    func: Callable
    dim: int
    modulus: Callable | None = None
    zero_set: tuple = ()
    name: str = "field"

    def __call__(self, x) -> np.ndarray:
        x = check_points(x, self.dim)
        out = np.asarray(self.func(x), dtype=float)
        return out.reshape(x.shape)

    def norm(self, x) -> np.ndarray:
        return np.linalg.norm(self(x), axis=1)

    def continuity_probe(self, lo, hi, n: int = 65) -> dict:
        """Largest neighbour difference on an ``n^d`` grid, compared to the modulus when given."""
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = self(pts.reshape(-1, self.dim)).reshape(pts.shape)
        worst, ok = 0.0, True
        for k in range(self.dim):
            dv = np.linalg.norm(np.diff(vals, axis=k), axis=-1).max()
            worst = max(worst, float(dv))
            if self.modulus is not None:
                step = (hi[k] - lo[k]) / (n - 1)
                ok = ok and dv <= self.modulus(step) * (1 + 1e-12)
        return {"max_jump": worst, "within_modulus": ok if self.modulus is not None else None}

    @classmethod
    def from_exprs(cls, exprs: Sequence[str], name: str = "expr") -> "ContinuousField":
        from . import expr as _expr

        dim = len(exprs)
        fn = _expr.compile_many([_expr.parse(e, dim) for e in exprs], dim)

        def func(x):
            return np.moveaxis(np.asarray(fn(x), dtype=float), 0, -1)

        return cls(func, dim, name=name)


def rotation_field() -> ContinuousField:
    return ContinuousField(lambda x: np.stack([-x[:, 1], x[:, 0]], axis=1), 2,
                           modulus=lambda r: r, zero_set=((0.0, 0.0),), name="rotation")


def branching_field(c: float = 3.0) -> ContinuousField:
    """``(1, c sign(y) |y|^(2/3))``: continuous, not Lipschitz at ``y = 0``.

    For ``c = 3`` both ``y = 0`` and ``y = (x - a)^3`` (``x >= a``) are integral curves.
    """
    def func(x):
        y = x[:, 1]
        return np.stack([np.ones_like(y), c * np.sign(y) * np.abs(y) ** (2.0 / 3.0)], axis=1)

    return ContinuousField(func, 2, modulus=lambda r: c * r ** (2.0 / 3.0), name="branching")


def constant_field(vec) -> ContinuousField:
    v = np.asarray(vec, dtype=float)
    return ContinuousField(lambda x: np.broadcast_to(v, x.shape).copy(), v.size, modulus=lambda r: 0.0,
                           name="constant")


def named_field(name: str) -> ContinuousField:
    table = {"rotation": rotation_field, "branching": branching_field}
    if name not in table:
        raise PreconditionViolated(f"unknown field '{name}'", choices=sorted(table))
    return table[name]()


def circle_measure(n: int, radius: float = 1.0, phase: float = 0.0) -> DiscreteMeasure:
    th = phase + 2 * np.pi * np.arange(n) / n
    return DiscreteMeasure.uniform(radius * np.stack([np.cos(th), np.sin(th)], axis=1))


def annulus_grid(spacing: float, radius: float = 1.0, half_width: float = 2e-4) -> DiscreteMeasure:
    """Lattice points of spacing ``spacing`` with ``|r - radius| <= half_width``, unit total mass."""
    r_lo, r_hi = radius - half_width, radius + half_width
    m = int(np.ceil(r_hi / spacing))
    xs = spacing * np.arange(-m, m + 1)
    # per column, the admissible j-range on each side
    ymax = np.sqrt(np.maximum(r_hi**2 - xs**2, 0.0))
    ymin = np.sqrt(np.maximum(r_lo**2 - xs**2, 0.0))
    cols = []
    for x, a, b in zip(xs, ymin, ymax):
        up = np.arange(int(np.ceil(a / spacing)), int(np.floor(b / spacing)) + 1)
        j = np.unique(np.concatenate([-up, up]))
        cols.append(np.stack([np.full(j.size, x), spacing * j], axis=1))
    pts = np.concatenate(cols)
    r = np.linalg.norm(pts, axis=1)
    pts = pts[(r >= r_lo) & (r <= r_hi)]
    return DiscreteMeasure.uniform(pts)


def line_measure(spacing: float, lo: float = -1.0, hi: float = 1.0, offset: float = 0.0) -> DiscreteMeasure:
    """Atoms on ``{y = 0}`` with arclength weights."""
    x = offset + spacing * np.arange(int(np.ceil((lo - offset) / spacing)), int(np.floor((hi - offset) / spacing)) + 1)
    pts = np.stack([x, np.zeros_like(x)], axis=1)
    return DiscreteMeasure(pts, np.full(x.size, spacing))


def branching_support(spacing: float, lo: float = -1.0, hi: float = 1.0) -> DiscreteMeasure:
    """Atoms on ``{y = 0}`` together with the cubic ``{(x, x^3), x > 0}``."""
    line = line_measure(spacing, lo, hi)
    x = spacing * np.arange(1, int(np.floor(hi / spacing)) + 1)
    cub = np.stack([x, x**3], axis=1)
    pts = np.concatenate([line.points, cub])
    return DiscreteMeasure(pts, np.full(pts.shape[0], spacing))


# ----------------------------------------------------------------------------
# weak residual


@dataclass(frozen=True)
class BumpFunction:
    """Tensor bump ``prod_i phi((x_i - c_i) / r)`` with ``phi(s) = exp(-1/(1 - s^2))``."""

    center: tuple
    radius: float

    def _parts(self, x):
        s = (x - np.asarray(self.center)) / self.radius
        inside = np.abs(s) < 1
        ss = np.where(inside, s, 0.0)
        phi = np.where(inside, np.exp(-1.0 / (1.0 - ss**2)), 0.0)
        dphi = np.where(inside, phi * (-2 * ss / (1.0 - ss**2) ** 2), 0.0) / self.radius
        return phi, dphi

    def __call__(self, x):
        phi, _ = self._parts(np.atleast_2d(x))
        return np.prod(phi, axis=1)

    def gradient(self, x):
        phi, dphi = self._parts(np.atleast_2d(x))
        d = phi.shape[1]
        out = np.empty_like(phi)
        for k in range(d):
            others = np.prod(np.delete(phi, k, axis=1), axis=1) if d > 1 else 1.0
            out[:, k] = dphi[:, k] * others
        return out

    def grad_sup(self, n: int = 257) -> float:
        d = len(self.center)
        ax = np.linspace(-1, 1, n)
        pts = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
        pts = pts * self.radius + np.asarray(self.center)
        return float(np.linalg.norm(self.gradient(pts), axis=1).max())


def bump_dictionary(lo, hi, n_per_axis: int, radius: float) -> list:
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(lo, hi)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    return [BumpFunction(tuple(float(c) for c in ctr), float(radius)) for ctr in centers]


def weak_residual(mu: DiscreteMeasure, X: ContinuousField, dictionary, return_all: bool = False):
    """``max_a |<mu, X.grad a>| / (mass * sup|grad a|)`` over the dictionary."""
    dictionary = list(dictionary)
    if not dictionary:
        raise EmptyDictionary("the test-function dictionary is empty")
    if mu.dim != X.dim:
        raise DimensionMismatch("measure and field dimensions differ", measure=mu.dim, field=X.dim)
    xv = X(mu.points)
    vals = []
    for a in dictionary:
        pairing = mu.pair(np.sum(xv * a.gradient(mu.points), axis=1))
        vals.append(abs(pairing) / (mu.mass * a.grad_sup()))
    vals = np.asarray(vals)
    return (float(vals.max()), vals) if return_all else float(vals.max())


# ----------------------------------------------------------------------------
# ball-hitting predicate


@dataclass
class BallHitReport:
    passes: bool
    eps: float
    deltas: list
    n_points: int
    c_K: float
    C_K: float
    resolution_floor: float
    failures: list = dc_field(default_factory=list)
    pass_by_delta: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"passes": self.passes, "eps": self.eps, "deltas": self.deltas, "n_points": self.n_points,
                "c_K": self.c_K, "C_K": self.C_K, "resolution_floor": self.resolution_floor,
                "failures": self.failures[:50], "n_failures": len(self.failures),
                "pass_by_delta": {repr(k): v for k, v in self.pass_by_delta.items()}}


def _in_box(p, box):
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    return np.all((p >= lo) & (p <= hi), axis=1)


def ball_hit_predicate(F: DiscreteMeasure, X: ContinuousField, box, eps: float, delta_grid,
                       field_samples: int = 33, max_witnesses: int = 1000) -> BallHitReport:
    """Check ``B(x + d X(x), |d| eps) ∩ F != {}`` for atoms ``x`` of ``F`` in ``box`` and ``d`` in ``±delta_grid``.

    ``c_K`` is the minimum of ``|X|`` over a sample grid of the box and the
    atoms inside it; a nonpositive value raises ``VanishingField``.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    axes = [np.linspace(a, b, field_samples) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, F.dim)
    inside = F.points[_in_box(F.points, box)]
    samples = np.concatenate([grid, inside]) if inside.size else grid
    mods = X.norm(samples)
    c_K, C_K = float(mods.min()), float(mods.max())
    if c_K <= 0:
        raise VanishingField("vector field vanishes on the box", c_K=c_K,
                             witness=samples[int(np.argmin(mods))].tolist())
    deltas = sorted({float(s) * abs(float(d)) for d in delta_grid for s in (-1, 1)})
    xv = X(inside) if inside.size else np.zeros((0, F.dim))
    failures, by_delta = [], {}
    for d in deltas:
        if inside.size == 0:
            by_delta[d] = True
            continue
        dist, _ = F.nearest(inside + d * xv)
        bad = np.nonzero(~(dist < abs(d) * eps))[0]
        by_delta[d] = bad.size == 0
        for i in bad[: max(0, max_witnesses - len(failures))]:
            failures.append({"x": inside[i].tolist(), "delta": d, "gap": float(dist[i]), "radius": abs(d) * eps})
    return BallHitReport(all(by_delta.values()), float(eps), deltas, int(inside.shape[0]), c_K, C_K,
                         F.resolution_floor, failures, by_delta)


# ----------------------------------------------------------------------------
# greedy integral curves


@dataclass
class IntegralCurve:
    s: np.ndarray
    points: np.ndarray
    delta: float
    n: int
    candidates: np.ndarray
    feasible: np.ndarray
    diagnostics: dict

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([np.interp(s, self.s, self.points[:, k]) for k in range(self.points.shape[1])], axis=-1)

    def to_csv(self, path) -> None:
        path = Path(path)
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"x{i + 1}" for i in range(d)] + ["candidates", "feasible"])
            for j in range(self.s.size):
                w.writerow([repr(float(self.s[j]))] + [repr(float(c)) for c in self.points[j]]
                           + [int(self.candidates[j]), int(self.feasible[j])])
        side = {k: v for k, v in self.diagnostics.items() if not k.startswith("_")}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True))


def _walk(F, X, x0, delta, n, steps, sign, domain, lookahead):
    pts = [np.asarray(x0, dtype=float)]
    cand, feas = [0], [0]
    r = delta / n
    for ell in range(steps):
        x = pts[-1]
        c = x + sign * delta * X(x[None])[0]
        if domain is not None and not _in_box(c[None], domain)[0]:
            raise DomainExit("selection ball left the domain", step=ell, x=x.tolist(), center=c.tolist(),
                             direction=sign)
        idx = F.ball(c, r)
        if idx.size == 0:
            raise StuckAtStep("no support point in the selection ball", step=ell, x=x.tolist(),
                              center=c.tolist(), radius=r, delta=delta, direction=sign)
        nf = 0
        if lookahead:
            sub = F.points[idx[:lookahead]]
            c2 = sub + sign * delta * X(sub)
            d2, _ = F.nearest(c2)
            nf = int(np.count_nonzero(d2 < r))
        pts.append(F.points[idx[0]].copy())
        cand.append(int(idx.size))
        feas.append(nf)
    return np.array(pts), np.array(cand), np.array(feas)


def _ode_residual(X, s, pts, sub: int = 8):
    """``sup |g(s) - g(0) - int_0^s X(g)|`` with the integral by composite trapezoid on refined nodes."""
    j0 = int(np.argmin(np.abs(s)))
    t = np.concatenate([np.linspace(s[i], s[i + 1], sub, endpoint=False) for i in range(s.size - 1)] + [s[-1:]])
    g = np.stack([np.interp(t, s, pts[:, k]) for k in range(pts.shape[1])], axis=1)
    xv = X(g)
    inc = 0.5 * (xv[1:] + xv[:-1]) * np.diff(t)[:, None]
    cum = np.concatenate([np.zeros((1, pts.shape[1])), np.cumsum(inc, axis=0)])
    k0 = j0 * sub
    cum = cum - cum[k0]
    res = np.linalg.norm(g - g[k0] - cum, axis=1)
    return float(res.max()), t, g


def construct_integral_curve(F: DiscreteMeasure, X: ContinuousField, x0, n: int, horizon: float,
                             domain=None, min_delta: float | None = None, lookahead: int = 64,
                             backward: bool = True) -> IntegralCurve:
    """Greedy polyline through atoms of ``F`` with step ``delta <= 1/n`` and ball radius ``delta/n``.

    From ``x`` the next vertex is the atom of ``F`` closest to
    ``x + delta X(x)`` within distance ``delta / n``. ``delta`` starts at
    ``1/n`` and is halved (with a full restart) whenever a ball is empty.
    Candidate counts per step are kept; ``feasible`` counts candidates whose
    own next ball is nonempty.
    """
    x0 = np.asarray(x0, dtype=float)
    d0, i0 = F.nearest(x0)
    if d0[0] > max(F.resolution_floor, 1e-12):
        raise PreconditionViolated("x0 is not on the support", distance=float(d0[0]))
    if X.norm(x0[None])[0] == 0:
        raise ZeroFieldAtBase("vector field vanishes at x0", x0=x0.tolist())
    min_delta = min_delta if min_delta is not None else 1.0 / n * 2.0**-12
    delta, halvings = 1.0 / n, 0
    while True:
        steps = int(np.ceil(horizon / delta - 1e-12))
        try:
            fw, cf, ff = _walk(F, X, x0, delta, n, steps, +1, domain, lookahead)
            if backward:
                bw, cb, fb = _walk(F, X, x0, delta, n, steps, -1, domain, lookahead)
            else:
                bw, cb, fb = fw[:1], cf[:1], ff[:1]
            break
        except StuckAtStep as err:
            delta /= 2
            halvings += 1
            if delta < min_delta:
                err.payload["halvings"] = halvings
                raise
    pts = np.concatenate([bw[::-1], fw[1:]])
    cand = np.concatenate([cb[::-1], cf[1:]])
    feas = np.concatenate([fb[::-1], ff[1:]])
    s = delta * np.arange(-(bw.shape[0] - 1), fw.shape[0])
    res, t, g = _ode_residual(X, s, pts)
    dist = F.distance(g)
    C_K = float(X.norm(g).max())
    bound = delta * (C_K + 1.0 / n)
    floor = F.resolution_floor
    diag = {
        "n": n, "delta": delta, "halvings": halvings, "ball_radius": delta / n, "steps": int(s.size - 1),
        "ode_residual": res, "max_dist_to_support": float(dist.max()), "dist_bound": bound,
        "resolution_floor": floor, "C_K": C_K, "within_bound": bool(dist.max() <= bound + floor),
        "max_candidates": int(cand.max()), "max_feasible": int(feas.max()),
        "multi_candidate_steps": int(np.count_nonzero(feas >= 2)),
        "first_step_feasible": int(ff[1]) if ff.size > 1 else 0,
    }
    return IntegralCurve(s, pts, delta, n, cand, feas, diag)


@dataclass
class LimitCurveReport:
    ladder: list
    residuals: list
    cauchy: list
    decreasing: bool | None
    degenerate: bool
    curve: IntegralCurve
    s_grid: np.ndarray

    def to_dict(self) -> dict:
        return {"ladder": self.ladder, "residuals": self.residuals, "cauchy": self.cauchy,
                "decreasing": self.decreasing, "degenerate": self.degenerate}


def refine_to_limit_curve(F: DiscreteMeasure, X: ContinuousField, x0, n_ladder, horizon: float,
                          n_grid: int = 2001, **kw) -> LimitCurveReport:
    """Build curves along ``n_ladder`` and measure their uniform Cauchy behaviour on ``[-horizon, horizon]``."""
    ladder = [int(n) for n in n_ladder]
    curves = [construct_integral_curve(F, X, x0, n, horizon, **kw) for n in ladder]
    lo = max(c.s[0] for c in curves)
    hi = min(c.s[-1] for c in curves)
    sg = np.linspace(max(lo, -horizon), min(hi, horizon), n_grid)
    samples = [c(sg) for c in curves]
    cauchy = [float(np.linalg.norm(b - a, axis=1).max()) for a, b in zip(samples[:-1], samples[1:])]
    res = [c.diagnostics["ode_residual"] for c in curves]
    if len(curves) < 2:
        return LimitCurveReport(ladder, res, [], None, True, curves[-1], sg)
    dec = all(b < a for a, b in zip(res[:-1], res[1:]))
    return LimitCurveReport(ladder, res, cauchy, dec, False, curves[-1], sg)


# ----------------------------------------------------------------------------
# explicit test functions


def _rotation_to_e1(u):
    """Orthogonal matrix ``R`` with ``R u = e1`` for a unit vector ``u`` (Householder, or identity)."""
    d = u.size
    e1 = np.zeros(d)
    e1[0] = 1.0
    w = u - e1
    nw = np.linalg.norm(w)
    if nw < 1e-15:
        return np.eye(d)
    w = w / nw
    return np.eye(d) - 2.0 * np.outer(w, w)


class TestFunctionFamily:
    """``q = chi(v) beta(w)`` adapted to ``X`` at ``x0``.

    Frame: ``y = R (x - x0) / |X(x0)|`` where ``R`` maps ``X(x0)/|X(x0)|`` to
    ``e1``; in ``y`` the field reads ``Y = R X / |X(x0)|`` and ``Y(0) = e1``.
    With ``y = (y1, y')``::

        v = 1/2 - y1/delta + 8 (eps delta)^-2 |y'|^2
        w = 2/eps (1 - y1/delta)

    and ``X q = g + h`` with ``g = chi'(v) beta(w) Y.grad v`` and
    ``h = chi(v) beta'(w) Y.grad w``. In original coordinates the ball
    carrying ``h`` is centred at ``x0 + delta X(x0)`` with radius
    ``eps delta |X(x0)|``.
    """

    __test__ = False  # not a pytest class

    def __init__(self, X: ContinuousField, x0, eps: float, delta: float):
        if not 0 < eps:
            raise PreconditionViolated("eps must be positive", eps=eps)
        if not 0 < delta:
            raise PreconditionViolated("delta must be positive", delta=delta)
        self.X = X
        self.x0 = np.asarray(x0, dtype=float)
        self.eps = float(eps)
        self.delta = float(delta)
        x0v = X(self.x0[None])[0]
        self.scale = float(np.linalg.norm(x0v))
        if self.scale == 0:
            raise ZeroFieldAtBase("vector field vanishes at the base point", x0=self.x0.tolist())
        self.R = _rotation_to_e1(x0v / self.scale)

    # frame maps
    def to_frame(self, x):
        return (np.atleast_2d(x) - self.x0) @ self.R.T / self.scale

    def frame_field(self, x):
        return self.X(np.atleast_2d(x)) @ self.R.T / self.scale

    def _vw(self, y):
        ed = self.eps * self.delta
        v = 0.5 - y[:, 0] / self.delta + 8.0 / ed**2 * np.sum(y[:, 1:] ** 2, axis=1)
        w = 2.0 / self.eps * (1.0 - y[:, 0] / self.delta)
        return v, w

    def _grads(self, y):
        ed = self.eps * self.delta
        gv = np.empty_like(y)
        gv[:, 0] = -1.0 / self.delta
        gv[:, 1:] = 16.0 / ed**2 * y[:, 1:]
        gw = np.zeros_like(y)
        gw[:, 0] = -2.0 / ed
        return gv, gw

    @property
    def ball_center(self) -> np.ndarray:
        return self.x0 + self.delta * self.X(self.x0[None])[0]

    @property
    def ball_radius(self) -> float:
        return self.eps * self.delta * self.scale

    def q(self, x):
        v, w = self._vw(self.to_frame(x))
        return chi(v) * beta(w)

    def g(self, x):
        x = np.atleast_2d(x)
        y = self.to_frame(x)
        v, w = self._vw(y)
        gv, _ = self._grads(y)
        return chi_prime(v) * beta(w) * np.sum(self.frame_field(x) * gv, axis=1)

    def h(self, x):
        x = np.atleast_2d(x)
        y = self.to_frame(x)
        v, w = self._vw(y)
        _, gw = self._grads(y)
        return chi(v) * beta_prime(w) * np.sum(self.frame_field(x) * gw, axis=1)

    def xq_complex_step(self, x, step: float = 1e-30):
        """``X.grad q`` by a complex step along ``X(x)`` in original coordinates."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xc = x + 1j * step * self.X(x)
        y = (xc - self.x0) @ self.R.T / self.scale
        v, w = self._vw(y)
        return np.imag(chi(v) * beta(w)) / step

    def support_box(self, pad: float = 0.05):
        """Frame-coordinate box containing the support of ``q``."""
        half = self.eps * self.delta * np.sqrt((1.5 + self.eps / 2) / 8.0)
        lo = np.array([-0.5 * self.delta] + [-half] * (self.x0.size - 1))
        hi = np.array([self.delta * (1 + self.eps / 2)] + [half] * (self.x0.size - 1))
        span = hi - lo
        return lo - pad * span, hi + pad * span

    def probe_grid(self, n: int = 81, pad: float = 0.05):
        lo, hi = self.support_box(pad)
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.x0.size)
        return self.x0 + self.scale * y @ self.R

    def support_violations(self, x) -> dict:
        """Count grid points breaking the support inclusions for ``q``, ``g`` and ``h``."""
        x = np.atleast_2d(x)
        y = self.to_frame(x)
        d, e = self.delta, self.eps
        lat = 8.0 / (e * d) ** 2 * np.sum(y[:, 1:] ** 2, axis=1)
        lat_ok = lat <= 1.5 + e / 2
        q_ok = (y[:, 0] >= -d / 2) & (y[:, 0] <= d * (1 + e / 2)) & lat_ok
        h_ok = (y[:, 0] >= d * (1 + e / 4)) & (y[:, 0] <= d * (1 + e / 2)) & lat_ok
        qv, gv, hv = self.q(x), self.g(x), self.h(x)
        in_ball = np.linalg.norm(x - self.ball_center, axis=1) < self.ball_radius
        return {
            "q": int(np.count_nonzero((qv != 0) & ~q_ok)),
            "g": int(np.count_nonzero((gv != 0) & ~q_ok)),
            "h_strip": int(np.count_nonzero((hv != 0) & ~h_ok)),
            "h_ball": int(np.count_nonzero((hv != 0) & ~in_ball)),
            "n_q": int(np.count_nonzero(qv)),
            "n_h": int(np.count_nonzero(hv)),
        }


def _g_nonnegative(X, x0, eps, delta, n, tol):
    fam = TestFunctionFamily(X, x0, eps, delta)
    return float(fam.g(fam.probe_grid(n)).min()) >= -tol


def find_delta0(X: ContinuousField, x0, eps: float = 1.0, delta_max: float = 0.5, n: int = 61,
                tol: float = 1e-12, iters: int = 30) -> float:
    """Largest ``delta <= delta_max`` (to bisection accuracy) with ``g >= -tol`` on the support box grid.

    Halving from ``delta_max`` finds a positive bracket; bisection then
    locates the transition. Returns 0.0 if no bracket is found.
    """
    hi = float(delta_max)
    if _g_nonnegative(X, x0, eps, hi, n, tol):
        return hi
    lo = hi
    for _ in range(60):
        lo /= 2
        if _g_nonnegative(X, x0, eps, lo, n, tol):
            break
    else:
        return 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _g_nonnegative(X, x0, eps, mid, n, tol):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class ProbeResult:
    pair_xq: float
    pair_g: float
    pair_h: float
    identity_error: float
    delta0: float
    g_min_on_support: float
    h_outside_ball: int
    support_violations: dict
    grid_identity_error: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def test_function_probe(mu: DiscreteMeasure, X: ContinuousField, x0, eps: float, delta: float,
                        grid_n: int = 81, delta0_n: int = 61) -> ProbeResult:
    """Pair ``mu`` with ``X q``, ``g`` and ``h`` and check the support facts on atoms and on a probe grid."""
    if eps > 1:
        raise PreconditionViolated("eps must not exceed 1", eps=eps)
    fam = TestFunctionFamily(X, x0, eps, delta)
    P = mu.points
    xq, gv, hv = fam.xq_complex_step(P), fam.g(P), fam.h(P)
    pg, ph, pq = mu.pair(gv), mu.pair(hv), mu.pair(xq)
    grid = fam.probe_grid(grid_n)
    gerr = float(np.abs(fam.xq_complex_step(grid) - fam.g(grid) - fam.h(grid)).max())
    in_ball = np.linalg.norm(P - fam.ball_center, axis=1) < fam.ball_radius
    d0 = find_delta0(X, x0, eps, delta_max=max(delta, 0.5), n=delta0_n)
    box = fam.to_frame(P)
    lo, hi = fam.support_box(0.0)
    inbox = np.all((box >= lo) & (box <= hi), axis=1)
    gmin = float(gv[inbox].min()) if np.any(inbox) else 0.0
    return ProbeResult(pq, pg, ph, abs(pq - pg - ph), d0, gmin, int(np.count_nonzero((hv != 0) & ~in_ball)),
                       fam.support_violations(grid), gerr)


test_function_probe.__test__ = False  # keep pytest from collecting it
