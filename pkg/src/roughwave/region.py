"""Open control regions on T^d and their weight profiles."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import expr as _expr
from .exceptions import DescriptorError, EmptyRegion


def _bump(s):
    """exp(1 - 1/(1 - (2s-1)^2)) on (0, 1), zero outside; equals 1 at s = 1/2."""
    s = np.asarray(s, dtype=float)
    r = 2.0 * s - 1.0
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@dataclass(frozen=True)
class ControlRegion:
    """Union of open periodic boxes, open balls and an expression sublevel set.

    ``boxes`` is a tuple of ``(lo, hi)`` pairs, one entry per axis; an entry
    of ``None`` leaves that axis unconstrained. Intervals with ``lo > hi`` wrap
    around the circle. ``expr`` defines ``{x : expr(x) < 0}``. ``profile`` is
    ``"indicator"`` or ``"smooth"``; the smooth profile is a C^inf weight
    whose nonzero set is exactly the region (boxes and balls only).
    """

    dim: int
    boxes: tuple = ()
    balls: tuple = ()
    expr: str | None = None
    profile: str = "indicator"

    def __post_init__(self):
        boxes = []
        for box in self.boxes:
            if len(box) != self.dim:
                raise DescriptorError("box needs one interval per axis", dim=self.dim)
            ivs = []
            for iv in box:
                if iv is not None and float(iv[1]) - float(iv[0]) >= 1.0:
                    iv = None  # covers the whole circle
                ivs.append(None if iv is None else (float(iv[0]), float(iv[1])))
            boxes.append(tuple(ivs))
        object.__setattr__(self, "boxes", tuple(boxes))
        balls = tuple((tuple(float(c) for c in ctr), float(r)) for ctr, r in self.balls)
        object.__setattr__(self, "balls", balls)
        if self.profile not in ("indicator", "smooth"):
            raise DescriptorError("profile must be 'indicator' or 'smooth'", profile=self.profile)
        if self.profile == "smooth" and self.expr is not None:
            raise DescriptorError("smooth profile is defined for boxes and balls only")
        if self.expr is not None:
            self._expr_fn  # parse eagerly
        if self.measure_estimate(64) <= 0:
            raise EmptyRegion("control region is empty", region=self.to_dict())

    @property
    def _expr_fn(self):
        e = _expr.parse(self.expr, self.dim)
        return _expr.compile_many([e], self.dim)

    # -- geometry ----------------------------------------------------------------
    @staticmethod
    def _interval_coord(x, iv):
        lo, hi = iv
        return np.mod(x - lo, 1.0), (hi - lo) % 1.0

    def _box_weight(self, x, box, smooth):
        w = np.ones(x.shape[:-1])
        for k, iv in enumerate(box):
            if iv is None:
                continue
            s, L = self._interval_coord(x[..., k], iv)
            if smooth:
                w = w * _bump(s / L)
            else:
                w = w * ((s > 0.0) & (s < L))
        return w

    def _ball_weight(self, x, ball, smooth):
        ctr, r = ball
        dx = np.mod(x - np.asarray(ctr) + 0.5, 1.0) - 0.5
        rho = np.sqrt(np.sum(dx**2, axis=-1)) / r
        if smooth:
            return _bump(0.5 + 0.5 * rho)
        return (rho < 1.0).astype(float)

    def weight(self, x) -> np.ndarray:
        """Profile ``b(x)``: indicator or smooth bump; shape ``x.shape[:-1]``."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        smooth = self.profile == "smooth"
        w = np.zeros(x.shape[:-1])
        for box in self.boxes:
            w = np.maximum(w, self._box_weight(x, box, smooth))
        for ball in self.balls:
            w = np.maximum(w, self._ball_weight(x, ball, smooth))
        if self.expr is not None:
            val = self._expr_fn(np.mod(x, 1.0))[0]
            w = np.maximum(w, (val < 0).astype(float))
        return w

    def distance(self, x) -> np.ndarray:
        """Cheap separation from the region (0 inside).

        Chebyshev distance for boxes, Euclidean for balls, ``max(expr, 0)``
        for expression sets. Used only to rank rays that never hit.
        """
        x = np.asarray(x, dtype=float)
        if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        out = np.full(x.shape[:-1], np.inf)
        for box in self.boxes:
            dist = np.zeros(x.shape[:-1])
            for k, iv in enumerate(box):
                if iv is None:
                    continue
                s, L = self._interval_coord(x[..., k], iv)
                inside = (s > 0) & (s < L)
                dk = np.where(inside, 0.0, np.minimum(np.abs(s - L), np.abs(1.0 - s) % 1.0))
                dist = np.maximum(dist, dk)
            out = np.minimum(out, dist)
        for ctr, r in self.balls:
            dx = np.mod(x - np.asarray(ctr) + 0.5, 1.0) - 0.5
            out = np.minimum(out, np.maximum(np.sqrt(np.sum(dx**2, axis=-1)) - r, 0.0))
        if self.expr is not None:
            out = np.minimum(out, np.maximum(self._expr_fn(np.mod(x, 1.0))[0], 0.0))
        return out

    def contains(self, x) -> np.ndarray:
        return self.weight(x) > 0.0

    def measure_estimate(self, n: int = 256) -> float:
        from .metric import sample_grid

        return float(np.mean(self.contains(sample_grid(self.dim, n, 0.5))))

    def min_feature(self) -> float:
        """Smallest interval length or ball radius (used for time sampling)."""
        sizes = [1.0]
        for box in self.boxes:
            for iv in box:
                if iv is not None:
                    L = (iv[1] - iv[0]) % 1.0
                    if L > 0:
                        sizes.append(L)
        sizes += [r for _, r in self.balls]
        return min(sizes)

    # -- serialization ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "boxes": [[None if iv is None else list(iv) for iv in box] for box in self.boxes],
            "balls": [{"center": list(c), "radius": r} for c, r in self.balls],
            "expr": self.expr,
            "profile": self.profile,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ControlRegion":
        extra = set(doc) - {"dim", "boxes", "balls", "expr", "profile"}
        if extra:
            raise DescriptorError(f"unknown region keys {sorted(extra)}", keys=sorted(extra))
        balls = tuple((b["center"], b["radius"]) for b in doc.get("balls", []))
        return cls(int(doc["dim"]), tuple(tuple(box) for box in doc.get("boxes", [])), balls,
                   doc.get("expr"), doc.get("profile", "indicator"))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "ControlRegion":
        return cls.from_dict(json.loads(Path(path).read_text()))


def whole(dim: int) -> ControlRegion:
    return ControlRegion(dim, boxes=((None,) * dim,))


def strip(dim: int, axis: int, lo: float, hi: float, profile: str = "indicator") -> ControlRegion:
    box = [None] * dim
    box[axis] = (lo, hi)
    return ControlRegion(dim, boxes=(tuple(box),), profile=profile)


def arc(lo: float, hi: float, profile: str = "indicator") -> ControlRegion:
    return strip(1, 0, lo, hi, profile)


def cross(width: float = 0.1) -> ControlRegion:
    """``{x1 in (0, w)} U {x2 in (0, w)}`` on T^2."""
    return ControlRegion(2, boxes=(((0.0, width), None), (None, (0.0, width))))
