"""Coefficient pairs (kappa, g) on flat periodic tori of dimension 1 or 2."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from pathlib import Path

import numpy as np
import sympy as sp

from . import expr as _expr
from .exceptions import DescriptorError, DimensionMismatch, NonSPDSample


class Regularity(str, enum.Enum):
    SMOOTH = "Smooth"
    C2 = "C2"
    C1 = "C1"
    LIPSCHITZ = "Lipschitz"

    @property
    def rank(self) -> int:
        return {"Lipschitz": 0, "C1": 1, "C2": 2, "Smooth": 3}[self.value]

    @property
    def has_gradient(self) -> bool:
        return self.rank >= 1


@dataclass(frozen=True)
class MetricData:
    """Coefficient data at a single point."""

    g_lower: np.ndarray
    g_upper: np.ndarray
    sqrt_det: float
    kappa: float
    grad_g_upper: np.ndarray | None = None  # [k, i, j] = d_k g^{ij}


@dataclass(frozen=True)
class MetricField:
    """Immutable descriptor of ``(kappa, g)``.

    ``kappa`` and the entries of ``g`` are strings in the expression grammar
    of :mod:`roughwave.expr`. ``g`` is stored as the upper triangle expanded
    to a full symmetric nested tuple.
    """

    dim: int
    kappa: str
    g: tuple
    regularity: Regularity = Regularity.SMOOTH
    name: str = dc_field(default="", compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DescriptorError("dim must be 1 or 2", dim=self.dim)
        g = tuple(tuple(str(v) for v in row) for row in self.g)
        if len(g) != self.dim or any(len(r) != self.dim for r in g):
            raise DescriptorError("g must be a dim x dim array", dim=self.dim)
        # symmetric by construction: lower triangle mirrors upper
        g = tuple(tuple(g[min(i, j)][max(i, j)] for j in range(self.dim)) for i in range(self.dim))
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "kappa", str(self.kappa))
        object.__setattr__(self, "regularity", Regularity(self.regularity))
        self._check_samples()

    # -- compiled evaluators -------------------------------------------------
    @cached_property
    def _sym(self):
        d = self.dim
        kap = _expr.parse(self.kappa, d)
        g = [[_expr.parse(self.g[i][j], d) for j in range(d)] for i in range(d)]
        return kap, g

    @cached_property
    def _eval_values(self):
        kap, g = self._sym
        d = self.dim
        return _expr.compile_many([kap] + [g[i][j] for i in range(d) for j in range(i, d)], d)

    @cached_property
    def _eval_derivs(self):
        _, g = self._sym
        d = self.dim
        syms = _expr.SYMBOLS[:d]
        ders = [sp.diff(g[i][j], syms[k]) for k in range(d) for i in range(d) for j in range(i, d)]
        return _expr.compile_many(ders, d)

    def _unpack_sym(self, flat, lead):
        d = self.dim
        out = np.empty(lead + (d, d))
        m = 0
        for i in range(d):
            for j in range(i, d):
                out[..., i, j] = flat[m]
                out[..., j, i] = flat[m]
                m += 1
        return out

    # -- vectorized evaluation -----------------------------------------------
    def values(self, x):
        """Return ``(kappa, g_lower)`` at points ``x`` of shape (..., dim)."""
        x = self._points(x)
        vals = self._eval_values(x)
        return vals[0], self._unpack_sym(vals[1:], x.shape[:-1])

    def coefficients(self, x):
        """Return ``(kappa, g_lower, g_upper, sqrt_det)`` at points ``x``."""
        kap, gl = self.values(x)
        gu, sq = _inverse_sqrtdet(gl)
        return kap, gl, gu, sq

    def g_upper(self, x):
        return self.coefficients(x)[2]

    def grad_g_upper(self, x, g_upper=None):
        """``d_k g^{ij}`` at ``x`` with layout (..., k, i, j)."""
        if not self.regularity.has_gradient:
            from .exceptions import InsufficientRegularity

            raise InsufficientRegularity("gradient requested for a Lipschitz metric", regularity=self.regularity.value)
        x = self._points(x)
        lead = x.shape[:-1]
        d = self.dim
        if g_upper is None:
            g_upper = self.g_upper(x)
        raw = self._eval_derivs(x)
        per = d * (d + 1) // 2
        dgl = np.stack([self._unpack_sym(raw[k * per:(k + 1) * per], lead) for k in range(d)], axis=-3)
        # d g^{-1} = - g^{-1} (d g) g^{-1}
        return -np.einsum("...ia,...kab,...bj->...kij", g_upper, dgl, g_upper)

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            if self.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
                x = x[..., None]
            else:
                raise DimensionMismatch("point dimension does not match field", dim=self.dim, shape=list(x.shape))
        return np.mod(x, 1.0)

    # -- checks ----------------------------------------------------------------
    def _check_samples(self, n: int = 12):
        grid = sample_grid(self.dim, n)
        kap, gl = self.values(grid)
        if not np.all(np.isfinite(kap)) or not np.all(np.isfinite(gl)):
            raise DescriptorError("descriptor produced non-finite values")
        if np.min(kap) <= 0:
            raise DescriptorError("kappa must be positive", kappa_min=float(np.min(kap)))
        if np.min(np.linalg.eigvalsh(gl)) <= 0:
            raise NonSPDSample("g is not positive definite on the sample grid")
        # periodicity: compare x_k = 0 against x_k = 1 without wrapping
        for k in range(self.dim):
            a = grid.copy()
            b = grid.copy()
            a[..., k] = 0.0
            b[..., k] = 1.0
            va = self._eval_values(a)
            vb = self._eval_values(b)
            if np.max(np.abs(va - vb)) > 1e-10 * max(1.0, np.max(np.abs(va))):
                raise DescriptorError("descriptor is not 1-periodic", axis=k)

    def difference_quotient_bound(self, n: int = 256) -> float:
        """Grid sup of symmetric difference quotients of all coefficients.

        This is the ess-sup bound exposed for every class, including
        Lipschitz descriptors that have no pointwise gradient.
        """
        return float(np.max(_dq_sup(self, n)))

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "class": self.regularity.value,
            "kappa": self.kappa,
            "g": [list(r) for r in self.g],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricField":
        allowed = {"dim", "class", "kappa", "g", "name"}
        extra = set(doc) - allowed
        if extra:
            raise DescriptorError(f"unknown metric keys {sorted(extra)}", keys=sorted(extra))
        try:
            return cls(
                dim=int(doc["dim"]),
                kappa=doc.get("kappa", "1"),
                g=tuple(tuple(r) for r in doc["g"]),
                regularity=Regularity(doc.get("class", "Smooth")),
                name=doc.get("name", ""),
            )
        except KeyError as exc:
            raise DescriptorError(f"missing metric key {exc.args[0]!r}", key=exc.args[0]) from exc
        except ValueError as exc:
            raise DescriptorError(str(exc)) from exc

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> "MetricField":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def is_constant(self) -> bool:
        kap, g = self._sym
        return not kap.free_symbols and not any(e.free_symbols for row in g for e in row)


def _inverse_sqrtdet(gl):
    d = gl.shape[-1]
    if d == 1:
        gu = 1.0 / gl
        sq = np.sqrt(gl[..., 0, 0])
    else:
        a, b, c = gl[..., 0, 0], gl[..., 0, 1], gl[..., 1, 1]
        det = a * c - b * b
        gu = np.empty_like(gl)
        gu[..., 0, 0] = c / det
        gu[..., 1, 1] = a / det
        gu[..., 0, 1] = gu[..., 1, 0] = -b / det
        sq = np.sqrt(det)
    return gu, sq


def sample_grid(dim: int, n: int, offset: float = 0.0) -> np.ndarray:
    """Uniform grid of the unit torus, shape (n, ..., n, dim)."""
    ax = (np.arange(n) + offset) / n
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    return np.stack(mesh, axis=-1)


def eval_metric(field: MetricField, x) -> MetricData:
    """Coefficient data at one point (wrapped onto the torus)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kap, gl, gu, sq = field.coefficients(x)
    if not np.isfinite(sq) or np.min(np.linalg.eigvalsh(gl)) <= 0:
        raise NonSPDSample("g is not positive definite", x=x.tolist())
    grad = field.grad_g_upper(x, gu) if field.regularity.has_gradient else None
    return MetricData(g_lower=gl, g_upper=gu, sqrt_det=float(sq), kappa=float(kap), grad_g_upper=grad)


def _stacked_values(field, pts):
    kap, gl = field.values(pts)
    d = field.dim
    return np.concatenate([kap[None], gl.reshape(gl.shape[:-2] + (d * d,)).transpose((-1,) + tuple(range(gl.ndim - 2)))])


def _dq_sup(field, n):
    pts = sample_grid(field.dim, n)
    h = 1.0 / n
    out = []
    for k in range(field.dim):
        e = np.zeros(field.dim)
        e[k] = h
        dq = (_stacked_values(field, pts + e) - _stacked_values(field, pts - e)) / (2 * h)
        out.append(np.abs(dq).reshape(dq.shape[0], -1).max(axis=1))
    return np.max(out, axis=0)


def lipschitz_distance(a: MetricField, b: MetricField, sampling: int = 128, return_spacing: bool = False):
    """Grid estimate of the W^{1,inf} distance between two coefficient pairs.

    ``sup|kappa_a - kappa_b| + sup sum_ij |g_a - g_b|_ij + sup DQ``, where
    DQ sums, over kappa and the entries of g, the largest symmetric difference
    quotient (at grid scale) of the difference. A lower bound on the true
    distance that converges as ``sampling`` grows.
    """
    if a.dim != b.dim:
        raise DimensionMismatch("fields have different dimension", dims=[a.dim, b.dim])
    n = int(sampling)
    pts = sample_grid(a.dim, n)
    h = 1.0 / n
    diff = _stacked_values(a, pts) - _stacked_values(b, pts)
    value_term = np.max(np.abs(diff[0]))
    tensor_term = np.max(np.sum(np.abs(diff[1:]), axis=0))
    dq = np.zeros(diff.shape[0])
    for k in range(a.dim):
        e = np.zeros(a.dim)
        e[k] = h
        dp = _stacked_values(a, pts + e) - _stacked_values(b, pts + e)
        dm = _stacked_values(a, pts - e) - _stacked_values(b, pts - e)
        q = np.abs(dp - dm).reshape(diff.shape[0], -1).max(axis=1) / (2 * h)
        dq = np.maximum(dq, q)
    dist = float(value_term + tensor_term + np.sum(dq))
    return (dist, h) if return_spacing else dist


# -- constructors ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def flat(dim: int = 2) -> MetricField:
    g = tuple(tuple("1" if i == j else "0" for j in range(dim)) for i in range(dim))
    return MetricField(dim, "1", g, Regularity.SMOOTH, name="flat")


def _scale_expr(e: str, factor: str) -> str:
    if e.strip() in ("0", "0.0"):
        return "0"
    return f"({factor})*({e})"


def conformal_perturbation(base: MetricField, eps: float) -> MetricField:
    """Return the field with ``g`` replaced by ``(1 + eps) g``."""
    from .exceptions import PreconditionViolated

    if not eps > -1:
        raise PreconditionViolated("eps must exceed -1", eps=eps)
    if eps == 0:
        return base
    f = _fmt(1.0 + eps)
    g = tuple(tuple(_scale_expr(v, f) for v in row) for row in base.g)
    return MetricField(base.dim, base.kappa, g, base.regularity, name=f"{base.name or 'field'}*{f}")


def modulate(base: MetricField, profile: str, eps: float, regularity: Regularity | None = None) -> MetricField:
    """Return ``g (1 + eps * profile(x))``; class is the weaker of the two."""
    fac = f"1 + ({_fmt(eps)})*({profile})"
    g = tuple(tuple(_scale_expr(v, fac) for v in row) for row in base.g)
    reg = base.regularity
    if regularity is not None and regularity.rank < reg.rank:
        reg = regularity
    return MetricField(base.dim, base.kappa, g, reg, name=f"{base.name or 'field'}~{eps:g}")


def kink_profile(alpha: float = 0.5, axis: int = 0) -> str:
    """``|sin(pi x)|^(1+alpha)``: C^1 but not C^2 for 0 < alpha < 1."""
    return f"pow(abs(sin(pi*x{axis + 1})), {_fmt(1.0 + alpha)})"


def kink_metric(dim: int = 2, amplitude: float = 0.3, alpha: float = 0.5) -> MetricField:
    """Diagonal metric with ``g11 = 1 + amplitude*|sin(pi x1)|^(1+alpha)``.

    With 0 < alpha < 1 the coefficient is C^1 with a Holder-alpha derivative
    kink on the lines ``x1 = 0 mod 1``.
    """
    reg = Regularity.C1 if 0 < alpha < 1 else (Regularity.LIPSCHITZ if alpha == 0 else Regularity.C2)
    g = [["0"] * dim for _ in range(dim)]
    for i in range(dim):
        g[i][i] = "1"
    g[0][0] = f"1 + {_fmt(amplitude)}*{kink_profile(alpha)}"
    return MetricField(dim, "1", tuple(map(tuple, g)), reg, name=f"kink(alpha={alpha:g})")


def lipschitz_kink(dim: int = 2, amplitude: float = 0.3) -> MetricField:
    """``g11 = 1 + amplitude*|sin(pi x1)|``: Lipschitz, not C^1."""
    return kink_metric(dim, amplitude, alpha=0.0)


def smooth_bump_metric(dim: int = 2, amplitude: float = 0.3) -> MetricField:
    """Smooth comparison field ``g11 = 1 + amplitude*sin(pi x1)^2``."""
    g = [["0"] * dim for _ in range(dim)]
    for i in range(dim):
        g[i][i] = "1"
    g[0][0] = f"1 + {_fmt(amplitude)}*pow(sin(pi*x1), 2)"
    return MetricField(dim, "1", tuple(map(tuple, g)), Regularity.SMOOTH, name="smooth-bump")


def variable_kappa_metric(dim: int = 1, amplitude: float = 0.2) -> MetricField:
    """Flat g with a smooth non-constant density ``kappa``."""
    kap = f"1 + {_fmt(amplitude)}*cos(2*pi*x1)"
    g = tuple(tuple("1" if i == j else "0" for j in range(dim)) for i in range(dim))
    return MetricField(dim, kap, g, Regularity.SMOOTH, name="variable-kappa")
