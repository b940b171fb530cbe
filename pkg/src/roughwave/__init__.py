"""Wave propagation, geometric control and HUM controls for rough metrics on flat tori."""
from __future__ import annotations

from .exceptions import RoughWaveError
from .gcc import GccChecker, GccReport, check_gcc
from .hamiltonian import PhasePoint, integrate_bicharacteristic
from .hum import HUMController, ObservabilityEstimator, compute_hum_control, estimate_observability_constant
from .metric import MetricField, Regularity, conformal_perturbation, flat, kink_metric
from .phase_space import HusimiTransformer, PhaseDensity, char_concentration, husimi_transform
from .region import ControlRegion
from .transport import ContinuousField, DiscreteMeasure, construct_integral_curve, weak_residual
from .wave import GridSpec, WaveState, simulate

__version__ = "0.1.0"

__all__ = [
    "RoughWaveError", "GccChecker", "GccReport", "check_gcc", "PhasePoint", "integrate_bicharacteristic",
    "HUMController", "ObservabilityEstimator", "compute_hum_control", "estimate_observability_constant",
    "MetricField", "Regularity", "conformal_perturbation", "flat", "kink_metric", "HusimiTransformer",
    "PhaseDensity", "char_concentration", "husimi_transform", "ControlRegion", "ContinuousField",
    "DiscreteMeasure", "construct_integral_curve", "weak_residual", "GridSpec", "WaveState", "simulate",
]
