"""Error types raised across the package.

Every error carries a ``payload`` dict so the command line layer can emit it
as machine readable JSON.
"""
from __future__ import annotations


class RoughWaveError(Exception):
    """Base class. ``payload`` holds JSON-serializable context."""

    code = "error"

    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = payload

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), **_jsonable(self.payload)}


def _jsonable(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


def _make(name: str, code: str, doc: str):
    cls = type(name, (RoughWaveError,), {"code": code, "__doc__": doc})
    return cls


# metric
NonSPDSample = _make("NonSPDSample", "non_spd_sample", "Metric sample is not symmetric positive definite.")
DimensionMismatch = _make("DimensionMismatch", "dimension_mismatch", "Fields or arrays of different dimension.")
DescriptorError = _make("DescriptorError", "descriptor_error", "Malformed metric or region descriptor.")

# hamiltonian
InsufficientRegularity = _make(
    "InsufficientRegularity", "insufficient_regularity", "Operation needs a C1 (or better) metric."
)
ZeroDirection = _make("ZeroDirection", "zero_direction", "A zero covector cannot be normalized.")
StepUnderflow = _make("StepUnderflow", "step_underflow", "Adaptive step size collapsed.")
PreconditionViolated = _make("PreconditionViolated", "precondition_violated", "Input violates a precondition.")
OffCharacteristic = _make("OffCharacteristic", "off_characteristic", "Curve left the characteristic set.")

# gcc
EmptyRegion = _make("EmptyRegion", "empty_region", "Control region has zero measure.")
HorizonExceeded = _make("HorizonExceeded", "horizon_exceeded", "A ray never reached the region before the horizon.")
BaseGccFails = _make("BaseGccFails", "base_gcc_fails", "The unperturbed configuration does not satisfy GCC.")
GccFailure = _make("GccFailure", "gcc_failure", "GCC does not hold for a required configuration.")

# wave
CflViolation = _make("CflViolation", "cfl_violation", "Time step exceeds the stability bound.")
NonFiniteState = _make("NonFiniteState", "non_finite_state", "Solver produced NaN or inf.")

# hum
CgStagnation = _make("CgStagnation", "cg_stagnation", "Conjugate gradient residual stopped decreasing.")
SingularForm = _make("SingularForm", "singular_form", "Observation form is numerically singular.")

# perturbation / phase space
NyquistViolation = _make("NyquistViolation", "nyquist_violation", "Frequency or width not resolved by the grid.")
ScaleTooFine = _make("ScaleTooFine", "scale_too_fine", "Window scale not resolved by the trajectory sampling.")

# measure transport
EmptyDictionary = _make("EmptyDictionary", "empty_dictionary", "No test functions given.")
VanishingField = _make("VanishingField", "vanishing_field", "Vector field vanishes on the compact set.")
StuckAtStep = _make("StuckAtStep", "stuck_at_step", "No support point inside the selection ball.")
DomainExit = _make("DomainExit", "domain_exit", "Curve left the admissible domain.")
ZeroFieldAtBase = _make("ZeroFieldAtBase", "zero_field_at_base", "Vector field vanishes at the base point.")

# cli
ConfigError = _make("ConfigError", "config_error", "Invalid experiment configuration.")

__all__ = [n for n, v in dict(globals()).items() if isinstance(v, type) and issubclass(v, RoughWaveError)]
