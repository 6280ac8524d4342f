"""Estimator output container."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["EstimatedState", "EstimationError", "UnobservableError", "estimated_state_to_json"]


class EstimationError(RuntimeError):
    pass


class UnobservableError(EstimationError):
    """The measurement set does not determine the state (singular system)."""


@dataclass(frozen=True)
class EstimatedState:
    method: str
    v_real: np.ndarray
    v_imag: np.ndarray
    objective: float
    iterations: int = 1
    wall_time: float = 0.0
    converged: bool = True
    residual: float = 0.0
    aux: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.v_real)) and np.all(np.isfinite(self.v_imag))):
            raise EstimationError("estimate has non-finite entries")

    @property
    def voltage(self):
        return self.v_real + 1j * self.v_imag


def estimated_state_to_json(state, with_aux=False):
    doc = {
        "format": "ecfse-estimate/1",
        "method": state.method,
        "v_real": state.v_real.tolist(),
        "v_imag": state.v_imag.tolist(),
        "objective": state.objective,
        "iterations": state.iterations,
        "wall_time": state.wall_time,
        "converged": state.converged,
        "residual": state.residual,
    }
    if with_aux:
        doc["aux"] = {k: float(v) for k, v in state.aux.items()}
    return json.dumps(doc, indent=1)
