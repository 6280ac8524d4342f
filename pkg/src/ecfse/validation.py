"""Argument checks shared by the estimator classes and the harness."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .grid import NetworkCase, load_case
from .measurements import MeasurementSet

__all__ = ["NotFittedError", "check_case", "check_is_fitted", "check_measurements",
           "check_positive", "check_voltage"]


def check_case(case):
    """Accept a :class:`NetworkCase` or anything :func:`load_case` takes."""
    if isinstance(case, NetworkCase):
        return case
    if case is None:
        raise ValueError("a network case is required")
    return load_case(case)


def check_measurements(measurements, case=None):
    if not isinstance(measurements, MeasurementSet):
        raise TypeError(f"expected a MeasurementSet, got {type(measurements).__name__}")
    if case is not None:
        for p in measurements.pmus:
            case.bus_index(p.bus)
            for k, _ in p.branch_currents:
                case.branch_end(k, p.bus)
        for r in measurements.rtus:
            case.bus_index(r.bus)
            for k, _ in r.flows:
                case.branch_end(k, r.bus)
    return measurements


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number")
    if not np.isfinite(value) or value < 0 or (strict and value == 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return float(value)


def check_voltage(v, n_bus):
    v = np.asarray(v, dtype=complex)
    if v.shape != (n_bus,):
        raise ValueError(f"expected {n_bus} bus voltages, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("voltages must be finite")
    return v
