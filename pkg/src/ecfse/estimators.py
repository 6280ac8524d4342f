"""Estimator classes with a scikit-learn style interface.

``fit`` takes a :class:`~ecfse.measurements.MeasurementSet` and stores the
estimate in ``state_``; ``transform`` returns complex bus voltages and
``predict`` returns the estimated measurements in the raw layout of
:class:`~ecfse.metrics.MeasurementFunctions`.

Structure that depends only on the network and on which quantities are
measured (circuit, objective sparsity, measurement-function matrices) is
built by ``prepare`` and reused while the layout stays the same, so
``state_.wall_time`` covers the numerical solve only.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .lecf import estimate_lecf
from .metrics import MeasurementFunctions, measurement_variance_ratio, state_error_index
from .models import LINEAR, NONLINEAR, ModelOptions, build_estimation_model, measurement_layout
from .necf import NecfOptions, estimate_necf
from .validation import check_case, check_is_fitted, check_measurements, check_positive, check_voltage
from .wls import estimate_wls

__all__ = ["LecfStateEstimator", "NecfStateEstimator", "WlsStateEstimator", "make_estimator",
           "ESTIMATORS"]


class _StateEstimator(BaseEstimator):
    method = ""

    def _case(self):
        # a case given by name is loaded once, not per fit
        cached = getattr(self, "_case_cache", None)
        if cached is None or cached[0] is not self.case:
            cached = (self.case, check_case(self.case))
            self._case_cache = cached
        return cached[1]

    def prepare(self, measurements):
        """Build (or reuse) the layout-dependent structure; returns self."""
        case = self._case()
        check_measurements(measurements, case)
        key = (id(case), measurement_layout(measurements))
        if getattr(self, "_prepared_key", None) != key:
            self._prepared = self._build(case, measurements)
            self._prepared_key = key
            self._functions = MeasurementFunctions(case, measurements)
        return self

    def fit(self, measurements, y=None):
        self.prepare(measurements)
        self.state_ = self._solve(self._case(), measurements)
        self.measurements_ = measurements
        self.functions_ = self._functions.refresh(measurements)
        return self

    def transform(self, measurements=None):
        """Complex bus voltages of the current (or a fresh) estimate."""
        if measurements is not None:
            self.fit(measurements)
        check_is_fitted(self, "state_")
        return self.state_.voltage

    def fit_transform(self, measurements, y=None):
        return self.fit(measurements).transform()

    def predict(self, measurements=None):
        """Estimated measurement vector ``h(v_hat)`` in raw layout."""
        v = self.transform(measurements)
        return self.functions_.raw(v)

    def indices(self, truth):
        """State error index and measurement variance ratio against ``truth``."""
        check_is_fitted(self, "state_")
        case = self._case()
        v_true = check_voltage(truth.voltage, case.n_bus)
        mf = self.functions_
        return {
            "state_error": state_error_index(self.state_.voltage, v_true, case.slack_index),
            "variance_ratio": measurement_variance_ratio(mf.raw(self.state_.voltage), mf.raw_measured(),
                                                         mf.raw(v_true), mf.angle_mask()),
        }

    def score(self, measurements, truth):
        """Negative measurement variance ratio (larger is better)."""
        self.fit(measurements)
        return -self.indices(truth)["variance_ratio"]


class LecfStateEstimator(_StateEstimator):
    """Linear circuit estimator (single KKT solve)."""

    method = "lecf"

    def __init__(self, case=None, g_pmu=100.0, g_flow=100.0, slack_dominance=100.0):
        self.case = case
        self.g_pmu = g_pmu
        self.g_flow = g_flow
        self.slack_dominance = slack_dominance

    def _options(self):
        return ModelOptions(g_pmu=check_positive(self.g_pmu, "g_pmu"),
                            g_flow=check_positive(self.g_flow, "g_flow"),
                            slack_dominance=check_positive(self.slack_dominance, "slack_dominance"))

    def _build(self, case, measurements):
        return build_estimation_model(case, measurements, LINEAR, self._options())

    def _solve(self, case, measurements):
        model = self._prepared.refresh(measurements)
        return estimate_lecf(case, measurements, model=model)


class NecfStateEstimator(_StateEstimator):
    """Nonlinear circuit estimator with interval-bounded RTU admittances.

    Measured PMU values sit inside the circuit as fixed sources, so the
    model is rebuilt for each measurement set; the build is not timed.
    """

    method = "necf"

    def __init__(self, case=None, g_pmu=100.0, g_flow=100.0, slack_dominance=100.0,
                 bound_sigmas=1.0, tol=1e-8, max_iter=200):
        self.case = case
        self.g_pmu = g_pmu
        self.g_flow = g_flow
        self.slack_dominance = slack_dominance
        self.bound_sigmas = bound_sigmas
        self.tol = tol
        self.max_iter = max_iter

    def _options(self):
        return ModelOptions(g_pmu=check_positive(self.g_pmu, "g_pmu"),
                            g_flow=check_positive(self.g_flow, "g_flow"),
                            slack_dominance=check_positive(self.slack_dominance, "slack_dominance"),
                            bound_sigmas=check_positive(self.bound_sigmas, "bound_sigmas"))

    def _build(self, case, measurements):
        return None

    def _solve(self, case, measurements):
        model = build_estimation_model(case, measurements, NONLINEAR, self._options())
        opts = NecfOptions(tol=check_positive(self.tol, "tol"), max_iter=int(self.max_iter))
        return estimate_necf(case, measurements, options=opts, model=model)


class WlsStateEstimator(_StateEstimator):
    """Gauss-Newton weighted least squares on polar bus states."""

    method = "wls"

    def __init__(self, case=None, tol=1e-8, max_iter=30, null_variance=1e-10):
        self.case = case
        self.tol = tol
        self.max_iter = max_iter
        self.null_variance = null_variance

    def _build(self, case, measurements):
        return MeasurementFunctions(case, measurements,
                                    virtual_null=check_positive(self.null_variance, "null_variance"))

    def _solve(self, case, measurements):
        mf = self._prepared.refresh(measurements)
        return estimate_wls(case, measurements, tol=check_positive(self.tol, "tol"),
                            max_iter=int(self.max_iter), null_variance=self.null_variance, functions=mf)


ESTIMATORS = {"lecf": LecfStateEstimator, "necf": NecfStateEstimator, "wls": WlsStateEstimator}


def make_estimator(method, case, **params):
    try:
        cls = ESTIMATORS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(ESTIMATORS)}") from None
    return cls(case=case, **params)
