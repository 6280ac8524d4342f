"""Measurement functions h(V) and the accuracy indices."""

from __future__ import annotations

import copy
import math

import numpy as np
import scipy.sparse as sp

from .models import measurement_layout

__all__ = ["MeasurementFunctions", "state_error_index", "measurement_variance_ratio",
           "align_angle"]


class MeasurementFunctions:
    """Vectorized measurement functions of a measurement set.

    Three groups, each a function of the complex bus voltage vector ``v``:

    * ``vmag``: RTU voltage magnitudes ``|v[i]|``;
    * ``power``: load-convention complex powers ``-v[i] conj(M v)`` for
      RTU injections (``M`` = bus admittance row) and flows (``M`` = branch
      current row at the metered end);
    * ``phasor``: PMU phasors ``M v`` (voltage, branch currents into the
      branch, load-convention injection current).

    ``raw`` vectors follow the layout
    ``[|V| | P | Q | phasor magnitudes | phasor angles]``.
    """

    def __init__(self, case, measurements, virtual_null=False):
        self.case = case
        n = case.n_bus
        ybus, yf, yt = (m.tocsr() for m in case.admittance_matrices())
        eye = sp.identity(n, format="csr", dtype=complex)
        idx = case.bus_index

        vm_bus, pw_bus, pw_rows, pw_virtual, ph_rows = [], [], [], [], []

        def branch_row(k, bus):
            return yf[k] if case.branch_end(k, bus) == "from" else yt[k]

        for p in measurements.pmus:
            i = idx(p.bus)
            ph_rows.append(eye[i])
            ph_rows += [branch_row(k, p.bus) for k, _ in p.branch_currents]
            if p.injection is not None:
                ph_rows.append(-ybus[i])
        for r in measurements.rtus:
            i = idx(r.bus)
            if r.v_mag is not None:
                vm_bus.append(i)
            rows = ([ybus[i]] if r.injection is not None else [])
            rows += [branch_row(k, r.bus) for k, _ in r.flows]
            pw_bus += [i] * len(rows)
            pw_rows += rows
            pw_virtual += [False] * len(rows)
        self.virtual_variance = virtual_null
        if virtual_null:
            measured_inj = {r.bus for r in measurements.rtus if r.injection is not None}
            measured_inj |= {p.bus for p in measurements.pmus if p.injection is not None}
            for b in case.buses:
                if b.is_null_injection and b.id not in measured_inj:
                    i = idx(b.id)
                    pw_bus.append(i)
                    pw_rows.append(ybus[i])
                    pw_virtual.append(True)

        def stack(rows):
            return sp.vstack(rows, format="csr") if rows else sp.csr_matrix((0, n), dtype=complex)

        self.vm_bus = np.array(vm_bus, dtype=int)
        self.pw_bus = np.array(pw_bus, dtype=int)
        self.pw_m = stack(pw_rows)
        self.pw_virtual = np.array(pw_virtual, dtype=bool)
        self.ph_m = stack(ph_rows)
        self._layout = measurement_layout(measurements)
        self._set_values(measurements)

    def _set_values(self, measurements):
        vm_z, vm_var, pw, ph = [], [], [], []
        for p in measurements.pmus:
            ph.append(p.voltage)
            ph += [c for _, c in p.branch_currents]
            if p.injection is not None:
                ph.append(p.injection)
        for r in measurements.rtus:
            if r.v_mag is not None:
                vm_z.append(r.v_mag)
                vm_var.append(r.var_v)
            if r.injection is not None:
                pw.append((r.injection.p, r.injection.q, r.injection.var_p, r.injection.var_q))
            pw += [(f.p, f.q, f.var_p, f.var_q) for _, f in r.flows]
        n_virtual = int(self.pw_virtual.sum())
        pw += [(0.0, 0.0, self.virtual_variance, self.virtual_variance)] * n_virtual
        pw = np.array(pw, dtype=float).reshape(-1, 4)
        self.vm_z = np.array(vm_z, dtype=float)
        self.vm_var = np.array(vm_var, dtype=float)
        self.pw_z = pw[:, 0] + 1j * pw[:, 1]
        self.pw_var = pw[:, 2:]
        polar = np.array([(x.mag, x.angle, x.var_mag, x.var_angle) for x in ph], dtype=float).reshape(-1, 4)
        self.ph_polar = polar
        mag, ang, var_m, var_a = polar.T
        c, s = np.cos(ang), np.sin(ang)
        self.ph_z = mag * (c + 1j * s)
        self.ph_var = np.column_stack([c * c * var_m + (mag * s) ** 2 * var_a,
                                       s * s * var_m + (mag * c) ** 2 * var_a])

    def refresh(self, measurements):
        """Copy sharing the matrices, with values from ``measurements``
        (which must have the same layout)."""
        if measurement_layout(measurements) != self._layout:
            raise ValueError("measurement layout differs")
        new = copy.copy(self)
        new._set_values(measurements)
        return new

    @property
    def n_raw(self):
        real = ~self.pw_virtual
        return len(self.vm_bus) + 2 * int(real.sum()) + 2 * len(self.ph_z)

    # ---- evaluation ---------------------------------------------------

    def powers(self, v):
        return -v[self.pw_bus] * np.conj(self.pw_m @ v)

    def phasors(self, v):
        return self.ph_m @ v

    def raw(self, v):
        """Measured-quantity vector at complex voltages ``v``."""
        v = np.asarray(v, dtype=complex)
        s = self.powers(v)[~self.pw_virtual]
        ph = self.phasors(v)
        return np.r_[np.abs(v[self.vm_bus]), s.real, s.imag, np.abs(ph), np.angle(ph)]

    def raw_measured(self):
        real = ~self.pw_virtual
        return np.r_[self.vm_z, self.pw_z.real[real], self.pw_z.imag[real],
                     self.ph_polar[:, 0], self.ph_polar[:, 1]]

    def angle_mask(self):
        mask = np.zeros(self.n_raw, dtype=bool)
        if len(self.ph_z):
            mask[-len(self.ph_z):] = True
        return mask

    # ---- rectangular form used by WLS ---------------------------------

    def rect_measured(self):
        """Real measurement vector and variances in WLS layout
        ``[|V| | P | Q | Re phasor | Im phasor]`` (virtual rows included)."""
        z = np.r_[self.vm_z, self.pw_z.real, self.pw_z.imag, self.ph_z.real, self.ph_z.imag]
        var = np.r_[self.vm_var, self.pw_var[:, 0], self.pw_var[:, 1], self.ph_var[:, 0], self.ph_var[:, 1]]
        return z, var

    def rect(self, v):
        s = self.powers(v)
        ph = self.phasors(v)
        return np.r_[np.abs(v[self.vm_bus]), s.real, s.imag, ph.real, ph.imag]

    def rect_jacobian(self, v):
        """Jacobian of :meth:`rect` w.r.t. ``(angles, magnitudes)``."""
        n = len(v)
        vm = np.abs(v)
        d_ang = sp.diags(1j * v)
        d_mag = sp.diags(v / vm)
        mv = self.pw_m @ v
        sel = sp.csr_matrix((np.ones(len(self.pw_bus)), (np.arange(len(self.pw_bus)), self.pw_bus)),
                            shape=(len(self.pw_bus), n))
        blocks = []
        for dv in (d_ang, d_mag):
            ds = -(sp.diags(np.conj(mv)) @ sel @ dv + sp.diags(v[self.pw_bus]) @ np.conj(self.pw_m @ dv))
            dph = self.ph_m @ dv
            blocks.append((ds, dph))
        vm_rows = sp.csr_matrix((np.ones(len(self.vm_bus)), (np.arange(len(self.vm_bus)), self.vm_bus)),
                                shape=(len(self.vm_bus), n))
        zero = sp.csr_matrix((len(self.vm_bus), n))
        (ds_a, dph_a), (ds_m, dph_m) = blocks
        return sp.bmat([
            [zero, vm_rows],
            [ds_a.real, ds_m.real],
            [ds_a.imag, ds_m.imag],
            [dph_a.real, dph_m.real],
            [dph_a.imag, dph_m.imag],
        ], format="csr")


def align_angle(v_est, v_true, ref):
    """Rotate ``v_est`` so that its angle at bus index ``ref`` matches
    ``v_true``."""
    v_est = np.asarray(v_est, dtype=complex)
    shift = np.angle(v_true[ref]) - np.angle(v_est[ref])
    return v_est * np.exp(1j * shift)


def state_error_index(v_est, v_true, ref=None):
    """Sum of squared rectangular state errors.

    With ``ref`` given, the estimate is first rotated to the true angle at
    that bus index.
    """
    v_est = np.asarray(v_est, dtype=complex)
    v_true = np.asarray(v_true, dtype=complex)
    if v_est.shape != v_true.shape:
        raise ValueError(f"dimension mismatch: {v_est.shape} vs {v_true.shape}")
    if ref is not None:
        v_est = align_angle(v_est, v_true, ref)
    d = v_est - v_true
    return float(np.sum(d.real ** 2 + d.imag ** 2))


# measurement errors at or below this (relative) size are rounding, not noise
ROUNDING_FLOOR = 1e-12


def _diff(a, b, angle_mask):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if angle_mask is not None:
        d[angle_mask] = (d[angle_mask] + math.pi) % (2 * math.pi) - math.pi
    return d


def measurement_variance_ratio(z_est, z_meas, z_true, angle_mask=None):
    """Error energy of estimated measurements relative to raw data.

    Returns ``nan`` when the measurements carry no error beyond rounding
    (the ratio is undefined there). Angle entries flagged in
    ``angle_mask`` are differenced modulo 2 pi.
    """
    z_est, z_meas, z_true = (np.asarray(z, dtype=float) for z in (z_est, z_meas, z_true))
    if not (z_est.shape == z_meas.shape == z_true.shape):
        raise ValueError("measurement vectors must be aligned")
    if z_true.size == 0:
        raise ValueError("no measurements")
    den = float(np.sum(_diff(z_meas, z_true, angle_mask) ** 2))
    if math.sqrt(den) <= ROUNDING_FLOOR * max(1.0, float(np.linalg.norm(z_true))):
        return float("nan")
    return float(np.sum(_diff(z_est, z_true, angle_mask) ** 2)) / den
