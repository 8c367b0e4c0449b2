"""RMM index machinery: combined-EOF basis, daily projection, amplitude, phase.

The basis is built from meridionally averaged anomaly fields of outgoing
longwave radiation and the two zonal wind levels, each normalized by its
domain-wide standard deviation, stacked into one state vector per day, and
decomposed by eigen-analysis of the covariance. Daily indices are the
standardized projections onto the two leading modes.
"""

from __future__ import annotations

import csv
import datetime as dt
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentError,
    ChannelError,
    DegeneracyError,
    DimensionError,
    FormatError,
    UndefinedMetricError,
)

EOF_FIELDS = ("olr", "u200", "u850")


@dataclass
class RmmSeries:
    """Daily (rmm1, rmm2) pairs on consecutive calendar days."""

    start_date: dt.date
    rmm1: np.ndarray
    rmm2: np.ndarray

    def __post_init__(self):
        self.rmm1 = np.asarray(self.rmm1, dtype=np.float64)
        self.rmm2 = np.asarray(self.rmm2, dtype=np.float64)
        if self.rmm1.shape != self.rmm2.shape or self.rmm1.ndim != 1:
            raise DimensionError(
                f"rmm components must be equal-length vectors, got "
                f"{self.rmm1.shape} and {self.rmm2.shape}"
            )

    def __len__(self) -> int:
        return len(self.rmm1)

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self) - 1)

    def dates(self) -> list:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self))]

    def index_of(self, date: dt.date) -> int:
        offset = (date - self.start_date).days
        if offset < 0 or offset >= len(self):
            raise AlignmentError(f"date {date.isoformat()} outside label range")
        return offset

    def covers(self, date: dt.date) -> bool:
        return self.start_date <= date <= self.end_date


def write_rmm_csv(path, series: RmmSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "rmm1", "rmm2"])
        for i, date in enumerate(series.dates()):
            writer.writerow([date.isoformat(), repr(series.rmm1[i]), repr(series.rmm2[i])])


def read_rmm_csv(path) -> RmmSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "rmm1", "rmm2"]:
            raise FormatError(f"{path}: expected header 'date,rmm1,rmm2', got {header}")
        dates, r1, r2 = [], [], []
        for row in reader:
            if not row:
                continue
            dates.append(dt.date.fromisoformat(row[0]))
            r1.append(float(row[1]))
            r2.append(float(row[2]))
    if not dates:
        raise FormatError(f"{path}: no label rows")
    for prev, cur in zip(dates, dates[1:]):
        if (cur - prev).days != 1:
            raise AlignmentError(
                f"{path}: label dates must be consecutive, gap after {prev.isoformat()}"
            )
    return RmmSeries(start_date=dates[0], rmm1=np.array(r1), rmm2=np.array(r2))


@dataclass
class EofBasis:
    """Two orthonormal combined-field patterns plus normalization scalars."""

    patterns: np.ndarray            # (2, 3*lon_count)
    field_stds: np.ndarray          # per-field normalization, order EOF_FIELDS
    component_stds: np.ndarray      # per-mode projection std over the fit period
    eigenvalues: np.ndarray         # full spectrum, descending
    lon_count: int
    fields: tuple = field(default=EOF_FIELDS)

    @property
    def explained_variance(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues.sum()


def _combined_state(series, fields) -> np.ndarray:
    """Meridional-mean fields stacked along longitude: (T, len(fields)*w)."""
    names = [v.lower() for v in series.spec.variables]
    channels = []
    for f in fields:
        if f not in names:
            raise ChannelError(f"series lacks required variable '{f}' (has {names})")
        channels.append(names.index(f))
    merid = series.values.mean(axis=1)  # (T, w, c)
    return np.concatenate([merid[:, :, c] for c in channels], axis=1)


def _fix_sign(mode: np.ndarray, w: int) -> np.ndarray:
    """Deterministic orientation: the OLR segment sums negative; if that sum
    is degenerate (zero-mean pattern), the largest-magnitude entry is made
    positive."""
    olr_sum = mode[:w].sum()
    if abs(olr_sum) > 1e-9:
        return -mode if olr_sum > 0 else mode
    peak = np.argmax(np.abs(mode))
    return -mode if mode[peak] < 0 else mode


def compute_eof_basis(anomalies, fields=EOF_FIELDS) -> EofBasis:
    """Fit the two leading combined-EOF modes of an anomaly series.

    The second mode's sign is chosen so that a wave propagating eastward
    traces a counterclockwise trajectory in the (rmm1, rmm2) plane.
    """
    stacked = _combined_state(anomalies, fields)
    t_len, dim = stacked.shape
    w = anomalies.spec.lon_count
    field_stds = np.empty(len(fields))
    for i in range(len(fields)):
        seg = stacked[:, i * w:(i + 1) * w]
        field_stds[i] = seg.std()
        if field_stds[i] == 0.0:
            raise DegeneracyError(f"field '{fields[i]}' has zero variance")
    norm = stacked / np.repeat(field_stds, w)[None, :]
    if t_len < dim:
        warnings.warn(
            f"only {t_len} days for a {dim}-dimensional state; "
            "trailing modes are rank-deficient",
            RuntimeWarning,
            stacklevel=2,
        )
    cov = norm.T @ norm / t_len
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    lead = max(evals[0], np.finfo(float).tiny)
    if (evals[0] - evals[1]) < 1e-9 * lead or (evals[1] - evals[2]) < 1e-9 * lead:
        raise DegeneracyError(
            f"leading eigenvalues too close to separate modes: {evals[:3]}"
        )
    mode1 = _fix_sign(evecs[:, 0].copy(), w)
    mode2 = _fix_sign(evecs[:, 1].copy(), w)
    p1 = norm @ mode1
    p2 = norm @ mode2
    # Orient mode 2 so the daily trajectory circulates counterclockwise for
    # eastward propagation (positive discrete circulation of the projections).
    circulation = np.mean(p1[:-1] * p2[1:] - p1[1:] * p2[:-1])
    if circulation < -1e-12 * (p1.std() * p2.std() + np.finfo(float).tiny):
        mode2 = -mode2
        p2 = -p2
    comp_stds = np.array([p1.std(), p2.std()])
    if (comp_stds == 0.0).any():
        raise DegeneracyError("a leading mode has zero projection variance")
    return EofBasis(
        patterns=np.stack([mode1, mode2]),
        field_stds=field_stds,
        component_stds=comp_stds,
        eigenvalues=evals,
        lon_count=w,
        fields=tuple(fields),
    )


def project_rmm(anomalies, basis: EofBasis) -> RmmSeries:
    """Standardized daily projections of an anomaly series onto the basis."""
    if anomalies.spec.lon_count != basis.lon_count:
        raise DimensionError(
            f"series longitude count {anomalies.spec.lon_count} does not match "
            f"basis ({basis.lon_count})"
        )
    stacked = _combined_state(anomalies, basis.fields)
    norm = stacked / np.repeat(basis.field_stds, basis.lon_count)[None, :]
    proj = norm @ basis.patterns.T
    return RmmSeries(
        start_date=anomalies.start_date,
        rmm1=proj[:, 0] / basis.component_stds[0],
        rmm2=proj[:, 1] / basis.component_stds[1],
    )


def basis_to_entries(basis: EofBasis) -> dict:
    return {
        "eof/patterns": basis.patterns,
        "eof/field_stds": basis.field_stds,
        "eof/component_stds": basis.component_stds,
        "eof/eigenvalues": basis.eigenvalues,
        "eof/lon_count": np.float64(basis.lon_count),
    }


def basis_from_entries(entries: dict, fields=EOF_FIELDS) -> EofBasis:
    return EofBasis(
        patterns=entries["eof/patterns"].copy(),
        field_stds=entries["eof/field_stds"].copy(),
        component_stds=entries["eof/component_stds"].copy(),
        eigenvalues=entries["eof/eigenvalues"].copy(),
        lon_count=int(entries["eof/lon_count"]),
        fields=tuple(fields),
    )


def rmm_amplitude(rmm1, rmm2):
    """Vector magnitude of the index pair."""
    return np.hypot(np.asarray(rmm1, dtype=np.float64), np.asarray(rmm2, dtype=np.float64))


def mjo_present(rmm1, rmm2):
    """Active-oscillation flag: amplitude strictly above one."""
    return rmm_amplitude(rmm1, rmm2) > 1.0


def rmm_phase(rmm1, rmm2):
    """Octant of the (rmm1, rmm2) plane, 1..8.

    Angles start at phase 1 on [-pi, -3pi/4); each boundary belongs to the
    upper interval. The zero vector has no phase.
    """
    r1 = np.asarray(rmm1, dtype=np.float64)
    r2 = np.asarray(rmm2, dtype=np.float64)
    if np.any((r1 == 0.0) & (r2 == 0.0)):
        raise UndefinedMetricError("phase undefined for the zero vector")
    theta = np.arctan2(r2, r1)
    theta = np.where(theta == np.pi, -np.pi, theta)
    phase = 1 + np.floor((theta + np.pi) / (np.pi / 4.0)).astype(np.int64)
    phase = np.clip(phase, 1, 8)
    if np.ndim(rmm1) == 0 and np.ndim(rmm2) == 0:
        return int(phase)
    return phase
