"""Forecast skill metrics per lead day, skill-day thresholds, and seasonal
stratification.

All functions take prediction and truth arrays shaped (samples, leads, 2)
and are pure; the lead axis is processed independently.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError, UndefinedMetricError

SEASON_OF_MONTH = {
    3: "MAM", 4: "MAM", 5: "MAM",
    6: "JJA", 7: "JJA", 8: "JJA",
    9: "SON", 10: "SON", 11: "SON",
    12: "DJF", 1: "DJF", 2: "DJF",
}

SEASONS = ("MAM", "JJA", "SON", "DJF")


def season_of(date: dt.date) -> str:
    return SEASON_OF_MONTH[date.month]


def _check_pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    if pred.ndim != 3 or pred.shape[-1] != 2 or pred.shape[0] < 1:
        raise DimensionError(
            f"expected (samples, leads, 2) arrays with at least one sample, got {pred.shape}"
        )
    return pred, truth


def cor(pred, truth) -> np.ndarray:
    """Uncentered bivariate correlation per lead."""
    pred, truth = _check_pair(pred, truth)
    num = (pred * truth).sum(axis=(0, 2))
    pred_norm = np.sqrt((pred * pred).sum(axis=(0, 2)))
    truth_norm = np.sqrt((truth * truth).sum(axis=(0, 2)))
    zero = (pred_norm == 0.0) | (truth_norm == 0.0)
    if zero.any():
        lead = int(np.argmax(zero)) + 1
        raise UndefinedMetricError(f"zero-norm denominator at lead {lead}")
    return num / (pred_norm * truth_norm)


def rmse(pred, truth) -> np.ndarray:
    """Root of the per-lead mean summed squared component error."""
    pred, truth = _check_pair(pred, truth)
    sq = ((pred - truth) ** 2).sum(axis=2)
    return np.sqrt(sq.mean(axis=0))


def amp_error(pred, truth) -> np.ndarray:
    """Signed mean difference of vector amplitudes per lead."""
    pred, truth = _check_pair(pred, truth)
    pred_amp = np.hypot(pred[..., 0], pred[..., 1])
    truth_amp = np.hypot(truth[..., 0], truth[..., 1])
    return (pred_amp - truth_amp).mean(axis=0)


def phase_error(pred, truth, mode: str = "literal") -> np.ndarray:
    """Mean phase-angle difference per lead.

    The literal mode takes arctangents of the component ratios, which folds
    opposite quadrants together and is undefined on a zero first component;
    the wrapped mode uses full-quadrant angles with the difference wrapped
    to (-pi, pi].
    """
    pred, truth = _check_pair(pred, truth)
    if mode == "literal":
        if (pred[..., 0] == 0.0).any() or (truth[..., 0] == 0.0).any():
            raise UndefinedMetricError(
                "literal phase error undefined: zero first component present"
            )
        diff = np.arctan(pred[..., 1] / pred[..., 0]) - np.arctan(truth[..., 1] / truth[..., 0])
    elif mode == "wrapped":
        diff = np.arctan2(pred[..., 1], pred[..., 0]) - np.arctan2(truth[..., 1], truth[..., 0])
        diff = np.mod(diff + np.pi, 2.0 * np.pi) - np.pi
        diff[diff == -np.pi] = np.pi
    else:
        raise ParameterError(f"unknown phase-error mode '{mode}'")
    return diff.mean(axis=0)


def skill_days(
    cor_by_lead,
    rmse_by_lead,
    cor_threshold: float = 0.5,
    rmse_threshold: float = 1.4,
):
    """Last lead before each threshold crossing, and their minimum.

    A curve that never crosses keeps skill equal to the full horizon.
    """
    cor_by_lead = np.asarray(cor_by_lead, dtype=np.float64)
    rmse_by_lead = np.asarray(rmse_by_lead, dtype=np.float64)
    if cor_by_lead.ndim != 1 or cor_by_lead.size < 1 or cor_by_lead.shape != rmse_by_lead.shape:
        raise ParameterError(
            f"need equal-length non-empty per-lead arrays, got {cor_by_lead.shape} "
            f"and {rmse_by_lead.shape}"
        )
    n = cor_by_lead.size
    below = np.nonzero(cor_by_lead < cor_threshold)[0]
    above = np.nonzero(rmse_by_lead > rmse_threshold)[0]
    skill_cor = int(below[0]) if below.size else n
    skill_rmse = int(above[0]) if above.size else n
    return skill_cor, skill_rmse, min(skill_cor, skill_rmse)


@dataclass
class SkillReport:
    """Per-lead metric curves plus the derived skill days."""

    cor: np.ndarray
    rmse: np.ndarray
    amp_error: np.ndarray
    phase_error: np.ndarray
    skill_days_cor: int
    skill_days_rmse: int
    skill_days_combined: int
    cor_threshold: float = 0.5
    rmse_threshold: float = 1.4
    seasons: dict = field(default_factory=dict)

    @property
    def leads(self) -> np.ndarray:
        return np.arange(1, self.cor.size + 1)


def evaluate(
    pred,
    truth,
    pe_mode: str = "wrapped",
    cor_threshold: float = 0.5,
    rmse_threshold: float = 1.4,
) -> SkillReport:
    """All four metric curves and the skill days for one prediction set."""
    cor_arr = cor(pred, truth)
    rmse_arr = rmse(pred, truth)
    s_cor, s_rmse, s_comb = skill_days(cor_arr, rmse_arr, cor_threshold, rmse_threshold)
    return SkillReport(
        cor=cor_arr,
        rmse=rmse_arr,
        amp_error=amp_error(pred, truth),
        phase_error=phase_error(pred, truth, mode=pe_mode),
        skill_days_cor=s_cor,
        skill_days_rmse=s_rmse,
        skill_days_combined=s_comb,
        cor_threshold=cor_threshold,
        rmse_threshold=rmse_threshold,
    )


def seasonal_split(
    pred,
    truth,
    anchors,
    pe_mode: str = "wrapped",
    cor_threshold: float = 0.5,
    rmse_threshold: float = 1.4,
) -> dict:
    """Recompute the report per anchor-date season; empty seasons are absent."""
    pred, truth = _check_pair(pred, truth)
    if len(anchors) != pred.shape[0]:
        raise DimensionError(
            f"{len(anchors)} anchors for {pred.shape[0]} samples"
        )
    labels = np.array([season_of(a) for a in anchors])
    out = {}
    for season in SEASONS:
        mask = labels == season
        if not mask.any():
            continue
        out[season] = evaluate(
            pred[mask], truth[mask], pe_mode, cor_threshold, rmse_threshold
        )
    return out


def write_prediction_csv(path, values: np.ndarray, anchors=None) -> None:
    """Prediction-set file: one row per (sample, lead) with both components.

    The optional anchor date of each sample rides along for seasonal
    stratification.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[-1] != 2:
        raise DimensionError(f"expected (samples, leads, 2), got {values.shape}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "lead", "anchor", "rmm1", "rmm2"])
        for i in range(values.shape[0]):
            anchor = anchors[i].isoformat() if anchors is not None else ""
            for j in range(values.shape[1]):
                writer.writerow(
                    [i, j + 1, anchor, repr(values[i, j, 0]), repr(values[i, j, 1])]
                )


def read_prediction_csv(path):
    """Read a prediction-set file; returns (values, anchors-or-None)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != [
            "sample", "lead", "anchor", "rmm1", "rmm2",
        ]:
            raise DimensionError(
                f"{path}: expected header 'sample,lead,anchor,rmm1,rmm2', got {header}"
            )
        for row in reader:
            if not row:
                continue
            rows.append(row)
    if not rows:
        raise DimensionError(f"{path}: no prediction rows")
    n_samples = max(int(r[0]) for r in rows) + 1
    n_leads = max(int(r[1]) for r in rows)
    values = np.full((n_samples, n_leads, 2), np.nan)
    anchor_text = [""] * n_samples
    for r in rows:
        i, j = int(r[0]), int(r[1]) - 1
        anchor_text[i] = r[2]
        values[i, j, 0] = float(r[3])
        values[i, j, 1] = float(r[4])
    if np.isnan(values).any():
        raise DimensionError(f"{path}: missing (sample, lead) rows")
    anchors = None
    if all(anchor_text):
        anchors = [dt.date.fromisoformat(a) for a in anchor_text]
    return values, anchors


def write_report_csv(path, report: SkillReport) -> None:
    """Per-lead rows plus a summary block of the skill days."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lead", "cor", "rmse", "ae", "pe"])
        for j in range(report.cor.size):
            writer.writerow([
                j + 1,
                repr(report.cor[j]),
                repr(report.rmse[j]),
                repr(report.amp_error[j]),
                repr(report.phase_error[j]),
            ])
        writer.writerow([])
        writer.writerow(["summary", "value"])
        writer.writerow(["skill_days_cor", report.skill_days_cor])
        writer.writerow(["skill_days_rmse", report.skill_days_rmse])
        writer.writerow(["skill_days_combined", report.skill_days_combined])
        writer.writerow(["cor_threshold", report.cor_threshold])
        writer.writerow(["rmse_threshold", report.rmse_threshold])
