"""Domain-knowledge preprocessing that isolates the intraseasonal signal.

The fixed pipeline order is: fit the climatological annual harmonics, remove
them, subtract the mean of the preceding 120 days, zero out the sea surface
land-mask sentinel, and (at train time) batch-normalize the windowed input.
Every step is deterministic and side-effect-free on its input series; the
per-grid-point fits are independent and vectorized.

The sea surface temperature channel is exempt from the harmonic and
running-mean steps: it is only masked and then normalized with the rest.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .errors import BatchError, CoverageError, DimensionError
from .grid import SST_MASK_VALUE, GriddedSeries
from .tensor import Tensor, register_op

ANNUAL_PERIOD_DAYS = 365.25
OMEGA = 2.0 * np.pi / ANNUAL_PERIOD_DAYS
RUNNING_MEAN_WINDOW = 120


@dataclass
class HarmonicFit:
    """Per grid point and variable: mean plus cosine/sine wave coefficients.

    Coefficients come from a least-squares projection onto the sampled
    harmonics, so any signal inside the fitted subspace is reproduced
    exactly. Channels exempt from the fit carry all-zero coefficients.
    """

    a0: np.ndarray           # (lat, lon, channels)
    cos_coeffs: np.ndarray   # (max_wave, lat, lon, channels)
    sin_coeffs: np.ndarray   # (max_wave, lat, lon, channels)
    omega: float
    origin: dt.date
    variables: tuple | None = None

    @property
    def max_wave(self) -> int:
        return self.cos_coeffs.shape[0]

    def reconstruct(self, day_offsets: np.ndarray) -> np.ndarray:
        """Evaluate the fitted cycles at integer day offsets from the origin."""
        t = np.asarray(day_offsets, dtype=np.float64)
        out = np.broadcast_to(self.a0, t.shape + self.a0.shape).copy()
        for wave in range(1, self.max_wave + 1):
            arg = wave * self.omega * t
            out += np.cos(arg)[:, None, None, None] * self.cos_coeffs[wave - 1]
            out += np.sin(arg)[:, None, None, None] * self.sin_coeffs[wave - 1]
        return out


def _design_matrix(day_offsets: np.ndarray, max_wave: int) -> np.ndarray:
    cols = [np.ones_like(day_offsets)]
    for wave in range(1, max_wave + 1):
        arg = wave * OMEGA * day_offsets
        cols.append(np.cos(arg))
        cols.append(np.sin(arg))
    return np.stack(cols, axis=1)


def fit_harmonics(series: GriddedSeries, max_wave: int = 3) -> HarmonicFit:
    """Fit the mean and waves 1..max_wave of the annual cycle per grid point.

    The sea surface temperature channel, when present, is excluded and gets
    zero coefficients.
    """
    t_len = series.days
    if t_len < int(np.ceil(ANNUAL_PERIOD_DAYS)) + 1:
        raise CoverageError(
            f"harmonic fit needs at least one full annual period "
            f"({int(np.ceil(ANNUAL_PERIOD_DAYS)) + 1} days), got {t_len}"
        )
    spec = series.spec
    fit_channels = [i for i, v in enumerate(spec.variables) if v != "sst"]
    design = _design_matrix(np.arange(t_len, dtype=np.float64), max_wave)
    flat = series.values[..., fit_channels].reshape(t_len, -1)
    coeffs, _, _, _ = np.linalg.lstsq(design, flat, rcond=None)
    coeffs = coeffs.reshape(1 + 2 * max_wave, spec.lat_count, spec.lon_count, len(fit_channels))
    shape = (spec.lat_count, spec.lon_count, spec.channel_count)
    a0 = np.zeros(shape)
    cos_c = np.zeros((max_wave,) + shape)
    sin_c = np.zeros((max_wave,) + shape)
    a0[..., fit_channels] = coeffs[0]
    for wave in range(max_wave):
        cos_c[wave][..., fit_channels] = coeffs[1 + 2 * wave]
        sin_c[wave][..., fit_channels] = coeffs[2 + 2 * wave]
    return HarmonicFit(
        a0=a0,
        cos_coeffs=cos_c,
        sin_coeffs=sin_c,
        omega=OMEGA,
        origin=series.start_date,
        variables=spec.variables,
    )


def _check_fit_compat(series: GriddedSeries, fit: HarmonicFit) -> None:
    shape = (series.spec.lat_count, series.spec.lon_count, series.spec.channel_count)
    if fit.a0.shape != shape:
        raise DimensionError(
            f"harmonic fit shaped {fit.a0.shape} incompatible with grid {shape}"
        )
    if fit.variables is not None and tuple(fit.variables) != tuple(series.spec.variables):
        raise DimensionError(
            f"harmonic fit variables {fit.variables} do not match series "
            f"{series.spec.variables}"
        )


def remove_cycles(series: GriddedSeries, fit: HarmonicFit) -> GriddedSeries:
    """Subtract the fitted cycles, phased by each day's offset from the fit origin."""
    _check_fit_compat(series, fit)
    start_offset = (series.start_date - fit.origin).days
    offsets = start_offset + np.arange(series.days, dtype=np.float64)
    residual = series.values - fit.reconstruct(offsets)
    return GriddedSeries(
        spec=series.spec,
        start_date=series.start_date,
        values=residual,
        source_tag=series.source_tag,
    )


def remove_running_mean(series: GriddedSeries, window: int = RUNNING_MEAN_WINDOW) -> GriddedSeries:
    """Subtract the mean of the `window` days strictly before each day.

    The output starts `window` days after the input. Channels exempt from
    the subtraction (sea surface temperature) keep their values, with the
    same leading days dropped for alignment.
    """
    t_len = series.days
    if t_len <= window:
        raise CoverageError(
            f"running-mean removal needs more than {window} days, got {t_len}"
        )
    values = series.values
    acc = np.zeros_like(values[window:])
    for lag in range(1, window + 1):
        acc += values[window - lag:t_len - lag]
    out = values[window:] - acc / window
    sst = [i for i, v in enumerate(series.spec.variables) if v == "sst"]
    if sst:
        out[..., sst] = values[window:, ..., sst]
    return GriddedSeries(
        spec=series.spec,
        start_date=series.start_date + dt.timedelta(days=window),
        values=out,
        source_tag=series.source_tag,
    )


def mask_sst(series: GriddedSeries) -> GriddedSeries:
    """Replace the land sentinel in the sea surface channel with zero."""
    channel = series.spec.channel_index("sst")
    values = series.values.copy()
    sst = values[..., channel]
    sst[sst == SST_MASK_VALUE] = 0.0
    return GriddedSeries(
        spec=series.spec,
        start_date=series.start_date,
        values=values,
        source_tag=series.source_tag,
    )


def preprocess_series(
    series: GriddedSeries,
    fit: HarmonicFit | None = None,
    max_wave: int = 3,
    skip_sst_mask: bool = False,
):
    """Run the full pipeline on a continuous series.

    Returns the anomaly series (starting 120 days after the input) and the
    harmonic fit used, which is computed from the series itself when not
    supplied.
    """
    if fit is None:
        fit = fit_harmonics(series, max_wave=max_wave)
    anomalies = remove_running_mean(remove_cycles(series, fit))
    if not skip_sst_mask and series.spec.has_channel("sst"):
        anomalies = mask_sst(anomalies)
    return anomalies, fit


def fit_to_entries(fit: HarmonicFit) -> dict:
    """Named arrays for the binary-container family (variable names excluded)."""
    return {
        "fit/a0": fit.a0,
        "fit/cos": fit.cos_coeffs,
        "fit/sin": fit.sin_coeffs,
        "fit/omega": np.float64(fit.omega),
        "fit/origin_ordinal": np.float64(fit.origin.toordinal()),
    }


def fit_from_entries(entries: dict, variables: tuple | None = None) -> HarmonicFit:
    return HarmonicFit(
        a0=entries["fit/a0"].copy(),
        cos_coeffs=entries["fit/cos"].copy(),
        sin_coeffs=entries["fit/sin"].copy(),
        omega=float(entries["fit/omega"]),
        origin=dt.date.fromordinal(int(entries["fit/origin_ordinal"])),
        variables=variables,
    )


# -- batch normalization -------------------------------------------------------

class BatchNormState:
    """Learned per-channel scale/shift plus running statistics.

    In train mode statistics come from the batch and the running estimates
    are updated; in infer mode the frozen running estimates are used.
    """

    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.epsilon = epsilon
        self.channels = channels
        self.training = True


def batchnorm_forward(batch: Tensor, state: BatchNormState) -> Tensor:
    """Normalize per channel (last axis) over every other axis.

    Differentiable with respect to the batch and the scale/shift parameters.
    """
    if batch.ndim < 2 or batch.shape[-1] != state.channels:
        raise DimensionError(
            f"batch shaped {batch.shape} does not end in {state.channels} channels"
        )
    if state.training and batch.shape[0] < 2:
        raise BatchError(
            f"train-mode normalization needs a batch of at least 2, got {batch.shape[0]}"
        )
    axes = tuple(range(batch.ndim - 1))
    x = batch.data
    eps = state.epsilon
    if state.training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // state.channels
        unbiased = var * count / max(count - 1, 1)
        state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    out = Tensor(x_hat * state.gamma.data + state.beta.data)
    training = state.training

    def backward(g):
        d_gamma = (g * x_hat).sum(axis=axes)
        d_beta = g.sum(axis=axes)
        d_xhat = g * state.gamma.data
        if training:
            # Batch statistics depend on x, so their gradients fold back in.
            dx = inv_std * (
                d_xhat
                - d_xhat.mean(axis=axes)
                - x_hat * (d_xhat * x_hat).mean(axis=axes)
            )
        else:
            dx = d_xhat * inv_std
        return dx, d_gamma, d_beta

    return register_op(out, (batch, state.gamma, state.beta), backward)
