"""Gridded daily climate series: containers, binary file I/O, the synthetic
data generator, sliding-window sample extraction, and two-source merging.

File ingestion and window extraction are read-only over their inputs; sample
assembly always uses a deterministic ordering.
"""

from __future__ import annotations

import datetime as dt
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentError,
    CoverageError,
    DimensionError,
    FormatError,
    LengthError,
    ParameterError,
)
from .rmm import RmmSeries

SST_MASK_VALUE = -32767.0

GRID_MAGIC = b"DKG1"
GRID_VERSION = 1

VARIABLE_UNITS = {"olr": "W/m^2", "u200": "m/s", "u850": "m/s", "sst": "K"}

SOURCE_TAGS = ("reanalysis", "model", "synthetic")


@dataclass(frozen=True)
class GridSpec:
    """Geometry and variable layout of the tropical strip grid.

    Defaults cover 15N-15S at 2.5 degrees (13 rows) and the full longitude
    circle at 2.5 degrees (144 columns).
    """

    lat_count: int = 13
    lon_count: int = 144
    lat_start: float = 15.0
    lat_step: float = -2.5
    lon_start: float = 0.0
    lon_step: float = 2.5
    variables: tuple = ("olr", "u200", "u850", "sst")

    def __post_init__(self):
        if self.lat_count < 1 or self.lon_count < 1:
            raise ParameterError(
                f"grid extents must be positive, got {self.lat_count}x{self.lon_count}"
            )
        if not self.variables:
            raise ParameterError("variable list must not be empty")
        lowered = tuple(v.lower() for v in self.variables)
        if len(set(lowered)) != len(lowered):
            raise ParameterError(f"variable names must be unique, got {self.variables}")
        object.__setattr__(self, "variables", lowered)

    @property
    def channel_count(self) -> int:
        return len(self.variables)

    def channel_index(self, name: str) -> int:
        name = name.lower()
        if name not in self.variables:
            from .errors import ChannelError

            raise ChannelError(f"no '{name}' channel in {self.variables}")
        return self.variables.index(name)

    def has_channel(self, name: str) -> bool:
        return name.lower() in self.variables

    @classmethod
    def tropics(cls, lat_count: int, lon_count: int, variables=("olr", "u200", "u850", "sst")):
        """Standard 15N-15S strip with steps derived from the counts."""
        lat_step = -30.0 / (lat_count - 1) if lat_count > 1 else 0.0
        return cls(
            lat_count=lat_count,
            lon_count=lon_count,
            lat_start=15.0,
            lat_step=lat_step,
            lon_start=0.0,
            lon_step=360.0 / lon_count,
            variables=tuple(variables),
        )


@dataclass
class GriddedSeries:
    """Daily multi-variable field stack on consecutive calendar days."""

    spec: GridSpec
    start_date: dt.date
    values: np.ndarray  # (days, lat, lon, channel) float64
    source_tag: str = "synthetic"

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        expected = (self.spec.lat_count, self.spec.lon_count, self.spec.channel_count)
        if self.values.ndim != 4 or self.values.shape[1:] != expected:
            raise DimensionError(
                f"series values shaped {self.values.shape}, expected (T, {expected[0]}, "
                f"{expected[1]}, {expected[2]})"
            )
        if self.values.shape[0] < 1:
            raise DimensionError("series must contain at least one day")
        if self.source_tag not in SOURCE_TAGS:
            raise ParameterError(
                f"source_tag must be one of {SOURCE_TAGS}, got '{self.source_tag}'"
            )

    @property
    def days(self) -> int:
        return self.values.shape[0]

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=self.days - 1)

    def date_at(self, index: int) -> dt.date:
        return self.start_date + dt.timedelta(days=int(index))

    def index_of(self, date: dt.date) -> int:
        offset = (date - self.start_date).days
        if offset < 0 or offset >= self.days:
            raise AlignmentError(
                f"date {date.isoformat()} outside series range "
                f"{self.start_date.isoformat()}..{self.end_date.isoformat()}"
            )
        return offset


# -- binary grid file --------------------------------------------------------

def write_grid_file(path, series: GriddedSeries) -> None:
    """Write the series; the payload is stored as little-endian float32."""
    t, l, w, c = series.values.shape
    date_bytes = series.start_date.isoformat().encode("ascii")
    chunks = [
        GRID_MAGIC,
        struct.pack("<H", GRID_VERSION),
        struct.pack("<4I", t, l, w, c),
        struct.pack("<I", len(date_bytes)),
        date_bytes,
        struct.pack("<I", c),
    ]
    for name in series.spec.variables:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
    chunks.append(series.values.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_grid_file(path, source_tag: str = "reanalysis") -> GriddedSeries:
    """Read a grid file; grid coordinates are the standard tropics strip."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != GRID_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r} in {path}, expected {GRID_MAGIC!r}")
    offset = 4

    def take(count, what):
        nonlocal offset
        if offset + count > len(blob):
            raise LengthError(
                f"truncated grid file {path}: expected {offset + count} bytes "
                f"for {what}, file has {len(blob)}"
            )
        piece = blob[offset:offset + count]
        offset += count
        return piece

    (version,) = struct.unpack("<H", take(2, "version"))
    if version != GRID_VERSION:
        raise FormatError(f"unsupported grid file version {version} in {path}")
    t, l, w, c = struct.unpack("<4I", take(16, "extents"))
    (date_len,) = struct.unpack("<I", take(4, "date length"))
    start_date = dt.date.fromisoformat(take(date_len, "start date").decode("ascii"))
    (var_count,) = struct.unpack("<I", take(4, "variable count"))
    if var_count != c:
        raise FormatError(
            f"{path}: header declares {c} channels but lists {var_count} variables"
        )
    names = []
    for _ in range(var_count):
        (name_len,) = struct.unpack("<I", take(4, "variable name length"))
        names.append(take(name_len, "variable name").decode("utf-8"))
    expected_bytes = 4 * t * l * w * c
    payload = take(expected_bytes, f"payload ({t}x{l}x{w}x{c} float32)")
    if offset != len(blob):
        raise LengthError(
            f"grid file {path} has {len(blob) - offset} trailing bytes"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, l, w, c)
    spec = GridSpec.tropics(l, w, variables=tuple(names))
    return GriddedSeries(spec=spec, start_date=start_date, values=values, source_tag=source_tag)


# -- synthetic generator ------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    """Knobs of the synthetic tropics generator.

    Circulation channels combine an annual harmonic, a slow linear drift, an
    eastward-propagating intraseasonal wave, and white noise; the sea surface
    temperature channel carries a base level, a small annual wiggle, and a
    fixed land-mask stripe.
    """

    annual_amplitude: float = 10.0
    drift_per_day: float = 2e-3
    wave_amplitude: float = 5.0
    wave_period_days: float = 45.0
    noise_amplitude: float = 1.0
    channel_bias: float = 0.0
    sst_base: float = 300.0
    sst_annual_amplitude: float = 2.0


# Per-variable (mean level, annual scale, annual phase, wave scale, wave phase).
_CHANNEL_SHAPE = {
    "olr": (240.0, 1.0, 0.0, -1.0, 0.0),
    "u200": (8.0, 0.7, 1.0, 0.8, 2.1),
    "u850": (-4.0, 0.5, 2.0, 0.6, 4.2),
}


def _channel_shape(name: str, position: int):
    if name in _CHANNEL_SHAPE:
        return _CHANNEL_SHAPE[name]
    return (0.0, 1.0, 0.37 * position, 1.0, 0.9 * position)


def land_mask_columns(lon_count: int) -> slice:
    """Fixed longitude band masked as land in the synthetic SST channel."""
    start = lon_count // 4
    return slice(start, start + max(1, lon_count // 12))


def synth_generate(
    spec: GridSpec,
    days: int,
    seed: int,
    params: SynthParams = SynthParams(),
    source_tag: str = "synthetic",
) -> GriddedSeries:
    """Deterministic synthetic series standing in for archive data.

    A pure function of (spec, days, seed, params): the same arguments always
    produce a bit-identical series.
    """
    if days < 200:
        raise ParameterError(f"need at least 200 days to survive the 120-day lead, got {days}")
    rng = np.random.default_rng(seed)
    t = np.arange(days, dtype=np.float64)
    lon = np.arange(spec.lon_count, dtype=np.float64)
    annual_arg = 2.0 * np.pi * t / 365.25
    drift = params.drift_per_day * (t - days / 2.0)
    noise = rng.standard_normal((days, spec.lat_count, spec.lon_count, spec.channel_count))
    values = np.empty((days, spec.lat_count, spec.lon_count, spec.channel_count))
    for ci, name in enumerate(spec.variables):
        if name == "sst":
            sst = (
                params.sst_base
                + params.sst_annual_amplitude * np.sin(annual_arg + 0.5)
                + params.channel_bias
            )
            channel = sst[:, None, None] + 0.1 * params.noise_amplitude * noise[..., ci]
            channel[:, :, land_mask_columns(spec.lon_count)] = SST_MASK_VALUE
            values[..., ci] = channel
            continue
        mean, a_scale, a_phase, w_scale, w_phase = _channel_shape(name, ci)
        base = (
            mean
            + params.channel_bias
            + params.annual_amplitude * a_scale * np.sin(annual_arg + a_phase)
            + drift
        )
        wave_arg = (
            2.0 * np.pi * (lon[None, :] / spec.lon_count - t[:, None] / params.wave_period_days)
            + w_phase
        )
        wave = params.wave_amplitude * w_scale * np.sin(wave_arg)
        values[..., ci] = (
            base[:, None, None]
            + wave[:, None, :]
            + params.noise_amplitude * noise[..., ci]
        )
    return GriddedSeries(
        spec=spec,
        start_date=dt.date(2000, 1, 1),
        values=values,
        source_tag=source_tag,
    )


# -- windowed samples ---------------------------------------------------------

@dataclass
class SampleSet:
    """Aligned (input window, label window) training pairs.

    Each sample's input covers the k days ending at its anchor date and its
    labels cover the n days immediately after.
    """

    inputs: np.ndarray          # (M, k, lat, lon, channels)
    labels: np.ndarray          # (M, n, 2)
    anchors: list
    source_tags: list
    k: int
    n: int
    spec: GridSpec | None = field(default=None)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        m = self.inputs.shape[0]
        if self.labels.shape[0] != m or len(self.anchors) != m or len(self.source_tags) != m:
            raise DimensionError(
                f"inconsistent sample count: inputs {self.inputs.shape}, labels "
                f"{self.labels.shape}, {len(self.anchors)} anchors"
            )
        if m and (self.inputs.shape[1] != self.k or self.labels.shape[1:] != (self.n, 2)):
            raise DimensionError(
                f"windows shaped {self.inputs.shape[1:]}/{self.labels.shape[1:]} do not "
                f"match k={self.k}, n={self.n}"
            )

    @property
    def count(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices) -> "SampleSet":
        indices = np.asarray(indices, dtype=np.intp)
        return SampleSet(
            inputs=self.inputs[indices],
            labels=self.labels[indices],
            anchors=[self.anchors[i] for i in indices],
            source_tags=[self.source_tags[i] for i in indices],
            k=self.k,
            n=self.n,
            spec=self.spec,
        )

    def tag_counts(self) -> dict:
        counts: dict = {}
        for tag in self.source_tags:
            counts[tag] = counts.get(tag, 0) + 1
        return counts


def _empty_sample_set(series: GriddedSeries, k: int, n: int) -> SampleSet:
    shape = (0, k, series.spec.lat_count, series.spec.lon_count, series.spec.channel_count)
    return SampleSet(
        inputs=np.empty(shape),
        labels=np.empty((0, n, 2)),
        anchors=[],
        source_tags=[],
        k=k,
        n=n,
        spec=series.spec,
    )


def window_series(series: GriddedSeries, labels: RmmSeries, k: int, n: int, stride: int) -> SampleSet:
    """Extract every (input, label) window pair at the given stride.

    Anchors advance from the earliest possible position; a series shorter
    than k+n days yields an empty set with a warning rather than an error.
    """
    if k < 1 or n < 1 or stride < 1:
        raise ParameterError(f"k, n, stride must be positive, got {k}, {n}, {stride}")
    t_len = series.days
    if t_len < k + n:
        warnings.warn(
            f"series of {t_len} days yields no {k}+{n}-day windows",
            RuntimeWarning,
            stacklevel=2,
        )
        return _empty_sample_set(series, k, n)
    anchor_idx = list(range(k - 1, t_len - n, stride))
    first_label = series.date_at(k)
    last_label = series.date_at(anchor_idx[-1] + n)
    for needed in (first_label, last_label):
        if not labels.covers(needed):
            offending = first_label if not labels.covers(first_label) else (
                labels.end_date + dt.timedelta(days=1)
            )
            raise AlignmentError(
                f"labels ({labels.start_date.isoformat()}..{labels.end_date.isoformat()}) "
                f"do not cover required date {offending.isoformat()}"
            )
    m = len(anchor_idx)
    inputs = np.empty((m, k) + series.values.shape[1:])
    label_arr = np.empty((m, n, 2))
    anchors = []
    for row, a in enumerate(anchor_idx):
        inputs[row] = series.values[a - k + 1:a + 1]
        anchor_date = series.date_at(a)
        lo = labels.index_of(anchor_date + dt.timedelta(days=1))
        label_arr[row, :, 0] = labels.rmm1[lo:lo + n]
        label_arr[row, :, 1] = labels.rmm2[lo:lo + n]
        anchors.append(anchor_date)
    return SampleSet(
        inputs=inputs,
        labels=label_arr,
        anchors=anchors,
        source_tags=[series.source_tag] * m,
        k=k,
        n=n,
        spec=series.spec,
    )


def _evenly_spaced(count: int, keep: int) -> np.ndarray:
    if keep == count:
        return np.arange(count)
    return np.round(np.linspace(0, count - 1, keep)).astype(np.intp)


def merge_sources(
    reanalysis: GriddedSeries,
    model_sources: list,
    labels: RmmSeries,
    k: int,
    n: int,
    reanalysis_stride: int,
    model_stride: int,
    seed: int,
) -> SampleSet:
    """Merge reanalysis and model windows at a strict 1:1 source ratio.

    Both sides are windowed at their own stride, the larger side is thinned
    to the smaller by evenly spaced selection, and the combined set is
    shuffled once with a seeded generator.
    """
    if not model_sources:
        raise CoverageError("merging requires at least one model series, got none")
    for src in model_sources:
        if (src.spec.lat_count, src.spec.lon_count, src.spec.channel_count) != (
            reanalysis.spec.lat_count,
            reanalysis.spec.lon_count,
            reanalysis.spec.channel_count,
        ):
            raise DimensionError(
                f"model series grid {src.spec.lat_count}x{src.spec.lon_count} does not "
                f"match reanalysis {reanalysis.spec.lat_count}x{reanalysis.spec.lon_count}"
            )
    needed = k + n
    for src in [reanalysis] + list(model_sources):
        if src.days < needed:
            raise CoverageError(
                f"{src.source_tag} series needs {needed} days for k={k}, n={n}; "
                f"only {src.days} available"
            )
    re_set = window_series(reanalysis, labels, k, n, reanalysis_stride)
    model_sets = [window_series(src, labels, k, n, model_stride) for src in model_sources]
    model_counts = [s.count for s in model_sets]
    total_model = sum(model_counts)
    half = min(re_set.count, total_model)
    if half == 0:
        raise CoverageError("a source produced zero windows; cannot honor the 1:1 ratio")
    re_sub = re_set.subset(_evenly_spaced(re_set.count, half))
    model_all = SampleSet(
        inputs=np.concatenate([s.inputs for s in model_sets]),
        labels=np.concatenate([s.labels for s in model_sets]),
        anchors=[a for s in model_sets for a in s.anchors],
        source_tags=[t for s in model_sets for t in s.source_tags],
        k=k,
        n=n,
        spec=re_set.spec,
    )
    model_sub = model_all.subset(_evenly_spaced(total_model, half))
    merged = SampleSet(
        inputs=np.concatenate([re_sub.inputs, model_sub.inputs]),
        labels=np.concatenate([re_sub.labels, model_sub.labels]),
        anchors=re_sub.anchors + model_sub.anchors,
        source_tags=re_sub.source_tags + model_sub.source_tags,
        k=k,
        n=n,
        spec=re_set.spec,
    )
    order = np.random.default_rng(seed).permutation(merged.count)
    return merged.subset(order)
