"""Full-model assembly, the weighted two-component loss, the training loop,
prediction, and checkpoint round-tripping.

A trained model carries everything needed to forecast from raw data: the
fitted annual-cycle statistics, frozen batch-normalization estimates, and
all network weights. Training shuffles batches with a per-epoch derived
seed, evaluates the held-back split with frozen statistics, and returns the
parameters from the epoch with the lowest validation loss.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .errors import (
    CoverageError,
    DimensionError,
    FormatError,
    ParameterError,
    TrainingError,
)
from .grid import GriddedSeries, GridSpec, SampleSet
from .optim import AdamState, adam_step, zero_grads
from .preprocess import (
    BatchNormState,
    HarmonicFit,
    batchnorm_forward,
    mask_sst,
    remove_cycles,
    remove_running_mean,
)
from .rmm import RmmSeries
from .srcm import SrcmConfig, SrcmWeights, srcm_forward_batch
from .taam import (
    AttentionWeights,
    DecoderStack,
    TaamConfig,
    attend,
    decode,
    encode,
)
from .tensor import LstmWeights, Tape, Tensor, add, mul, narrow, sub


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    learning_rate: float = 1e-4
    weight_decay: float = 0.001
    batch_size: int = 16
    beta: float = 0.5
    gamma: float = 0.5
    seed: int = 0
    valid_fraction: float = 0.1

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0:
            raise ParameterError(f"loss weights must be positive, got {self.beta}, {self.gamma}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ParameterError(f"batch size must be at least 2, got {self.batch_size}")
        if not 0.0 < self.valid_fraction < 1.0:
            raise ParameterError(f"valid_fraction must be in (0, 1), got {self.valid_fraction}")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ParameterError("learning rate and weight decay must be non-negative")


def loss_overall(pred: Tensor, truth: Tensor, beta: float, gamma: float) -> Tensor:
    """Weighted sum of the two components' mean squared errors.

    Each component's error is averaged over samples and leads; ``beta``
    weights the first index component and ``gamma`` the second.
    """
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    if pred.shape[-1] != 2:
        raise DimensionError(f"last axis must hold the 2 index components, got {pred.shape}")
    diff = sub(pred, truth)
    axis = pred.ndim - 1
    comp1 = narrow(diff, axis, 0, 1)
    comp2 = narrow(diff, axis, 1, 1)
    mse1 = mul(comp1, comp1).mean()
    mse2 = mul(comp2, comp2).mean()
    return add(mul(mse1, Tensor(float(beta))), mul(mse2, Tensor(float(gamma))))


class DkstnModel:
    """Complete parameter set: preprocessing statistics plus network weights."""

    def __init__(
        self,
        lat_count: int,
        lon_count: int,
        variables: tuple,
        srcm_config: SrcmConfig,
        taam_config: TaamConfig,
        bn: BatchNormState,
        srcm_weights: SrcmWeights,
        encoder: LstmWeights,
        attention: AttentionWeights,
        decoder: DecoderStack,
        harmonic_fit: HarmonicFit | None = None,
        metadata: dict | None = None,
    ):
        self.lat_count = lat_count
        self.lon_count = lon_count
        self.variables = tuple(v.lower() for v in variables)
        self.srcm_config = srcm_config
        self.taam_config = taam_config
        self.bn = bn
        self.srcm_weights = srcm_weights
        self.encoder = encoder
        self.attention = attention
        self.decoder = decoder
        self.harmonic_fit = harmonic_fit
        self.metadata = metadata if metadata is not None else {}

    @classmethod
    def build(
        cls,
        lat_count: int,
        lon_count: int,
        variables: tuple,
        srcm_config: SrcmConfig,
        taam_config: TaamConfig,
        seed: int,
    ) -> "DkstnModel":
        rng = np.random.default_rng([seed, 1])
        channels = len(variables)
        feature_dim = srcm_config.output_dim(lat_count, lon_count)
        bn = BatchNormState(channels)
        srcm_weights = SrcmWeights.initialize(srcm_config, channels, lat_count, lon_count, rng)
        encoder = LstmWeights.initialize(feature_dim, taam_config.hidden, rng)
        attention = AttentionWeights.initialize(taam_config.hidden, rng)
        decoder = DecoderStack.initialize(taam_config, rng)
        return cls(
            lat_count,
            lon_count,
            variables,
            srcm_config,
            taam_config,
            bn,
            srcm_weights,
            encoder,
            attention,
            decoder,
        )

    def named_parameters(self) -> dict:
        params = {"bn/gamma": self.bn.gamma, "bn/beta": self.bn.beta}
        params.update(self.srcm_weights.named())
        params["taam/encoder/w"] = self.encoder.w
        params["taam/encoder/b"] = self.encoder.b
        params.update(self.attention.named())
        params.update(self.decoder.named())
        return params

    def forward_batch(self, x: Tensor, training: bool, leads=None) -> Tensor:
        """Run normalization, spatial features, and the temporal chain."""
        self.bn.training = training
        normalized = batchnorm_forward(x, self.bn)
        feats = srcm_forward_batch(normalized, self.srcm_config, self.srcm_weights)
        hidden_seq, h, c = encode(feats, self.encoder)
        attended = attend(hidden_seq, self.attention)
        return decode(attended, h, c, self.decoder, n=leads)

    def predict_windows(self, inputs: np.ndarray, chunk: int = 64, leads=None) -> np.ndarray:
        """Infer-mode predictions for preprocessed (M, k, lat, lon, c) windows."""
        outputs = []
        for start in range(0, inputs.shape[0], chunk):
            x = Tensor(inputs[start:start + chunk])
            outputs.append(self.forward_batch(x, training=False, leads=leads).data)
        return np.concatenate(outputs) if outputs else np.empty((0, self.decoder.n_total, 2))


def split_by_date(samples: SampleSet, valid_fraction: float):
    """Date-ordered split: the trailing fraction of anchors validates."""
    m = samples.count
    order = np.argsort([a.toordinal() for a in samples.anchors], kind="stable")
    n_valid = max(1, int(round(valid_fraction * m)))
    if m - n_valid < 1:
        raise CoverageError(
            f"{m} samples cannot support a {valid_fraction:.0%} validation split"
        )
    return samples.subset(order[: m - n_valid]), samples.subset(order[m - n_valid:])


def _eval_loss(model: DkstnModel, subset: SampleSet, config: TrainConfig) -> float:
    preds = model.predict_windows(subset.inputs, leads=subset.n)
    err1 = preds[..., 0] - subset.labels[..., 0]
    err2 = preds[..., 1] - subset.labels[..., 1]
    return float(config.beta * np.mean(err1 * err1) + config.gamma * np.mean(err2 * err2))


def train(
    samples: SampleSet,
    config: TrainConfig,
    srcm_config: SrcmConfig | None = None,
    taam_config: TaamConfig | None = None,
    harmonic_fit: HarmonicFit | None = None,
) -> DkstnModel:
    """Optimize a fresh model on date-split samples; return the best epoch.

    Batches whose remainder would hold a single sample are dropped, since
    train-mode normalization needs at least two rows.
    """
    if samples.count < 2:
        raise CoverageError(f"training needs at least 2 samples, got {samples.count}")
    if samples.spec is None:
        raise ParameterError("sample set carries no grid spec")
    srcm_config = srcm_config if srcm_config is not None else SrcmConfig()
    if taam_config is None:
        taam_config = TaamConfig(k=samples.k, n=samples.n)
    if taam_config.k != samples.k or taam_config.n != samples.n:
        raise ParameterError(
            f"temporal config (k={taam_config.k}, n={taam_config.n}) does not match "
            f"samples (k={samples.k}, n={samples.n})"
        )
    train_set, valid_set = split_by_date(samples, config.valid_fraction)
    spec = samples.spec
    model = DkstnModel.build(
        spec.lat_count, spec.lon_count, spec.variables, srcm_config, taam_config, config.seed
    )
    params = model.named_parameters()
    state = AdamState(
        params,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    history_train, history_valid = [], []
    best_loss = np.inf
    best_epoch = 0
    best_params = None
    best_stats = None
    n_train = train_set.count
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, 1000 + epoch]).permutation(n_train)
        loss_sum = 0.0
        seen = 0
        for start in range(0, n_train, config.batch_size):
            chunk = np.sort(order[start:start + config.batch_size])
            if len(chunk) < 2:
                continue
            x = Tensor(train_set.inputs[chunk])
            y = Tensor(train_set.labels[chunk])
            with Tape() as tape:
                pred = model.forward_batch(x, training=True, leads=samples.n)
                loss = loss_overall(pred, y, config.beta, config.gamma)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            zero_grads(params)
            tape.backward(loss)
            adam_step(params, state)
            loss_sum += value * len(chunk)
            seen += len(chunk)
        if seen == 0:
            raise CoverageError("every batch was dropped; reduce batch size")
        train_loss = loss_sum / seen
        valid_loss = _eval_loss(model, valid_set, config)
        history_train.append(train_loss)
        history_valid.append(valid_loss)
        if valid_loss < best_loss:
            best_loss = valid_loss
            best_epoch = epoch
            best_params = {name: p.data.copy() for name, p in params.items()}
            best_stats = (model.bn.running_mean.copy(), model.bn.running_var.copy())
    for name, p in params.items():
        p.data = best_params[name]
    model.bn.running_mean, model.bn.running_var = best_stats
    model.harmonic_fit = harmonic_fit
    model.metadata = {
        "seed": config.seed,
        "epochs": config.epochs,
        "best_epoch": best_epoch,
        "train_loss": history_train,
        "valid_loss": history_valid,
    }
    return model


def predict(model: DkstnModel, series: GriddedSeries, anchor: dt.date | None = None) -> RmmSeries:
    """Forecast from raw data: the window ending at the anchor plus history.

    The series must supply the input window and the 120 days of context
    every window day needs; preprocessing reuses the statistics stored in
    the model, with normalization frozen.
    """
    if model.harmonic_fit is None:
        raise ParameterError("model carries no fitted annual-cycle statistics")
    if (series.spec.lat_count, series.spec.lon_count) != (model.lat_count, model.lon_count):
        raise DimensionError(
            f"series grid {series.spec.lat_count}x{series.spec.lon_count} does not match "
            f"model {model.lat_count}x{model.lon_count}"
        )
    if tuple(series.spec.variables) != model.variables:
        raise DimensionError(
            f"series variables {series.spec.variables} do not match model {model.variables}"
        )
    k = model.taam_config.k
    needed = 120 + k
    if series.days < needed:
        raise CoverageError(
            f"prediction needs {needed} days of context (120 + k={k}), series has {series.days}"
        )
    anomalies = remove_running_mean(remove_cycles(series, model.harmonic_fit))
    if series.spec.has_channel("sst"):
        anomalies = mask_sst(anomalies)
    anchor = anchor if anchor is not None else series.end_date
    offset = (anchor - anomalies.start_date).days
    if offset < k - 1 or offset >= anomalies.days:
        raise CoverageError(
            f"anchor {anchor.isoformat()} lacks a full {k}-day window with 120-day context"
        )
    window = anomalies.values[offset - k + 1:offset + 1]
    preds = model.predict_windows(window[None])
    return RmmSeries(
        start_date=anchor + dt.timedelta(days=1),
        rmm1=preds[0, :, 0],
        rmm2=preds[0, :, 1],
    )


# -- checkpoint round-trip -----------------------------------------------------

def _encode_text(text: str) -> np.ndarray:
    return np.array([float(ord(ch)) for ch in text])


def _decode_text(arr: np.ndarray) -> str:
    return "".join(chr(int(round(v))) for v in np.atleast_1d(arr))


def model_to_entries(model: DkstnModel) -> dict:
    entries: dict = {}
    cfg = {
        "k": model.taam_config.k,
        "n": model.taam_config.n,
        "n_total": model.decoder.n_total,
        "hidden": model.taam_config.hidden,
        "tied_decoder": int(model.taam_config.tied_decoder),
        "srcm_layers": model.srcm_config.layer_count,
        "srcm_first_kernel": model.srcm_config.first_kernel,
        "srcm_residual_kernel": model.srcm_config.residual_kernel,
        "srcm_channels": model.srcm_config.channels,
        "srcm_first_stride": model.srcm_config.first_stride,
        "srcm_projection_dim": model.srcm_config.projection_dim,
        "srcm_learned_projection": int(model.srcm_config.learned_projection),
        "lat_count": model.lat_count,
        "lon_count": model.lon_count,
        "channel_count": len(model.variables),
        "bn_momentum": model.bn.momentum,
        "bn_epsilon": model.bn.epsilon,
        "has_fit": int(model.harmonic_fit is not None),
    }
    for key, value in cfg.items():
        entries[f"config/{key}"] = np.float64(value)
    for i, name in enumerate(model.variables):
        entries[f"config/var{i:02d}"] = _encode_text(name)
    for name, p in model.named_parameters().items():
        entries[f"param/{name}"] = p.data
    entries["bn/running_mean"] = model.bn.running_mean
    entries["bn/running_var"] = model.bn.running_var
    fit = model.harmonic_fit
    if fit is not None:
        entries["dkpm/a0"] = fit.a0
        entries["dkpm/cos"] = fit.cos_coeffs
        entries["dkpm/sin"] = fit.sin_coeffs
        entries["dkpm/omega"] = np.float64(fit.omega)
        entries["dkpm/origin_ordinal"] = np.float64(fit.origin.toordinal())
    meta = model.metadata
    if meta:
        entries["meta/seed"] = np.float64(meta.get("seed", 0))
        entries["meta/epochs"] = np.float64(meta.get("epochs", 0))
        entries["meta/best_epoch"] = np.float64(meta.get("best_epoch", 0))
        entries["meta/train_loss"] = np.asarray(meta.get("train_loss", []), dtype=np.float64)
        entries["meta/valid_loss"] = np.asarray(meta.get("valid_loss", []), dtype=np.float64)
    return entries


def save_model(path, model: DkstnModel) -> None:
    save_arrays(path, model_to_entries(model))


def load_model(path) -> DkstnModel:
    entries = load_arrays(path)

    def scalar(key):
        if f"config/{key}" not in entries:
            raise FormatError(f"checkpoint {path} lacks config entry '{key}'")
        return float(entries[f"config/{key}"])

    channel_count = int(scalar("channel_count"))
    variables = tuple(
        _decode_text(entries[f"config/var{i:02d}"]) for i in range(channel_count)
    )
    srcm_config = SrcmConfig(
        layer_count=int(scalar("srcm_layers")),
        first_kernel=int(scalar("srcm_first_kernel")),
        residual_kernel=int(scalar("srcm_residual_kernel")),
        channels=int(scalar("srcm_channels")),
        first_stride=int(scalar("srcm_first_stride")),
        projection_dim=int(scalar("srcm_projection_dim")),
        learned_projection=bool(int(scalar("srcm_learned_projection"))),
    )
    taam_config = TaamConfig(
        k=int(scalar("k")),
        n=int(scalar("n")),
        hidden=int(scalar("hidden")),
        tied_decoder=bool(int(scalar("tied_decoder"))),
    )
    lat_count = int(scalar("lat_count"))
    lon_count = int(scalar("lon_count"))
    n_total = int(scalar("n_total"))

    def param(name):
        key = f"param/{name}"
        if key not in entries:
            raise FormatError(f"checkpoint {path} lacks parameter '{name}'")
        return Tensor(entries[key], requires_grad=True)

    bn = BatchNormState(
        channel_count, momentum=scalar("bn_momentum"), epsilon=scalar("bn_epsilon")
    )
    bn.gamma = param("bn/gamma")
    bn.beta = param("bn/beta")
    bn.running_mean = entries["bn/running_mean"].copy()
    bn.running_var = entries["bn/running_var"].copy()
    kernels, biases = [], []
    for i in range(srcm_config.layer_count):
        kernels.append(param(f"srcm/conv{i:02d}/kernel"))
        biases.append(param(f"srcm/conv{i:02d}/bias"))
    proj_w = proj_b = None
    if srcm_config.learned_projection:
        proj_w = param("srcm/proj/w")
        proj_b = param("srcm/proj/b")
    srcm_weights = SrcmWeights(kernels, biases, proj_w, proj_b)
    feature_dim = srcm_config.output_dim(lat_count, lon_count)
    d = taam_config.hidden
    encoder = LstmWeights(
        w=param("taam/encoder/w"), b=param("taam/encoder/b"),
        input_dim=feature_dim, hidden=d,
    )
    attention = AttentionWeights(
        wq=param("taam/attn/wq"), wk=param("taam/attn/wk"), wv=param("taam/attn/wv")
    )
    step_count = 1 if taam_config.tied_decoder else n_total
    steps = [
        LstmWeights(
            w=param(f"taam/decoder/step{i:03d}/w"),
            b=param(f"taam/decoder/step{i:03d}/b"),
            input_dim=d,
            hidden=d,
        )
        for i in range(step_count)
    ]
    decoder = DecoderStack(
        steps=steps,
        head_w=param("taam/decoder/head/w"),
        head_b=param("taam/decoder/head/b"),
        tied=taam_config.tied_decoder,
        n_base=taam_config.n,
        n_total=n_total,
    )
    fit = None
    if int(scalar("has_fit")):
        fit = HarmonicFit(
            a0=entries["dkpm/a0"].copy(),
            cos_coeffs=entries["dkpm/cos"].copy(),
            sin_coeffs=entries["dkpm/sin"].copy(),
            omega=float(entries["dkpm/omega"]),
            origin=dt.date.fromordinal(int(entries["dkpm/origin_ordinal"])),
            variables=variables,
        )
    metadata = {}
    if "meta/seed" in entries:
        metadata = {
            "seed": int(entries["meta/seed"]),
            "epochs": int(entries["meta/epochs"]),
            "best_epoch": int(entries["meta/best_epoch"]),
            "train_loss": entries["meta/train_loss"].tolist(),
            "valid_loss": entries["meta/valid_loss"].tolist(),
        }
    return DkstnModel(
        lat_count,
        lon_count,
        variables,
        srcm_config,
        taam_config,
        bn,
        srcm_weights,
        encoder,
        attention,
        decoder,
        harmonic_fit=fit,
        metadata=metadata,
    )


def grid_spec_for_model(model: DkstnModel) -> GridSpec:
    return GridSpec.tropics(model.lat_count, model.lon_count, variables=model.variables)
