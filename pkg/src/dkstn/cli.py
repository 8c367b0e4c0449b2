"""Command-line surface: stage-by-stage tools plus the full reproducible run.

Exit codes: 0 on success, 1 on a runtime error (single-line ``error:``
message on stderr), 2 on usage errors. DKSTN_THREADS caps the numeric
library's thread pool; it must be honored before numpy loads, hence the
environment fiddling at the top of this module.
"""

import os

_threads = os.environ.get("DKSTN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import datetime as dt
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_arrays, save_arrays
from .errors import DkstnError, PipelineError
from .grid import merge_sources, read_grid_file, synth_generate, window_series, write_grid_file
from .metrics import (
    evaluate,
    read_prediction_csv,
    seasonal_split,
    write_prediction_csv,
    write_report_csv,
)
from .preprocess import fit_from_entries, fit_to_entries, preprocess_series
from .rmm import (
    basis_from_entries,
    basis_to_entries,
    compute_eof_basis,
    project_rmm,
    read_rmm_csv,
    write_rmm_csv,
)
from .runconfig import RunConfig
from .taam import extend_horizon
from .training import load_model, predict, save_model, split_by_date, train


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        return RunConfig.load(args.config)
    return RunConfig.defaults()


def _figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _write_train_log(path, metadata) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_loss"])
        for i, (tr, va) in enumerate(zip(metadata["train_loss"], metadata["valid_loss"]), 1):
            writer.writerow([i, repr(tr), repr(va)])


def cmd_synth(args) -> int:
    cfg = _config(args)
    synth = cfg.values["synth"]
    days = args.days if args.days is not None else synth["days"]
    seed = args.seed if args.seed is not None else synth["seed"]
    if args.model:
        seed += synth["model_seed_offset"]
    params = cfg.synth_params(model_data=args.model)
    tag = "model" if args.model else args.tag
    series = synth_generate(cfg.grid_spec(), days, seed, params, source_tag=tag)
    write_grid_file(args.out, series)
    print(f"wrote {days}-day {tag} series to {args.out} (seed {seed})")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    series = read_grid_file(args.input)
    fit = None
    if args.fit_in:
        fit = fit_from_entries(load_arrays(args.fit_in), variables=series.spec.variables)
    anomalies, fit = preprocess_series(
        series,
        fit=fit,
        max_wave=cfg.get("dkpm", "max_wave"),
        skip_sst_mask=args.skip_sst_mask,
    )
    write_grid_file(args.output, anomalies)
    if args.fit_out:
        save_arrays(args.fit_out, fit_to_entries(fit))
        print(f"wrote fitted cycle statistics to {args.fit_out}")
    print(
        f"wrote {anomalies.days}-day anomaly series to {args.output} "
        f"(dropped 120-day lead)"
    )
    return 0


def cmd_labels(args) -> int:
    anomalies = read_grid_file(args.anomalies)
    if args.basis_in:
        basis = basis_from_entries(load_arrays(args.basis_in))
    else:
        basis = compute_eof_basis(anomalies)
        if args.basis_out:
            save_arrays(args.basis_out, basis_to_entries(basis))
            print(f"wrote index basis to {args.basis_out}")
    labels = project_rmm(anomalies, basis)
    write_rmm_csv(args.labels_out, labels)
    print(f"wrote {len(labels)} daily labels to {args.labels_out}")
    if args.figures:
        from .figures import render_phase_diagram

        fig = render_phase_diagram(
            labels.rmm1, labels.rmm2, _figure_path(args.labels_out), title="label trajectory"
        )
        print(f"wrote {fig}")
    return 0


def _build_samples(cfg: RunConfig, reanalysis_path, model_paths, labels_path):
    """Raw series to merged, preprocessed training samples."""
    max_wave = cfg.get("dkpm", "max_wave")
    taam_cfg = cfg.taam_config()
    training = cfg.values["training"]
    labels = read_rmm_csv(labels_path)
    raw = read_grid_file(reanalysis_path, source_tag="reanalysis")
    anomalies, fit = preprocess_series(raw, max_wave=max_wave)
    if model_paths:
        model_anoms = []
        for path in model_paths:
            raw_model = read_grid_file(path, source_tag="model")
            anom, _ = preprocess_series(raw_model, max_wave=max_wave)
            model_anoms.append(anom)
        samples = merge_sources(
            anomalies,
            model_anoms,
            labels,
            k=taam_cfg.k,
            n=taam_cfg.n,
            reanalysis_stride=training["reanalysis_stride"],
            model_stride=training["model_stride"],
            seed=training["seed"],
        )
    else:
        samples = window_series(
            anomalies, labels, taam_cfg.k, taam_cfg.n, training["reanalysis_stride"]
        )
    return samples, fit


def cmd_train(args) -> int:
    cfg = _config(args)
    samples, fit = _build_samples(cfg, args.data, args.model_data, args.labels)
    model = train(
        samples,
        cfg.train_config(),
        srcm_config=cfg.srcm_config(),
        taam_config=cfg.taam_config(),
        harmonic_fit=fit,
    )
    save_model(args.checkpoint_out, model)
    meta = model.metadata
    print(
        f"trained {meta['epochs']} epochs on {samples.count} samples; "
        f"best epoch {meta['best_epoch']} "
        f"(valid loss {meta['valid_loss'][meta['best_epoch'] - 1]:.6g}); "
        f"checkpoint {args.checkpoint_out}"
    )
    if args.log:
        _write_train_log(args.log, meta)
        print(f"wrote {args.log}")
        if args.figures:
            from .figures import render_loss_curves

            fig = render_loss_curves(
                meta["train_loss"], meta["valid_loss"], _figure_path(args.log)
            )
            print(f"wrote {fig}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.checkpoint)
    series = read_grid_file(args.data)
    anchor = dt.date.fromisoformat(args.anchor) if args.anchor else None
    result = predict(model, series, anchor=anchor)
    write_rmm_csv(args.out, result)
    print(
        f"wrote {len(result)} lead-day predictions starting "
        f"{result.start_date.isoformat()} to {args.out}"
    )
    if args.figures:
        from .figures import render_phase_diagram

        fig = render_phase_diagram(
            result.rmm1, result.rmm2, _figure_path(args.out), title="forecast trajectory"
        )
        print(f"wrote {fig}")
    return 0


def cmd_extend(args) -> int:
    model = load_model(args.checkpoint)
    model.decoder = extend_horizon(model.decoder, args.extra_days)
    save_model(args.out, model)
    print(
        f"extended horizon from {model.taam_config.n} to {model.decoder.n_total} "
        f"leads; wrote {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    pred, anchors = read_prediction_csv(args.pred)
    truth, _ = read_prediction_csv(args.truth)
    report = evaluate(
        pred,
        truth,
        pe_mode=args.pe_mode,
        cor_threshold=args.cor_threshold,
        rmse_threshold=args.rmse_threshold,
    )
    if args.seasonal:
        if anchors is None:
            raise DkstnError("--seasonal needs anchor dates in the prediction file")
        report.seasons = seasonal_split(
            pred, truth, anchors, args.pe_mode, args.cor_threshold, args.rmse_threshold
        )
    write_report_csv(args.out_csv, report)
    print(f"wrote {args.out_csv}")
    stem = Path(args.out_csv)
    for season, rep in report.seasons.items():
        season_path = stem.with_name(f"{stem.stem}_{season}{stem.suffix}")
        write_report_csv(season_path, rep)
        print(f"wrote {season_path}")
    if args.figures:
        from .figures import render_skill_report

        fig = render_skill_report(report, _figure_path(args.out_csv), seasons=report.seasons)
        print(f"wrote {fig}")
    print(
        f"skill days: cor {report.skill_days_cor}, rmse {report.skill_days_rmse}, "
        f"combined {report.skill_days_combined}"
    )
    return 0


def cmd_inspect(args) -> int:
    entries = load_arrays(args.checkpoint)
    param_values = 0
    total_values = 0
    for name, arr in entries.items():
        shape = "scalar" if arr.ndim == 0 else "x".join(str(s) for s in arr.shape)
        print(f"{name:40s} {shape:>16s}")
        total_values += arr.size
        if name.startswith("param/"):
            param_values += arr.size
    print(f"trainable parameter values: {param_values}")
    print(f"total stored values: {total_values}")
    if "config/k" in entries:
        k = int(entries["config/k"])
        n = int(entries["config/n"])
        n_total = int(entries["config/n_total"])
        hidden = int(entries["config/hidden"])
        print(f"config: k={k} n={n} hidden={hidden}")
        if n_total > n:
            print(f"extended horizon: {n_total} leads (trained for {n})")
    return 0


def write_manifest(path, cfg: RunConfig, artifacts: dict) -> None:
    with open(path, "w") as fh:
        fh.write(f"created = {dt.datetime.now().isoformat()}\n")
        fh.write(f"dkstn_version = {__version__}\n")
        fh.write(f"numpy_version = {np.__version__}\n")
        fh.write(f"config_hash = {cfg.config_hash()}\n")
        fh.write(f"synth_seed = {cfg.get('synth', 'seed')}\n")
        fh.write(f"training_seed = {cfg.get('training', 'seed')}\n")
        for name, target in artifacts.items():
            fh.write(f"artifact_{name} = {target}\n")


def run_pipeline(cfg: RunConfig, out_dir) -> dict:
    """Full dependency-ordered run; artifacts land in ``out_dir``.

    Any stage failure is re-raised with the stage name; artifacts written
    before the failure stay on disk for debugging.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}
    stage = "synth"
    try:
        spec = cfg.grid_spec()
        synth = cfg.values["synth"]
        training = cfg.values["training"]
        taam_cfg = cfg.taam_config()
        reanalysis = synth_generate(
            spec, synth["days"], synth["seed"], cfg.synth_params(), source_tag="reanalysis"
        )
        model_series = synth_generate(
            spec,
            synth["days"],
            synth["seed"] + synth["model_seed_offset"],
            cfg.synth_params(model_data=True),
            source_tag="model",
        )
        artifacts["reanalysis"] = out / "reanalysis.dkg"
        artifacts["model_data"] = out / "model_data.dkg"
        write_grid_file(artifacts["reanalysis"], reanalysis)
        write_grid_file(artifacts["model_data"], model_series)

        stage = "preprocess"
        max_wave = cfg.get("dkpm", "max_wave")
        re_anom, re_fit = preprocess_series(reanalysis, max_wave=max_wave)
        mo_anom, _ = preprocess_series(model_series, max_wave=max_wave)
        artifacts["anomalies"] = out / "anomalies.dkg"
        artifacts["fit"] = out / "cycle_fit.dkw"
        write_grid_file(artifacts["anomalies"], re_anom)
        save_arrays(artifacts["fit"], fit_to_entries(re_fit))

        stage = "labels"
        basis = compute_eof_basis(re_anom)
        labels = project_rmm(re_anom, basis)
        artifacts["basis"] = out / "basis.dkw"
        artifacts["labels"] = out / "labels.csv"
        save_arrays(artifacts["basis"], basis_to_entries(basis))
        write_rmm_csv(artifacts["labels"], labels)

        stage = "train"
        samples = merge_sources(
            re_anom,
            [mo_anom],
            labels,
            k=taam_cfg.k,
            n=taam_cfg.n,
            reanalysis_stride=training["reanalysis_stride"],
            model_stride=training["model_stride"],
            seed=training["seed"],
        )
        model = train(
            samples,
            cfg.train_config(),
            srcm_config=cfg.srcm_config(),
            taam_config=taam_cfg,
            harmonic_fit=re_fit,
        )
        artifacts["checkpoint"] = out / "checkpoint.dkw"
        artifacts["train_log"] = out / "train_log.csv"
        save_model(artifacts["checkpoint"], model)
        _write_train_log(artifacts["train_log"], model.metadata)
        from .figures import render_loss_curves

        artifacts["train_figure"] = out / "train_log.png"
        render_loss_curves(
            model.metadata["train_loss"], model.metadata["valid_loss"],
            artifacts["train_figure"],
        )

        stage = "predict"
        _, valid_set = split_by_date(samples, cfg.train_config().valid_fraction)
        preds = model.predict_windows(valid_set.inputs, leads=valid_set.n)
        artifacts["predictions"] = out / "predictions.csv"
        artifacts["truth"] = out / "truth.csv"
        write_prediction_csv(artifacts["predictions"], preds, valid_set.anchors)
        write_prediction_csv(artifacts["truth"], valid_set.labels, valid_set.anchors)

        stage = "eval"
        eval_cfg = cfg.values["eval"]
        report = evaluate(
            preds,
            valid_set.labels,
            pe_mode=eval_cfg["pe_mode"],
            cor_threshold=eval_cfg["cor_threshold"],
            rmse_threshold=eval_cfg["rmse_threshold"],
        )
        if eval_cfg["seasonal"]:
            report.seasons = seasonal_split(
                preds, valid_set.labels, valid_set.anchors, eval_cfg["pe_mode"],
                eval_cfg["cor_threshold"], eval_cfg["rmse_threshold"],
            )
        artifacts["metrics"] = out / "metrics.csv"
        write_report_csv(artifacts["metrics"], report)
        for season, rep in report.seasons.items():
            season_path = out / f"metrics_{season}.csv"
            write_report_csv(season_path, rep)
            artifacts[f"metrics_{season}"] = season_path
        from .figures import render_skill_report

        artifacts["metrics_figure"] = out / "metrics.png"
        render_skill_report(report, artifacts["metrics_figure"], seasons=report.seasons)

        stage = "manifest"
        artifacts["manifest"] = out / "manifest.txt"
        write_manifest(artifacts["manifest"], cfg, artifacts)
    except DkstnError as exc:
        if isinstance(exc, PipelineError):
            raise
        raise PipelineError(stage, exc) from exc
    return artifacts


def cmd_all(args) -> int:
    cfg = RunConfig.load(args.config)
    artifacts = run_pipeline(cfg, args.out_dir)
    for name, target in artifacts.items():
        print(f"{name}: {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dkstn",
        description="Spatio-temporal forecasting toolkit for tropical oscillation indices",
    )
    parser.add_argument("--version", action="version", version=f"dkstn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic gridded series")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--out", required=True, help="output grid file")
    p.add_argument("--days", type=int, help="override [synth] days")
    p.add_argument("--seed", type=int, help="override [synth] seed")
    p.add_argument("--model", action="store_true",
                   help="apply the pseudo-model bias and seed offset")
    p.add_argument("--tag", default="reanalysis",
                   choices=("reanalysis", "model", "synthetic"), help="source tag")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="remove cycles and the 120-day mean, mask land")
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--input", required=True, help="raw grid file")
    p.add_argument("--output", required=True, help="anomaly grid file")
    p.add_argument("--fit-out", help="write fitted cycle statistics here")
    p.add_argument("--fit-in", help="reuse fitted cycle statistics from this file")
    p.add_argument("--skip-sst-mask", action="store_true",
                   help="keep the land sentinel (diagnostics)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("labels", help="fit the index basis and emit daily labels")
    p.add_argument("--anomalies", required=True, help="preprocessed anomaly grid file")
    p.add_argument("--basis-out", help="write the fitted basis here")
    p.add_argument("--basis-in", help="project with an existing basis")
    p.add_argument("--labels-out", required=True, help="output label CSV")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                   help="render the trajectory figure next to the CSV")
    p.set_defaults(func=cmd_labels)

    p = sub.add_parser("train", help="train a model from raw data and labels")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--data", required=True, help="raw reanalysis grid file")
    p.add_argument("--model-data", action="append", default=[],
                   help="raw model grid file (repeatable; enables merging)")
    p.add_argument("--labels", required=True, help="label CSV")
    p.add_argument("--checkpoint-out", required=True, help="output checkpoint")
    p.add_argument("--log", help="write per-epoch loss CSV here")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                   help="render the loss-curve figure next to the log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast from a raw window plus context")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="raw grid file covering 120+k days")
    p.add_argument("--anchor", help="forecast initialization date (default: last day)")
    p.add_argument("--out", required=True, help="output CSV of daily predictions")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("extend", help="extend the forecast horizon by copying the last step")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--extra-days", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("eval", help="score a prediction set against truth")
    p.add_argument("--pred", required=True, help="prediction-set CSV")
    p.add_argument("--truth", required=True, help="truth-set CSV")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--seasonal", action="store_true", help="also stratify by season")
    p.add_argument("--pe-mode", default="wrapped", choices=("wrapped", "literal"))
    p.add_argument("--cor-threshold", type=float, default=0.5)
    p.add_argument("--rmse-threshold", type=float, default=1.4)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                   help="render skill-curve figures next to the CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("all", help="run synth, preprocess, labels, train, predict, eval")
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out-dir", required=True, help="artifact directory")
    p.set_defaults(func=cmd_all)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DkstnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
