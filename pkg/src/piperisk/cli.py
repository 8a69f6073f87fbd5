"""Command-line entry point: ``piperisk <command> --config run.cfg``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 data
validation failure, 4 numeric non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .boosting import BoostedEnsemble
from .config import RunConfig
from .errors import ConfigError, ConvergenceError, DataValidationError, NotFittedError, PipeRiskError
from .evaluation import (
    SCORE_COLUMNS,
    CvScheme,
    evaluate_on_test,
    run_temporal_cv,
    write_scores,
    write_threshold_sweep,
)
from .features import EncoderState, apply_encoder, derive_features
from .ingest import load_panel, write_csv
from .logit import LogitModel, rank_coefficients
from .pipeline import PipelineConfig, fit_pipeline
from .panel import temporal_split
from .survival import (
    BRIER_GRID,
    SUMMARY_COLUMNS,
    breslow_baseline,
    build_survival_dataset,
    censoring_km,
    concordance_index,
    coxnet_path,
    fit_coxnet,
    horizon_survival,
    material_survival_summary,
    model_json,
    predict_survival,
    single_feature_screen,
    weighted_brier,
)
from .synth import generate_panel, write_synth
from .treeshap import tree_shap, shap_summary

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CONVERGENCE = 0, 2, 3, 4


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if np.isnan(v) else repr(round(v, 10))
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _panel(cfg: RunConfig):
    paths = [cfg.path("inventory", "inventory.csv"), cfg.path("failures", "failures.csv")]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise DataValidationError(f"input files not found: {missing}")
    panel, reports = load_panel(*paths, cfg.path("operations", "operations.csv"))
    for r in reports:
        print(r.summary(), file=sys.stderr)
    return panel


def _pipeline_config(cfg: RunConfig, horizon=None) -> PipelineConfig:
    return PipelineConfig(
        model=cfg["model"],
        horizon_k=horizon or cfg["horizon_k"],
        lambda_l1=cfg["lambda_l1"],
        gbt=cfg.gbt_params(),
        smote=cfg.smote_config(),
        use_smote=cfg["smote"],
    )


def _grid(cfg: RunConfig):
    step = cfg["threshold_step"]
    n = int(round(1.0 / step))
    grid = [round(i * step, 10) for i in range(n + 1) if i * step <= 1.0 + 1e-12]
    return tuple(min(g, 1.0) for g in grid)


def _test_year(cfg: RunConfig, panel, k: int) -> int:
    return cfg["test_year"] if cfg["test_year"] != "" else panel.year_range[1] - k


def _gap(cfg: RunConfig):
    return None if cfg["gap"] == "" else cfg["gap"]


def _check_converged(model) -> None:
    if isinstance(model, LogitModel) and not model.converged:
        raise ConvergenceError(f"logit solver stopped after {model.epochs_run} epochs without converging (converged=false)")


def cmd_synth(cfg: RunConfig) -> int:
    result = generate_panel(cfg.generator())
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    paths = write_synth(result, out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def _run_cv(cfg: RunConfig, panel, k: int, threads: int):
    pc = _pipeline_config(cfg, k)
    scheme = CvScheme(horizon_k=k, n_folds=cfg["n_folds"], gap=_gap(cfg))
    report = run_temporal_cv(panel, pc, scheme, grid=_grid(cfg), threads=threads)
    final = evaluate_on_test(panel, pc, _test_year(cfg, panel, k), report.selected_threshold, gap=_gap(cfg))
    _check_converged(final.trained.model)
    report.test_scores = final.scores
    return report, final


def cmd_cv(cfg: RunConfig) -> int:
    panel = _panel(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    k = cfg["horizon_k"]
    report, final = _run_cv(cfg, panel, k, cfg.n_threads)
    write_threshold_sweep(report, out / "threshold_sweep.csv")
    write_scores(final.scores, out / "scores.csv")
    print(
        f"model={cfg['model']} k={k} folds={report.scheme.validation_years} "
        f"threshold={report.selected_threshold:.2f} test_mcc={final.scores.mcc:.4f}"
    )
    sweep = cfg.horizons()
    if sweep:
        rows = []
        for h in sweep:
            rep_h, fin_h = (report, final) if h == k else _run_cv(cfg, panel, h, cfg.n_threads)
            s = fin_h.scores.as_row()
            rows.append([h] + [s[c] for c in SCORE_COLUMNS])
            print(f"horizon k={h}: threshold={rep_h.selected_threshold:.2f} mcc={fin_h.scores.mcc:.4f}")
        _write_rows(out / "horizon_sweep.csv", ["horizon_k", *SCORE_COLUMNS], rows)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    panel = _panel(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    k = cfg["horizon_k"]
    train_years, _ = temporal_split(panel, _test_year(cfg, panel, k), k, _gap(cfg))
    trained = fit_pipeline(panel, train_years, _pipeline_config(cfg))
    _check_converged(trained.model)
    doc = trained.model.to_dict()
    doc["horizon_k"] = k
    doc["train_years"] = list(trained.train_years)
    (out / "model.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    (out / "encoder.json").write_text(trained.encoder.to_json() + "\n", encoding="utf-8")
    print(f"trained {cfg['model']} on years {trained.train_years[0]}-{trained.train_years[-1]} ({trained.n_train_rows} rows)")
    return EXIT_OK


def _load_model(path: Path):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise NotFittedError(f"cannot read model file {path}: {exc}") from exc
    kind = doc.get("kind")
    if kind == "logit":
        return LogitModel.from_dict(doc), doc
    if kind == "gbt":
        return BoostedEnsemble.from_dict(doc), doc
    raise ConfigError(f"model file {path} has unsupported kind {kind!r}")


def cmd_explain(cfg: RunConfig) -> int:
    out = cfg.out_dir
    model_path = Path(cfg["model_path"]) if cfg["model_path"] else out / "model.json"
    model, doc = _load_model(model_path)
    kind = doc["kind"]
    if kind != cfg["model"]:
        raise ConfigError(f"model file holds a {kind} model but model = {cfg['model']}")
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(model, LogitModel):
        _write_rows(out / "coefficients.csv", ["feature", "beta", "abs_beta"], [(n, b, abs(b)) for n, b in rank_coefficients(model)])
        return EXIT_OK
    panel = _panel(cfg)
    encoder = EncoderState.from_json((model_path.parent / "encoder.json").read_text(encoding="utf-8"))
    k = int(doc.get("horizon_k", cfg["horizon_k"]))
    rows = derive_features(panel, panel.rows_at(_test_year(cfg, panel, k)).reset_index(drop=True))
    fm = apply_encoder(rows, encoder)
    attribution = tree_shap(model, fm.values)
    gap = np.abs(attribution.margins() - model.margin(fm.values)).max()
    if gap > 1e-9:
        raise ConvergenceError(f"SHAP local accuracy violated by {gap:.3e}")
    _write_rows(out / "shap_summary.csv", ["feature", "mean_abs_shap"], shap_summary(attribution))
    if cfg["dump_attributions"]:
        frame = pd.DataFrame(attribution.values, columns=attribution.column_names)
        frame.insert(0, "pipe_id", rows["pipe_id"].to_numpy())
        frame["base_value"] = attribution.base_value
        write_csv(frame, out / "shap_values.csv", list(frame.columns))
    return EXIT_OK


def _survival_split(cfg: RunConfig, records):
    n = len(records)
    perm = np.random.default_rng(cfg["seed"]).permutation(n)
    n_test = int(round(cfg["surv_test_fraction"] * n))
    return records.subset(np.sort(perm[n_test:])), records.subset(np.sort(perm[:n_test]))


def _fit_survival(cfg: RunConfig, records):
    train, test = _survival_split(cfg, records)
    if cfg["surv_lambda"] == "":
        model, _ = coxnet_path(train, test, alpha=cfg["surv_alpha"], n_lambda=cfg["surv_n_lambda"], ratio=cfg["surv_lambda_ratio"])
    else:
        model = fit_coxnet(train, alpha=cfg["surv_alpha"], lambda_=cfg["surv_lambda"])
    if not model.converged:
        raise ConvergenceError(f"Cox solver stopped after {model.epochs_run} epochs without converging (converged=false)")
    return model, breslow_baseline(train, model), train, test


def cmd_survival(cfg: RunConfig, action: str) -> int:
    panel = _panel(cfg)
    records = build_survival_dataset(panel)
    if records.skipped:
        print(f"skipped {len(records.skipped)} pipes without a usable record", file=sys.stderr)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    grid = np.arange(1, cfg["surv_time_max"] + 1, dtype=np.float64)
    if action == "screen":
        screen = single_feature_screen(records, alpha=cfg["surv_alpha"], lambda_=cfg["screen_lambda"], split_seed=cfg["seed"])
        _write_rows(out / "screen.csv", ["feature", "c_index", "flagged"], [(n, c, int(f)) for n, c, f in screen])
        return EXIT_OK
    model, baseline, train, test = _fit_survival(cfg, records)
    if action == "fit":
        (out / "survival_model.json").write_text(model_json(model, baseline, records.encoder) + "\n", encoding="utf-8")
        print(f"cox fit: lambda={model.lambda_:.3g} alpha={model.alpha} nonzero={int(np.count_nonzero(model.beta))}")
    elif action == "eval":
        curves = predict_survival(model, baseline, test.covariates, grid)
        brier = weighted_brier(curves.survival, test.durations, test.events, censoring_km(test.durations, test.events), grid)
        c = concordance_index(test.durations, test.events, model.linear_predictor(test.covariates))
        _write_rows(out / "survival_eval.csv", ["weighted_brier", "c_index", "n_test"], [(brier, c, len(test))])
        print(f"weighted_brier={brier:.6f} c_index={c:.4f}")
    elif action == "curves":
        rng = np.random.default_rng(cfg["seed"])
        pick = np.sort(rng.choice(len(records), size=min(cfg["surv_sample"], len(records)), replace=False))
        curves = predict_survival(model, baseline, records.covariates[pick], grid)
        ids = records.pipe_ids[pick]
        rows = ((pid, t, s) for pid, surv in zip(ids, curves.survival) for t, s in zip(grid, surv))
        _write_rows(out / "survival_curves.csv", ["pipe_id", "time", "survival"], rows)
    elif action == "materials":
        end_year = panel.year_range[1]
        mask, values = horizon_survival(model, baseline, records, end_year, cfg["surv_years_ahead"])
        table = material_survival_summary(values, records.materials[mask])
        _write_rows(out / "material_summary.csv", list(SUMMARY_COLUMNS), table.itertuples(index=False))
    else:
        raise ConfigError(f"unknown survival action {action!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="piperisk", description="Pipe failure risk modelling")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="flat key = value run configuration")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="seed for every stochastic step (overrides seed)")
        p.add_argument("--threads", type=int, help="worker threads (overrides threads)")
        p.add_argument("--model", choices=("logit", "gbt"), help="classifier (overrides model)")
        p.add_argument("--horizon", type=int, help="prediction window in years (overrides horizon_k)")

    for name in ("synth", "cv", "train", "explain"):
        common(sub.add_parser(name))
    surv = sub.add_parser("survival")
    surv.add_argument("action", choices=("fit", "eval", "screen", "curves", "materials"))
    common(surv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = RunConfig.load(args.config).override(
            out_dir=args.out, seed=args.seed, threads=args.threads, model=args.model, horizon_k=args.horizon
        )
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "cv":
            return cmd_cv(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "explain":
            return cmd_explain(cfg)
        return cmd_survival(cfg, args.action)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataValidationError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, NotFittedError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE if isinstance(exc, ConvergenceError) else EXIT_CONFIG
    except PipeRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
