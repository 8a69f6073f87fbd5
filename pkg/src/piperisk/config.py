"""Flat ``key = value`` run configuration shared by every CLI command.

Blank lines and ``#`` comments are ignored. Unknown keys are rejected and
every key has a default (see ``DEFAULTS``); an empty value means "use the
default" or "derive it from the data" where noted.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .balance import SmoteConfig
from .boosting import GbtParams
from .errors import ConfigError
from .synth import EFFECT_NAMES, MATERIALS, GeneratorConfig, _default_effects, _default_mix

# key -> (default, description)
DEFAULTS: dict[str, tuple[object, str]] = {
    "data_dir": ("data", "directory holding inventory.csv, failures.csv, operations.csv"),
    "inventory": ("", "inventory CSV path (empty: <data_dir>/inventory.csv)"),
    "failures": ("", "failures CSV path (empty: <data_dir>/failures.csv)"),
    "operations": ("", "operations CSV path (empty: <data_dir>/operations.csv)"),
    "out_dir": ("out", "directory for reports and model files"),
    "seed": (0, "seed for every stochastic step"),
    "threads": (0, "worker threads (0: all available cores)"),
    # synthetic panel
    "n_pipes": (20_000, "pipes in the synthetic panel"),
    "year_start": (2004, "first snapshot year"),
    "year_end": (2019, "last snapshot year"),
    "base_rate": (0.01, "mean annual failure probability"),
    "history_years": (5, "simulated years before the first snapshot"),
    "split_probability": (0.0, "annual probability that a pipe is replaced by a child segment"),
    **{f"effect_{k}": (v, f"planted effect of {k}") for k, v in _default_effects().items()},
    **{f"mix_{k}": (v, f"share of material {k}") for k, v in _default_mix().items()},
    # classification
    "model": ("gbt", "classifier: logit or gbt"),
    "horizon_k": (4, "prediction window in years"),
    "gap": ("", "years between training and validation snapshots (empty: horizon_k)"),
    "n_folds": (5, "temporal CV folds"),
    "test_year": ("", "test snapshot year (empty: last year minus horizon_k)"),
    "threshold_step": (0.01, "threshold grid spacing"),
    "horizon_sweep": ("", "comma-separated horizons for the sweep report (empty: no sweep)"),
    "threshold": (0.5, "decision threshold used by train when no CV ran"),
    "lambda_l1": (1e-3, "logit L1 penalty"),
    "n_trees": (200, "boosting rounds"),
    "max_depth": (4, "tree depth"),
    "learning_rate": (0.1, "shrinkage"),
    "lambda_leaf": (1.0, "L2 penalty on leaf weights"),
    "gamma": (0.0, "minimum split gain"),
    "min_child_weight": (1.0, "minimum hessian sum per child"),
    "smote": (True, "oversample failures with SMOTE"),
    "smote_k": (5, "SMOTE neighbours"),
    "smote_ratio": (1.0, "target minority/majority ratio after SMOTE"),
    "model_path": ("", "model file for explain (empty: <out_dir>/model.json)"),
    "dump_attributions": (False, "explain also writes per-row SHAP values"),
    # survival
    "surv_alpha": (0.5, "elastic-net mixing"),
    "surv_lambda": ("", "fixed Cox penalty (empty: choose on the held-out path)"),
    "surv_n_lambda": (20, "points on the penalty path"),
    "surv_lambda_ratio": (1e-3, "smallest/largest penalty on the path"),
    "surv_test_fraction": (0.3, "held-out share for c-index and the screen"),
    "surv_years_ahead": (2, "material summary horizon: years after the last snapshot"),
    "surv_sample": (500, "pipes drawn for survival_curves.csv"),
    "surv_time_max": (100, "longest time on the survival and Brier grid"),
    "screen_lambda": (1e-4, "penalty for single-covariate screening fits"),
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key][0]
    text = raw.strip()
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ConfigError(f"{key}: expected true/false, got {raw!r}")
        return _BOOL[text.lower()]
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return text


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key):
        return self.values[key]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({k: v for k, (v, _) in DEFAULTS.items()})

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls.defaults()
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if raw != "":
                cfg.values[key] = _coerce(key, raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(text)

    def override(self, **kwargs) -> "RunConfig":
        values = dict(self.values)
        for k, v in kwargs.items():
            if v is not None:
                values[k] = v
        out = RunConfig(values)
        out.validate()
        return out

    def validate(self) -> None:
        v = self.values
        for key in ("n_pipes", "n_folds", "horizon_k", "smote_k", "surv_n_lambda", "surv_sample", "surv_time_max"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1, got {v[key]}")
        for key in ("threads", "history_years", "surv_years_ahead"):
            if v[key] < 0:
                raise ConfigError(f"{key} must be >= 0, got {v[key]}")
        if v["model"] not in ("logit", "gbt"):
            raise ConfigError(f"model must be logit or gbt, got {v['model']!r}")
        if not 0 < v["threshold_step"] <= 1:
            raise ConfigError("threshold_step must lie in (0, 1]")
        if not 0 <= v["threshold"] <= 1:
            raise ConfigError("threshold must lie in [0, 1]")
        if not 0 <= v["surv_alpha"] <= 1:
            raise ConfigError("surv_alpha must lie in [0, 1]")
        if not 0 < v["surv_test_fraction"] < 1:
            raise ConfigError("surv_test_fraction must lie in (0, 1)")
        for key in ("gap", "test_year"):
            if v[key] != "" and not isinstance(v[key], int):
                try:
                    v[key] = int(v[key])
                except ValueError:
                    raise ConfigError(f"{key}: expected an integer, got {v[key]!r}") from None
        if v["surv_lambda"] != "" and not isinstance(v["surv_lambda"], float):
            try:
                v["surv_lambda"] = float(v["surv_lambda"])
            except ValueError:
                raise ConfigError(f"surv_lambda: expected a number, got {v['surv_lambda']!r}") from None
        self.horizons()
        # constructing these runs their own range checks
        self.generator()
        self.gbt_params()
        self.smote_config()

    def horizons(self) -> tuple[int, ...]:
        text = self.values["horizon_sweep"]
        if text == "":
            return ()
        try:
            ks = tuple(int(s) for s in str(text).split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"horizon_sweep: expected comma-separated integers, got {text!r}") from None
        if any(k < 1 for k in ks):
            raise ConfigError("horizon_sweep entries must be >= 1")
        return ks

    def generator(self) -> GeneratorConfig:
        v = self.values
        if v["n_pipes"] < 1:
            raise ConfigError(f"n_pipes must be >= 1, got {v['n_pipes']}")
        return GeneratorConfig(
            n_pipes=v["n_pipes"],
            year_range=(v["year_start"], v["year_end"]),
            seed=v["seed"],
            material_mix={m: v[f"mix_{m}"] for m in MATERIALS},
            effect_sizes={k: v[f"effect_{k}"] for k in EFFECT_NAMES},
            base_rate=v["base_rate"],
            history_years=v["history_years"],
            split_probability=v["split_probability"],
        )

    def gbt_params(self) -> GbtParams:
        v = self.values
        return GbtParams(
            n_trees=v["n_trees"],
            max_depth=v["max_depth"],
            learning_rate=v["learning_rate"],
            lambda_leaf=v["lambda_leaf"],
            gamma=v["gamma"],
            min_child_weight=v["min_child_weight"],
        )

    def smote_config(self) -> SmoteConfig:
        v = self.values
        return SmoteConfig(k_neighbors=v["smote_k"], target_ratio=v["smote_ratio"], seed=v["seed"])

    def path(self, key: str, filename: str) -> Path:
        value = self.values[key]
        return Path(value) if value else Path(self.values["data_dir"]) / filename

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    @property
    def n_threads(self) -> int:
        t = self.values["threads"]
        return t if t > 0 else (os.cpu_count() or 1)

    def dump(self) -> str:
        lines = []
        for key, (default, doc) in DEFAULTS.items():
            lines.append(f"# {doc}")
            value = self.values[key]
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"
