"""Seeded synthetic pipe panels with planted failure effects.

Every pipe owns a random substream keyed by ``(seed, pipe index)`` and
draws a fixed number of variates from it, so a pipe's attributes and
history do not depend on how many other pipes are generated. Per year a
pipe fails with probability ``sigmoid(b0 + sum_j effect_j * z_j)`` where
``z_j`` are standardized covariates measured at the end of the previous
year. A failure adds to the pipe's failure history (entering the index as
``log1p(count)``) and triggers a repair operation in the same year, so both
feed later risk. ``b0`` is set by bisection so the mean annual hazard over
the panel years equals ``base_rate``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, FingerprintMismatchError
from .ingest import write_panel
from .panel import INVENTORY_COLUMNS, PanelDataset, build_panel
from .survival import SurvivalRecords

MATERIALS = ("FD", "FG", "PEAMC", "AG", "OTHER")
DIAMETERS = (60.0, 80.0, 100.0, 150.0, 300.0, 600.0)
DIAMETER_WEIGHTS = (0.2, 0.3, 0.25, 0.15, 0.07, 0.03)
CITIES = ("C01", "C02", "C03", "C04", "C05", "C06")
TRAFFIC = ("low", "medium", "high")
EFFECT_NAMES = ("age", "aspect_ratio", "material_FD", "failure_history", "pipe_operations", "pressure")

# per-pipe variate layout
_N_STATIC_U = 16
_N_STATIC_Z = 6
_N_YEAR_U = 5  # failure, pipe ops, accessory ops, other ops, split


def _default_mix():
    return {"FD": 0.35, "FG": 0.3, "PEAMC": 0.15, "AG": 0.1, "OTHER": 0.1}


def _default_effects():
    return {
        "age": 1.0,
        "aspect_ratio": -1.0,
        "material_FD": -0.7,
        "failure_history": 0.6,
        "pipe_operations": 0.4,
        "pressure": 0.3,
    }


@dataclass(frozen=True)
class GeneratorConfig:
    n_pipes: int = 20_000
    year_range: tuple[int, int] = (2004, 2019)
    seed: int = 0
    material_mix: dict = field(default_factory=_default_mix)
    effect_sizes: dict = field(default_factory=_default_effects)
    base_rate: float = 0.01
    install_range: tuple[int, int] = (1930, 2003)
    history_years: int = 5  # simulated years before the first snapshot
    split_probability: float = 0.0
    length_sigma: float = 0.5

    def __post_init__(self):
        if self.n_pipes < 1:
            raise ConfigError("n_pipes must be >= 1")
        lo, hi = self.year_range
        if not 1800 <= lo < hi <= 2200:
            raise ConfigError(f"implausible year range {self.year_range}")
        if set(self.material_mix) != set(MATERIALS):
            raise ConfigError(f"material_mix must cover exactly {MATERIALS}")
        w = np.array([self.material_mix[m] for m in MATERIALS], dtype=float)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("material weights must be nonnegative and sum to 1")
        unknown = set(self.effect_sizes) - set(EFFECT_NAMES)
        if unknown:
            raise ConfigError(f"unknown effects {sorted(unknown)}")
        if not 0 < self.base_rate <= 0.05:
            raise ConfigError("base_rate must lie in (0, 0.05]")
        ilo, ihi = self.install_range
        if not ilo <= ihi < lo:
            raise ConfigError("install years must precede the first snapshot year")
        if self.history_years < 0 or not 0 <= self.split_probability < 1:
            raise ConfigError("history_years must be >= 0 and split_probability in [0, 1)")

    def effect(self, name: str) -> float:
        return float(self.effect_sizes.get(name, 0.0))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["year_range"] = list(self.year_range)
        d["install_range"] = list(self.install_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        for key in ("year_range", "install_range"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        return cls(**d)

    def fingerprint(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _draws(seed: int, n_pipes: int, n_u: int, n_z: int):
    u = np.empty((n_pipes, n_u))
    z = np.empty((n_pipes, n_z))
    for i in range(n_pipes):
        rng = np.random.default_rng([seed, i])
        u[i] = rng.random(n_u)
        z[i] = rng.standard_normal(n_z)
    return u, z


def _pick(u, choices, weights):
    cdf = np.cumsum(weights) / np.sum(weights)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(choices) - 1)
    return np.asarray(choices, dtype=object)[idx]


def _poisson(u, lam, cap=20):
    """Inverse-CDF Poisson draws from uniforms."""
    k = np.arange(cap + 1)
    log_pmf = -lam + k * np.log(lam) - np.cumsum(np.concatenate([[0.0], np.log(k[1:])]))
    cdf = np.cumsum(np.exp(log_pmf))
    return np.minimum(np.searchsorted(cdf, u, side="right"), cap).astype(np.float64)


def _sigmoid(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


@dataclass
class Truth:
    fingerprint: str
    coefficients: dict
    intercept: float
    standardization: dict
    risk: pd.Series  # mean linear index over the panel years, by pipe id

    def to_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "coefficients": dict(self.coefficients),
            "intercept": self.intercept,
            "standardization": self.standardization,
            "risk": {str(k): float(v) for k, v in self.risk.items()},
        }


@dataclass
class SynthResult:
    panel: PanelDataset
    truth: Truth
    config: GeneratorConfig


def _static_attributes(cfg: GeneratorConfig, u, z):
    n = cfg.n_pipes
    ilo, ihi = cfg.install_range
    length = np.round(np.exp(np.log(80.0) + cfg.length_sigma * z[:, 0]), 1)
    length = np.maximum(length, 1.0)
    extended = u[:, 3] < 0.1
    original = np.where(extended, np.round(length * (1.2 + 0.8 * u[:, 4]), 1), length)
    green = u[:, 7] < 0.3
    transport = u[:, 8] < 0.15
    attrs = pd.DataFrame(
        {
            "pipe_id": [f"P{i:06d}" for i in range(n)],
            "material": _pick(u[:, 0], MATERIALS, [cfg.material_mix[m] for m in MATERIALS]),
            "diameter_mm": _pick(u[:, 1], DIAMETERS, DIAMETER_WEIGHTS).astype(np.float64),
            "length_m": length,
            "original_length_m": original,
            "install_year": np.floor(ilo + (ihi - ilo + 1) * u[:, 2]).astype(np.int64),
            "num_connections": np.floor(8 * u[:, 5]),
            "connections_age0": np.round(1.0 + 29.0 * u[:, 6], 1),
            "num_elements": np.floor(5 * u[:, 9]),
            "elements_age0": np.round(1.0 + 39.0 * u[:, 10], 1),
            "city": _pick(u[:, 11], CITIES, [1.0] * len(CITIES)),
            "network_type": np.where(transport, "transport", "distribution").astype(object),
            "sidewalk_length_m": np.round(length * u[:, 12], 1),
            "ind_greenzone": np.where(green, "1", "0").astype(object),
            "greenzone_length_m": np.where(green, np.round(length * u[:, 13], 1), 0.0),
            "assimilable_to_transport": np.where(transport | (u[:, 14] < 0.05), "yes", "no").astype(object),
            "level_of_traffic": _pick(u[:, 15], TRAFFIC, [0.5, 0.35, 0.15]),
            "underground_gallery": np.where(z[:, 5] > 1.645, "yes", "no").astype(object),
            "pressure": np.round(np.maximum(4.0 + z[:, 1], 0.5), 3),
            "maxvsmin_pressure": np.round(np.abs(1.0 + 0.3 * z[:, 2]), 3),
            "estres_pressure": np.round(np.abs(0.5 + 0.2 * z[:, 3]), 3),
        }
    )
    # keep terrain lengths within the pipe length after rounding
    attrs["sidewalk_length_m"] = np.minimum(attrs["sidewalk_length_m"], length)
    attrs["greenzone_length_m"] = np.minimum(attrs["greenzone_length_m"], length)
    return attrs


def _simulate(cfg, attrs, year_u, b0, scales):
    """Run the yearly hazard; returns failure and operation matrices over all simulated years."""
    lo, hi = cfg.year_range
    sim_years = np.arange(lo - cfg.history_years, hi + 1)
    n = len(attrs)
    install = attrs["install_year"].to_numpy(np.float64)
    static = (
        cfg.effect("aspect_ratio") * scales["aspect_z"]
        + cfg.effect("material_FD") * scales["fd_centered"]
        + cfg.effect("pressure") * scales["pressure_z"]
    )
    history = np.zeros(n)
    ops_prev = np.zeros(n)
    fails = np.zeros((n, len(sim_years)), dtype=np.int8)
    ops = np.zeros((n, len(sim_years), 3))
    hazards = np.zeros((n, len(sim_years)))
    for t, year in enumerate(sim_years):
        u = year_u[:, t * _N_YEAR_U : (t + 1) * _N_YEAR_U]
        age_z = ((year - 1) - install - scales["age_mean"]) / scales["age_std"]
        eta = (
            b0
            + static
            + cfg.effect("age") * age_z
            + cfg.effect("failure_history") * np.log1p(history) / scales["history_scale"]
            + cfg.effect("pipe_operations") * ops_prev / scales["ops_scale"]
        )
        p = _sigmoid(eta)
        hazards[:, t] = eta
        failed = u[:, 0] < p
        fails[:, t] = failed
        history += failed
        pipe_ops = _poisson(u[:, 1], 0.05) + failed
        ops[:, t, 0] = pipe_ops
        ops[:, t, 1] = _poisson(u[:, 2], 0.1)
        ops[:, t, 2] = _poisson(u[:, 3], 0.08)
        ops_prev = pipe_ops
    return sim_years, fails, ops, hazards


def _calibrate(cfg, attrs, year_u, scales):
    lo, _ = cfg.year_range
    target = cfg.base_rate

    def rate(b0):
        years, _, _, eta = _simulate(cfg, attrs, year_u, b0, scales)
        return float(_sigmoid(eta[:, years > lo]).mean())

    a, b = -15.0, 2.0
    for _ in range(60):
        mid = 0.5 * (a + b)
        if rate(mid) < target:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def generate_panel(config: GeneratorConfig = GeneratorConfig()) -> SynthResult:
    cfg = config
    lo, hi = cfg.year_range
    n_sim = hi - lo + 1 + cfg.history_years
    u, z = _draws(cfg.seed, cfg.n_pipes, _N_STATIC_U + n_sim * _N_YEAR_U, _N_STATIC_Z)
    attrs = _static_attributes(cfg, u[:, :_N_STATIC_U], z)
    year_u = u[:, _N_STATIC_U:]

    install = attrs["install_year"].to_numpy(np.float64)
    panel_years = np.arange(lo, hi + 1)
    ages = (panel_years[None, :] - install[:, None]).ravel()
    aspect = attrs["diameter_mm"].to_numpy() / attrs["length_m"].to_numpy()
    pressure = attrs["pressure"].to_numpy()
    fd = (attrs["material"] == "FD").to_numpy(np.float64)
    scales = {
        "age_mean": float(ages.mean()),
        "age_std": float(ages.std()),
        "aspect_z": (aspect - aspect.mean()) / aspect.std(),
        "fd_centered": fd - fd.mean(),
        "pressure_z": (pressure - pressure.mean()) / pressure.std(),
        "history_scale": 0.5,
        "ops_scale": 0.5,
    }
    b0 = _calibrate(cfg, attrs, year_u, scales)
    sim_years, fails, ops, eta = _simulate(cfg, attrs, year_u, b0, scales)

    frames, failures, operations = _assemble(cfg, attrs, year_u, sim_years, fails, ops)
    panel = build_panel(frames, failures, operations)

    in_panel = sim_years > lo
    risk = pd.Series(eta[:, in_panel].mean(axis=1), index=attrs["pipe_id"].to_numpy())
    truth = Truth(
        fingerprint=cfg.fingerprint(),
        coefficients={k: cfg.effect(k) for k in EFFECT_NAMES},
        intercept=float(b0),
        standardization={
            "age_mean": scales["age_mean"],
            "age_std": scales["age_std"],
            "aspect_mean": float(aspect.mean()),
            "aspect_std": float(aspect.std()),
            "pressure_mean": float(pressure.mean()),
            "pressure_std": float(pressure.std()),
            "material_FD_share": float(fd.mean()),
            "history_scale": scales["history_scale"],
            "ops_scale": scales["ops_scale"],
        },
        risk=risk,
    )
    return SynthResult(panel=panel, truth=truth, config=cfg)


def _assemble(cfg, attrs, year_u, sim_years, fails, ops):
    lo, hi = cfg.year_range
    n_years = hi - lo + 1
    n = len(attrs)
    offset = cfg.history_years
    rep = attrs.loc[attrs.index.repeat(n_years)].reset_index(drop=True)
    rep["snapshot_year"] = np.tile(np.arange(lo, hi + 1), n)
    elapsed = rep["snapshot_year"] - lo
    rep["avg_connections_age"] = np.minimum(rep["connections_age0"] + elapsed, rep["snapshot_year"] - rep["install_year"])
    rep["avg_elements_age"] = np.minimum(rep["elements_age0"] + elapsed, rep["snapshot_year"] - rep["install_year"])
    rep["parent_id"] = ""
    ids = np.repeat(attrs["pipe_id"].to_numpy(), n_years)
    fail_ids = np.repeat(attrs["pipe_id"].to_numpy(), len(sim_years)).reshape(n, -1)

    if cfg.split_probability > 0:
        # a split pipe is replaced by a child with its own id from the split year on
        split_u = year_u[:, 4 :: _N_YEAR_U][:, offset : offset + n_years]
        split_at = np.full(n, -1)
        hits = split_u[:, 1:] < cfg.split_probability
        has = hits.any(axis=1)
        split_at[has] = hits[has].argmax(axis=1) + 1
        year_idx = np.tile(np.arange(n_years), n)
        pipe_idx = np.repeat(np.arange(n), n_years)
        child = (split_at[pipe_idx] >= 0) & (year_idx >= split_at[pipe_idx])
        parent_ids = ids.copy()
        child_ids = np.array([f"{p}-S{lo + split_at[i]}" for i, p in enumerate(attrs["pipe_id"])], dtype=object)
        ids = np.where(child, child_ids[pipe_idx], ids)
        rep["parent_id"] = np.where(child, parent_ids, "")
        rep.loc[child, "length_m"] = np.round(rep.loc[child, "length_m"] / 2, 1)
        rep.loc[child, "sidewalk_length_m"] = np.minimum(rep.loc[child, "sidewalk_length_m"], rep.loc[child, "length_m"])
        rep.loc[child, "greenzone_length_m"] = np.minimum(rep.loc[child, "greenzone_length_m"], rep.loc[child, "length_m"])
        for i in np.flatnonzero(has):
            from_t = offset + split_at[i]
            fail_ids[i, from_t:] = child_ids[i]
    rep["pipe_id"] = ids
    frames = rep.loc[:, list(INVENTORY_COLUMNS)]

    fi, ft = np.nonzero(fails)
    failures = pd.DataFrame({"pipe_id": fail_ids[fi, ft], "year": sim_years[ft]})
    rows = []
    for k, kind in enumerate(("pipe", "accessory", "other")):
        oi, ot = np.nonzero(ops[:, offset:, k])
        rows.append(
            pd.DataFrame(
                {
                    "pipe_id": fail_ids[oi, ot + offset],
                    "year": sim_years[ot + offset],
                    "kind": kind,
                    "count": ops[oi, ot + offset, k].astype(np.int64),
                }
            )
        )
    operations = pd.concat(rows, ignore_index=True).sort_values(["pipe_id", "year", "kind"], kind="mergesort")
    return frames, failures, operations.reset_index(drop=True)


def write_synth(result: SynthResult, directory) -> dict[str, Path]:
    directory = Path(directory)
    paths = write_panel(result.panel, directory)
    truth_path = directory / "truth.json"
    doc = result.truth.to_dict()
    doc["config"] = result.config.to_dict()
    truth_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["truth"] = truth_path
    return paths


def planted_truth(truth_file, config: GeneratorConfig | None = None) -> Truth:
    """Load a truth file; with ``config`` given, refuse a file from another run."""
    doc = json.loads(Path(truth_file).read_text(encoding="utf-8"))
    if config is not None and doc.get("fingerprint") != config.fingerprint():
        raise FingerprintMismatchError(
            f"truth file fingerprint {doc.get('fingerprint')!r} does not match config {config.fingerprint()!r}"
        )
    return Truth(
        fingerprint=doc["fingerprint"],
        coefficients={k: float(v) for k, v in doc["coefficients"].items()},
        intercept=float(doc["intercept"]),
        standardization=doc["standardization"],
        risk=pd.Series(doc["risk"], dtype=np.float64),
    )


def generate_survival_records(
    n: int = 5000,
    effects=(1.0, -0.8, 0.6, -0.4, 0.3),
    n_noise: int = 3,
    seed: int = 0,
    shape: float = 2.0,
    scale: float = 50.0,
    censor_max: float = 120.0,
) -> tuple[SurvivalRecords, np.ndarray]:
    """Proportional-hazards records with a Weibull baseline and uniform censoring.

    Covariates are independent standard normals; the first ``len(effects)``
    carry the planted coefficients, the rest are noise. Returns the records
    and the full planted coefficient vector.
    """
    rng = np.random.default_rng(seed)
    beta = np.concatenate([np.asarray(effects, dtype=np.float64), np.zeros(n_noise)])
    x = rng.standard_normal((n, len(beta)))
    t_event = scale * (-np.log(rng.random(n)) / np.exp(x @ beta)) ** (1.0 / shape)
    t_cens = rng.uniform(0.0, censor_max, n)
    t = np.maximum(np.minimum(t_event, t_cens), 1e-6)
    names = [f"x{j}" for j in range(len(beta))]
    records = SurvivalRecords(
        pipe_ids=np.array([f"S{i:06d}" for i in range(n)], dtype=object),
        durations=t,
        events=(t_event <= t_cens).astype(np.int8),
        covariates=x,
        column_names=names,
    )
    return records, beta
