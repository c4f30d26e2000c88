"""Config-driven experiment harness: data, replicated runs, sweeps, reports.

One TOML config describes one experiment: a data source (a synthetic
benchmark distribution or a CSV file with a column schema), a model recipe,
optional post-hoc corrections, evaluation settings, and an optional sweep
grid (a cartesian product of config-path overrides).  Each sweep point is
trained ``replicates`` times with derived seeds; per-replicate metric rows
plus independently computed oracle rows are aggregated into mean/stddev
tables and emitted as json-lines, CSV, or markdown.

Everything is deterministic given the config: replicate seeds are derived
by hashing, synthetic datasets are shared across sweep points within a
replicate, and emitted files are byte-stable (wall-clock timestamps are
kept on the in-memory report but never serialized).
"""

from __future__ import annotations

import copy
import csv as csv_mod
import functools
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover - environment dependent
    import tomli as tomllib

from . import metrics as metrics_mod
from . import oracles, posthoc
from .regressors import (
    ArchSpec,
    Dataset,
    FeatureField,
    OptimizerSpec,
    RegressorSpec,
    SharingPlan,
    TrainingError,
    train,
)
from .synthdata import DISTRIBUTION_IDS, RngStream, get_distribution, sample
from .transforms import TargetTransform

__all__ = [
    "ConfigError",
    "CsvError",
    "ColumnSpec",
    "CsvSchema",
    "load_csv",
    "load_config",
    "parse_config_dict",
    "ExperimentConfig",
    "ReplicateRow",
    "AggregateRow",
    "RunReport",
    "run_experiment",
    "emit_report",
    "load_report",
    "oracle_table",
]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


class CsvError(ValueError):
    """Malformed dataset file; message names the line and column."""


def _derive(seed: int, *labels) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & ((1 << 64) - 1)).to_bytes(8, "little"))
    for lab in labels:
        h.update(str(lab).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


# ---------------------------------------------------------------------------
# CSV ingestion


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str  # categorical | continuous | target
    buckets: int = 32  # hash buckets (categorical)
    bins: int = 8  # quantile bins (continuous)

    def __post_init__(self):
        if self.role not in ("categorical", "continuous", "target"):
            raise ConfigError(f"unknown column role {self.role!r}")
        if self.role == "categorical" and self.buckets < 1:
            raise ConfigError("categorical columns need buckets >= 1")
        if self.role == "continuous" and self.bins < 2:
            raise ConfigError("continuous columns need bins >= 2")


@dataclass(frozen=True)
class CsvSchema:
    columns: tuple

    def __post_init__(self):
        targets = [c for c in self.columns if c.role == "target"]
        if len(targets) != 1:
            raise ConfigError(f"schema must declare exactly one target column, got {len(targets)}")

    @property
    def target(self) -> ColumnSpec:
        return next(c for c in self.columns if c.role == "target")

    @property
    def features(self) -> tuple:
        return tuple(c for c in self.columns if c.role != "target")


def _hash_bucket(values, buckets: int) -> np.ndarray:
    out = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        digest = hashlib.blake2b(str(v).encode("utf-8"), digest_size=8).digest()
        out[i] = int.from_bytes(digest, "little") % buckets
    return out


def _parse_csv_columns(path, schema: CsvSchema) -> dict:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv_mod.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvError(f"{path}: empty file") from None
        col_idx = {}
        for col in schema.columns:
            if col.name not in header:
                raise CsvError(f"{path}: missing column {col.name!r}")
            col_idx[col.name] = header.index(col.name)
        raw: dict[str, list] = {c.name: [] for c in schema.columns}
        numeric = {c.name for c in schema.columns if c.role in ("continuous", "target")}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            for col in schema.columns:
                cell = row[col_idx[col.name]]
                if col.name in numeric:
                    try:
                        raw[col.name].append(float(cell))
                    except ValueError:
                        raise CsvError(
                            f"{path}: line {lineno}, column {col.name!r}: "
                            f"cannot parse {cell!r} as a number") from None
                else:
                    raw[col.name].append(cell)
    n = len(raw[schema.target.name])
    if n == 0:
        raise CsvError(f"{path}: no data rows")
    return raw


def load_csv(path, schema: CsvSchema, fit_rows: np.ndarray | None = None):
    """Parse a CSV into a bucketized Dataset.

    Categorical cells hash to stable 64-bit bucket ids; continuous cells map
    to quantile bins whose edges are computed on ``fit_rows`` (default: all
    rows) and returned in the provenance dict so evaluation reuses the exact
    same binning.
    """
    raw = _parse_csv_columns(path, schema)
    n = len(raw[schema.target.name])
    fit = np.arange(n) if fit_rows is None else np.asarray(fit_rows)
    feats = []
    fields = []
    provenance: dict[str, list] = {}
    for col in schema.features:
        if col.role == "categorical":
            feats.append(_hash_bucket(raw[col.name], col.buckets))
            fields.append(FeatureField(col.name, "categorical", col.buckets))
        else:
            vals = np.asarray(raw[col.name], dtype=np.float64)
            qs = np.arange(1, col.bins) / col.bins
            edges = np.quantile(vals[fit], qs)
            provenance[col.name] = [float(e) for e in edges]
            feats.append(np.searchsorted(edges, vals, side="right").astype(np.int64))
            fields.append(FeatureField(col.name, "continuous", col.bins))
    features = np.stack(feats, axis=1) if feats else np.zeros((n, 0), dtype=np.int64)
    targets = np.asarray(raw[schema.target.name], dtype=np.float64)
    return Dataset(features=features, targets=targets, fields=tuple(fields)), provenance


# ---------------------------------------------------------------------------
# configuration


_DEFAULT_EVAL = {"bins": 0, "top_fraction": 1.0, "pivot": "", "metrics": None}


@dataclass
class ExperimentConfig:
    """Validated view over the raw config dict (which sweeps mutate)."""

    raw: dict
    name: str
    replicates: int
    axes: list
    path_dir: Path | None = None

    @property
    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_config_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if "experiment" not in raw or "data" not in raw or "model" not in raw:
        raise ConfigError("config needs [experiment], [data], and [model] sections")
    exp = raw["experiment"]
    name = exp.get("name")
    if not name:
        raise ConfigError("experiment.name is required")
    replicates = int(exp.get("replicates", 10 if raw["data"].get("source") == "synthetic" else 5))
    if replicates < 1:
        raise ConfigError("experiment.replicates must be >= 1")
    if exp.get("on_divergence", "raise") not in ("raise", "record"):
        raise ConfigError("experiment.on_divergence must be 'raise' or 'record'")
    axes = raw.get("sweep", {}).get("axes", [])
    for ax in axes:
        if "path" not in ax or "values" not in ax or not ax["values"]:
            raise ConfigError("each sweep axis needs a path and a non-empty values list")
    src = raw["data"].get("source")
    if src not in ("synthetic", "csv"):
        raise ConfigError("data.source must be 'synthetic' or 'csv'")
    if src == "synthetic":
        dist = raw["data"].get("distribution")
        swept = any(ax["path"] == "data.distribution" for ax in axes)
        if not swept and dist not in DISTRIBUTION_IDS:
            raise ConfigError(f"data.distribution must be one of {DISTRIBUTION_IDS}")
        if int(raw["data"].get("n", 0)) < 1:
            raise ConfigError("data.n must be >= 1")
    else:
        if not raw["data"].get("path"):
            raise ConfigError("data.path is required for csv sources")
        _schema_from_config(raw["data"])  # validates
    cfg = ExperimentConfig(raw=raw, name=str(name), replicates=replicates, axes=axes,
                           path_dir=base_dir)
    _build_point_spec(cfg.raw, fields=(), replicate_seed=0)  # base model must validate
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config_dict(raw, base_dir=path.parent)


def _schema_from_config(data_cfg: dict) -> CsvSchema:
    cols = data_cfg.get("columns", [])
    if not cols:
        raise ConfigError("csv data needs [[data.columns]] entries")
    specs = []
    for c in cols:
        try:
            specs.append(ColumnSpec(name=c["name"], role=c["role"],
                                    buckets=int(c.get("buckets", 32)), bins=int(c.get("bins", 8))))
        except KeyError as exc:
            raise ConfigError(f"column entry missing key {exc}") from None
    return CsvSchema(columns=tuple(specs))


def _set_path(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _sweep_points(cfg: ExperimentConfig) -> list:
    points = [{}]
    for ax in cfg.axes:
        points = [dict(pt, **{ax["path"]: v}) for pt in points for v in ax["values"]]
    return points


def _build_point_spec(raw: dict, fields: tuple, replicate_seed: int) -> RegressorSpec:
    m = raw["model"]
    try:
        transform = TargetTransform(kind=m.get("transform", "log1p"),
                                    slope=float(m.get("slope", 0.5)))
        arch_cfg = m.get("architecture", {})
        arch = ArchSpec(
            features=fields,
            embedding_dim=int(arch_cfg.get("embedding_dim", 4)),
            mlp_dims=tuple(int(d) for d in arch_cfg.get("mlp_dims", (16, 12, 8))),
            sharing=SharingPlan.parse(str(arch_cfg.get("sharing", "none"))),
        )
        opt_cfg = m.get("optimizer", {})
        opt = OptimizerSpec(kind=opt_cfg.get("kind", "sgd"), lr=float(opt_cfg.get("lr", 0.04)),
                            decay=float(opt_cfg.get("decay", 0.9)),
                            eps=float(opt_cfg.get("eps", 1e-8)))
        return RegressorSpec(
            scheme=m.get("scheme", "transun"),
            transform=transform,
            point_loss=m.get("point_loss", "mse"),
            kappa=m.get("kappa", "inv_abs_inverse"),
            epsilon=float(m.get("epsilon", 1.0)),
            architecture=arch,
            optimizer=opt,
            batch_size=int(m.get("batch_size", 1024)),
            epochs=int(m.get("epochs", 1)),
            seed=replicate_seed,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


# ---------------------------------------------------------------------------
# report containers


@dataclass
class ReplicateRow:
    point: dict
    replicate: int
    status: str  # ok | diverged
    metrics: dict = field(default_factory=dict)
    bins: list = field(default_factory=list)
    error: str = ""


@dataclass
class AggregateRow:
    point: dict
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class RunReport:
    name: str
    config_digest: str
    axes: list
    meta: dict
    rows: list
    aggregates: list
    created_at: float = 0.0  # provenance only; never serialized

    def recompute_aggregates(self) -> list:
        return _aggregate(self.rows, self.axes)


def _aggregate(rows: list, axes: list) -> list:
    groups: dict = {}
    order: list = []
    for row in rows:
        key = tuple(row.point.get(a) for a in axes)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)
    out = []
    for key in order:
        rws = [r for r in groups[key] if r.status == "ok"]
        point = dict(zip(axes, key))
        names = sorted({k for r in rws for k in r.metrics})
        for name in names:
            vals = np.array([r.metrics[name] for r in rws if name in r.metrics], dtype=np.float64)
            if vals.size == 0:
                continue
            # barely-surviving runs can leave astronomically large (finite)
            # loss diagnostics whose variance overflows; an inf std is the
            # honest aggregate for those, so only the warning is silenced
            with np.errstate(over="ignore"):
                std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
                out.append(AggregateRow(point=point, metric=name, mean=float(np.mean(vals)),
                                        std=std, n=int(vals.size)))
        n_div = sum(1 for r in groups[key] if r.status != "ok")
        out.append(AggregateRow(point=point, metric="diverged_runs", mean=float(n_div),
                                std=0.0, n=len(groups[key])))
    return out


# ---------------------------------------------------------------------------
# single-run machinery


@functools.lru_cache(maxsize=None)
def _population_sre_cached(dist_id: str, t_kind: str, slope: float, scheme: str) -> float:
    t = TargetTransform(kind=t_kind, slope=slope)
    key = "tmse" if scheme == "tmse" else ("s1" if scheme == "scheme_s1" else "transun")
    return oracles.population_sre(dist_id, t, key).value


def _oracle_rows(spec: RegressorSpec, y: np.ndarray, dist_id: str | None) -> dict:
    out: dict[str, float] = {}
    t = spec.transform
    if spec.scheme == "tmse":
        out["oracle_prediction"] = oracles.tmse_prediction(y, t).value
    elif spec.scheme == "scheme_s1":
        out["oracle_prediction"] = oracles.s1_limit(y).value
    elif spec.scheme == "scheme_s0":
        out["oracle_prediction"] = oracles.scheme_prediction_optimum(y, t, "s0").value
    else:
        opt = oracles.gts_optimum(y, t, spec.point_loss, spec.kappa, spec.epsilon)
        out["oracle_prediction"] = opt.y_hat
        out["oracle_f_star"] = opt.f_star
        out["oracle_z_star"] = opt.z_star
    if dist_id is not None:
        out["oracle_population_sre"] = _population_sre_cached(
            dist_id, t.kind, t.slope, spec.scheme)
    return out


def _evaluate_rows(preds, targets, true_mean, eval_cfg, kappa, xauc_seed) -> tuple:
    rep = metrics_mod.evaluate(
        preds, targets, true_mean=true_mean, bins=int(eval_cfg.get("bins", 0)),
        kappa=kappa, xauc_seed=xauc_seed)
    flat = rep.as_dict()
    flat["prediction_mean"] = float(np.mean(preds))
    bins = [
        {"bin": i, "lo": b.lo, "hi": b.hi, "count": b.count, "signed_tre": b.signed_tre,
         "mean_kappa": b.mean_kappa}
        for i, b in enumerate(rep.bins)
    ]
    top_frac = float(eval_cfg.get("top_fraction", 1.0))
    if not 0.0 < top_frac <= 1.0:
        raise ConfigError("eval.top_fraction must be in (0, 1]")
    if top_frac < 1.0:
        order = np.argsort(-np.asarray(targets), kind="stable")  # ties: earlier rows first
        k = max(2, int(round(top_frac * len(order))))
        sel = order[:k]
        top = metrics_mod.evaluate(np.asarray(preds)[sel], np.asarray(targets)[sel],
                                   true_mean=None, xauc_seed=xauc_seed)
        for key, val in top.as_dict().items():
            flat[f"top.{key}"] = val
    return flat, bins


def _run_replicate(raw: dict, axes: list, points: list, replicate: int) -> list:
    """All sweep points for one replicate; datasets shared across points."""
    rows: list[ReplicateRow] = []
    data_cache: dict = {}
    on_div = raw["experiment"].get("on_divergence", "raise")
    for point in points:
        cfg = copy.deepcopy(raw)
        for path, value in point.items():
            _set_path(cfg, path, value)
        data_cfg = cfg["data"]
        try:
            if data_cfg["source"] == "synthetic":
                dist_id = data_cfg["distribution"]
                n = int(data_cfg["n"])
                key = ("synthetic", dist_id, n)
                if key not in data_cache:
                    rng = RngStream(_derive(int(data_cfg.get("seed", 0)), dist_id, n, replicate))
                    data_cache[key] = Dataset.fixed_x(sample(dist_id, n, rng))
                train_ds = eval_ds = data_cache[key]
                calib_ds = None
                true_mean = get_distribution(dist_id).true_mean
            else:
                dist_id = None
                true_mean = None
                key = ("csv", data_cfg["path"])
                if key not in data_cache:
                    data_cache[key] = _load_csv_source(data_cfg)
                train_ds, eval_ds, calib_ds = data_cache[key]
            corr_cfg = cfg.get("corrections", {})
            kinds = list(corr_cfg.get("kinds", []))
            fit_split = corr_cfg.get("fit_split", "holdout")
            if fit_split not in ("holdout", "train"):
                raise ConfigError("corrections.fit_split must be 'holdout' or 'train'")
            if kinds and fit_split == "holdout" and calib_ds is None:
                frac = float(corr_cfg.get("holdout_fraction", 0.2))
                if not 0.0 < frac < 1.0:
                    raise ConfigError("corrections.holdout_fraction must be in (0,1)")
                perm = RngStream(_derive(int(data_cfg.get("seed", 0)), "calib",
                                         replicate)).permutation(len(train_ds))
                n_cal = max(1, int(round(frac * len(train_ds))))
                cal_idx, tr_idx = perm[:n_cal], perm[n_cal:]
                calib_ds = Dataset(train_ds.features[cal_idx], train_ds.targets[cal_idx],
                                   train_ds.fields)
                train_ds = Dataset(train_ds.features[tr_idx], train_ds.targets[tr_idx],
                                   train_ds.fields)
                eval_ds = train_ds
            spec = _build_point_spec(cfg, fields=train_ds.fields,
                                     replicate_seed=_derive(int(cfg["model"].get("seed", 0)),
                                                            "replicate", replicate))
            eval_cfg = dict(_DEFAULT_EVAL, **cfg.get("eval", {}))
            model = train(train_ds, spec)
            preds = model.predict_dataset(eval_ds)
            kappa = model.kappa_of(eval_ds.features)
            xauc_seed = _derive(spec.seed, "xauc")
            flat, bins = _evaluate_rows(preds, eval_ds.targets, true_mean, eval_cfg,
                                        kappa, xauc_seed)
            flat.update(_oracle_rows(spec, train_ds.targets, dist_id))
            if "oracle_prediction" in flat and flat["oracle_prediction"] != 0.0:
                flat["oracle_gap_rel"] = abs(flat["prediction_mean"] - flat["oracle_prediction"]) / abs(flat["oracle_prediction"])
            tail = max(1, len(model.pgr_log) // 10)
            flat["pgr_tail"] = float(np.nanmean(model.pgr_log[-tail:]))
            flat["final_loss"] = float(model.loss_log[-1])
            if spec.architecture.scalar_mode:
                ty = spec.transform.apply_array(train_ds.targets)
                f_val = float(model.point_branch_outputs(np.zeros((1, 0), dtype=np.int64))[0])
                flat["point_loss_trained"] = oracles.point_loss_value(ty, f_val, spec.point_loss)
                f_opt = oracles.point_loss_optimum(ty, spec.point_loss).value
                flat["point_loss_optimum_value"] = oracles.point_loss_value(ty, f_opt, spec.point_loss)
            if kinds:
                fit_ds = calib_ds if fit_split == "holdout" else train_ds
                f_cal = model.point_branch_outputs(fit_ds.features)
                stats = posthoc.fit_correction_stats(f_cal, fit_ds.targets, spec.transform)
                f_eval = model.point_branch_outputs(eval_ds.features)
                for kind in kinds:
                    if kind == "nte":
                        cpred = posthoc.nte_correct(f_eval, stats, spec.transform)
                    elif kind == "smearing":
                        cpred = posthoc.smearing_correct(f_eval, stats, spec.transform)
                    elif kind == "sir":
                        cpred = posthoc.sir_calibrate(
                            spec.transform.safe_invert_array(f_eval), stats)
                    else:
                        raise ConfigError(f"unknown correction kind {kind!r}")
                    crep = metrics_mod.evaluate(cpred, eval_ds.targets, true_mean=true_mean,
                                                xauc_seed=xauc_seed)
                    for key, val in crep.as_dict().items():
                        flat[f"{kind}.{key}"] = val
            rows.append(ReplicateRow(point=point, replicate=replicate, status="ok",
                                     metrics=flat, bins=bins))
        except TrainingError as exc:
            if on_div == "record":
                rows.append(ReplicateRow(point=point, replicate=replicate, status="diverged",
                                         error=str(exc)))
            else:
                raise TrainingError(f"replicate {replicate}, point {point}: {exc}") from exc
        except (ConfigError, CsvError):
            raise
        except Exception as exc:
            raise RuntimeError(f"replicate {replicate}, point {point}: {exc}") from exc
    return rows


def _load_csv_source(data_cfg: dict):
    schema = _schema_from_config(data_cfg)
    path = Path(data_cfg["path"])
    train_fraction = float(data_cfg.get("train_fraction", 1.0))
    if not 0.0 < train_fraction <= 1.0:
        raise ConfigError("data.train_fraction must be in (0, 1]")
    full, _prov = load_csv(path, schema)  # provisional binning to learn row count
    n = len(full)
    if train_fraction < 1.0:
        perm = RngStream(_derive(int(data_cfg.get("seed", 0)), "split")).permutation(n)
        n_train = max(1, int(round(train_fraction * n)))
        train_rows = np.sort(perm[:n_train])
        test_rows = np.sort(perm[n_train:])
    else:
        train_rows = np.arange(n)
        test_rows = np.arange(n)
    full, _prov = load_csv(path, schema, fit_rows=train_rows)  # freeze bins on train rows
    train_ds = Dataset(full.features[train_rows], full.targets[train_rows], full.fields)
    eval_on = data_cfg.get("eval_on", "train")
    if eval_on == "train":
        eval_rows = train_rows
    elif eval_on == "test":
        eval_rows = test_rows
    else:
        raise ConfigError("data.eval_on must be 'train' or 'test'")
    if len(eval_rows) == 0:
        raise ConfigError("evaluation split is empty")
    eval_ds = Dataset(full.features[eval_rows], full.targets[eval_rows], full.fields)
    return train_ds, eval_ds, None


def run_experiment(config: ExperimentConfig, threads: int = 1) -> RunReport:
    """Train/evaluate every (sweep point, replicate) pair and aggregate."""
    points = _sweep_points(config)
    raw = config.raw
    if config.path_dir is not None and raw["data"].get("source") == "csv":
        raw = copy.deepcopy(raw)
        p = Path(raw["data"]["path"])
        if not p.is_absolute():
            raw["data"]["path"] = str((config.path_dir / p).resolve())
    binning: dict = {}
    if raw["data"].get("source") == "csv":
        # freeze the continuous-feature bin edges into the provenance
        schema = _schema_from_config(raw["data"])
        train_fraction = float(raw["data"].get("train_fraction", 1.0))
        fit_rows = None
        if train_fraction < 1.0:
            full, _ = load_csv(raw["data"]["path"], schema)
            perm = RngStream(_derive(int(raw["data"].get("seed", 0)), "split")).permutation(len(full))
            fit_rows = np.sort(perm[: max(1, int(round(train_fraction * len(full))))])
        _, binning = load_csv(raw["data"]["path"], schema, fit_rows=fit_rows)
    reps = list(range(config.replicates))
    if threads > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(_run_replicate, [raw] * len(reps), [config.axes] * len(reps),
                                 [points] * len(reps), reps))
    else:
        chunks = [_run_replicate(raw, config.axes, points, r) for r in reps]
    rows = [row for chunk in chunks for row in chunk]
    report = RunReport(
        name=config.name,
        config_digest=config.digest,
        axes=[ax["path"] for ax in config.axes],
        meta={
            "replicates": config.replicates,
            "data_seed": int(raw["data"].get("seed", 0)),
            "model_seed": int(raw["model"].get("seed", 0)),
            "metrics_selection": raw.get("eval", {}).get("metrics"),
            "pivot": raw.get("eval", {}).get("pivot", ""),
            "binning": binning,
        },
        rows=rows,
        aggregates=[],
        created_at=time.time(),
    )
    report.aggregates = report.recompute_aggregates()
    return report


# ---------------------------------------------------------------------------
# emission


def _selected(report: RunReport, keys) -> list:
    sel = report.meta.get("metrics_selection")
    if sel is None:
        return sorted(keys)
    want = set(sel)
    return sorted(k for k in keys if k in want or k.split(".")[-1] in want)


def _fmt_full(v) -> str:
    if isinstance(v, float):
        return repr(float(v))  # shortest round-trip repr, numpy scalars included
    return str(v)


def emit_report(report: RunReport, fmt: str, out_dir, basename: str | None = None) -> list:
    """Write a report in one format; returns the written paths.

    json-lines carries everything (meta, rows, bins, aggregates) at full
    precision and can be re-rendered later; csv emits wide replicate rows
    plus long-format aggregate and bin tables; markdown renders aggregates
    at 4 decimals with an optional distribution-pivoted grid.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = basename or report.name
    if fmt == "jsonl":
        path = out_dir / f"{base}.jsonl"
        with open(path, "w", encoding="utf-8") as fh:
            meta = {"record": "meta", "name": report.name, "config_digest": report.config_digest,
                    "axes": report.axes, "meta": report.meta}
            fh.write(json.dumps(meta, sort_keys=True) + "\n")
            for row in report.rows:
                fh.write(json.dumps({"record": "row", "point": row.point,
                                     "replicate": row.replicate, "status": row.status,
                                     "error": row.error, "metrics": row.metrics},
                                    sort_keys=True) + "\n")
                for b in row.bins:
                    fh.write(json.dumps({"record": "bin", "point": row.point,
                                         "replicate": row.replicate, **b}, sort_keys=True) + "\n")
            for agg in report.aggregates:
                fh.write(json.dumps({"record": "aggregate", "point": agg.point,
                                     "metric": agg.metric, "mean": agg.mean, "std": agg.std,
                                     "n": agg.n}, sort_keys=True) + "\n")
        return [path]
    if fmt == "csv":
        paths = []
        metric_keys = _selected(report, {k for r in report.rows for k in r.metrics})
        rows_path = out_dir / f"{base}_rows.csv"
        with open(rows_path, "w", newline="", encoding="utf-8") as fh:
            w = csv_mod.writer(fh)
            w.writerow(report.axes + ["replicate", "status"] + metric_keys)
            for row in report.rows:
                w.writerow([row.point.get(a, "") for a in report.axes]
                           + [row.replicate, row.status]
                           + [_fmt_full(row.metrics[k]) if k in row.metrics else ""
                              for k in metric_keys])
        paths.append(rows_path)
        agg_path = out_dir / f"{base}_aggregates.csv"
        with open(agg_path, "w", newline="", encoding="utf-8") as fh:
            w = csv_mod.writer(fh)
            w.writerow(report.axes + ["metric", "mean", "std", "n"])
            for agg in report.aggregates:
                if agg.metric != "diverged_runs" and agg.metric not in metric_keys:
                    continue
                w.writerow([agg.point.get(a, "") for a in report.axes]
                           + [agg.metric, _fmt_full(agg.mean), _fmt_full(agg.std), agg.n])
        paths.append(agg_path)
        if any(row.bins for row in report.rows):
            bins_path = out_dir / f"{base}_bins.csv"
            with open(bins_path, "w", newline="", encoding="utf-8") as fh:
                w = csv_mod.writer(fh)
                w.writerow(report.axes + ["replicate", "bin", "lo", "hi", "count",
                                          "signed_tre", "mean_kappa"])
                for row in report.rows:
                    for b in row.bins:
                        w.writerow([row.point.get(a, "") for a in report.axes]
                                   + [row.replicate, b["bin"], _fmt_full(b["lo"]),
                                      _fmt_full(b["hi"]), b["count"],
                                      _fmt_full(b["signed_tre"]),
                                      "" if b["mean_kappa"] is None else _fmt_full(b["mean_kappa"])])
            paths.append(bins_path)
        return paths
    if fmt == "md":
        path = out_dir / f"{base}.md"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_render_markdown(report))
        return [path]
    raise ConfigError(f"unknown report format {fmt!r} (expected csv, md, or jsonl)")


def _render_markdown(report: RunReport) -> str:
    out = io.StringIO()
    out.write(f"# {report.name}\n\n")
    out.write(f"config digest: `{report.config_digest[:16]}`, replicates: {report.meta.get('replicates')}\n\n")
    pivot_metric = report.meta.get("pivot") or ""
    dist_axis = "data.distribution"
    if pivot_metric and dist_axis in report.axes:
        dists = []
        method_axes = [a for a in report.axes if a != dist_axis]
        cells: dict = {}
        method_labels: list = []
        for agg in report.aggregates:
            if agg.metric != pivot_metric:
                continue
            d = agg.point.get(dist_axis)
            label = ", ".join(f"{a.split('.')[-1]}={agg.point.get(a)}" for a in method_axes) or "model"
            if d not in dists:
                dists.append(d)
            if label not in method_labels:
                method_labels.append(label)
            cells[(label, d)] = agg.mean
        out.write(f"## {pivot_metric} (mean over replicates)\n\n")
        out.write("| method | " + " | ".join(str(d) for d in dists) + " |\n")
        out.write("|" + "---|" * (len(dists) + 1) + "\n")
        for label in method_labels:
            vals = [cells.get((label, d)) for d in dists]
            out.write("| " + label + " | "
                      + " | ".join("" if v is None else f"{v:.4f}" for v in vals) + " |\n")
        out.write("\n")
    metric_keys = set(_selected(report, {a.metric for a in report.aggregates}))
    out.write("## aggregates\n\n")
    header = [a.split(".")[-1] for a in report.axes] + ["metric", "mean", "std", "n"]
    out.write("| " + " | ".join(header) + " |\n")
    out.write("|" + "---|" * len(header) + "\n")
    for agg in report.aggregates:
        if agg.metric not in metric_keys and agg.metric != "diverged_runs":
            continue
        out.write("| " + " | ".join(str(agg.point.get(a, "")) for a in report.axes)
                  + f" | {agg.metric} | {agg.mean:.4f} | {agg.std:.4f} | {agg.n} |\n")
    return out.getvalue()


def load_report(path) -> RunReport:
    """Rebuild a RunReport from its json-lines emission."""
    rows: list[ReplicateRow] = []
    aggregates: list[AggregateRow] = []
    meta_rec = None
    row_index: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            kind = rec.get("record")
            if kind == "meta":
                meta_rec = rec
            elif kind == "row":
                row = ReplicateRow(point=rec["point"], replicate=rec["replicate"],
                                   status=rec["status"], metrics=rec["metrics"],
                                   error=rec.get("error", ""))
                rows.append(row)
                row_index[(json.dumps(rec["point"], sort_keys=True), rec["replicate"])] = row
            elif kind == "bin":
                key = (json.dumps(rec["point"], sort_keys=True), rec["replicate"])
                b = {k: rec[k] for k in ("bin", "lo", "hi", "count", "signed_tre", "mean_kappa")}
                row_index[key].bins.append(b)
            elif kind == "aggregate":
                aggregates.append(AggregateRow(point=rec["point"], metric=rec["metric"],
                                               mean=rec["mean"], std=rec["std"], n=rec["n"]))
    if meta_rec is None:
        raise ConfigError(f"{path}: not a report file (no meta record)")
    return RunReport(name=meta_rec["name"], config_digest=meta_rec["config_digest"],
                     axes=meta_rec["axes"], meta=meta_rec["meta"], rows=rows,
                     aggregates=aggregates)


# ---------------------------------------------------------------------------
# oracle table (CLI verb)


def oracle_table(dists=None, transforms=("linear", "log1p", "square"),
                 schemes=("tmse", "transun", "s1")) -> str:
    """Markdown table of population-level signed relative errors."""
    dists = list(dists or DISTRIBUTION_IDS)
    out = io.StringIO()
    out.write("| scheme | transform | " + " | ".join(dists) + " |\n")
    out.write("|" + "---|" * (len(dists) + 2) + "\n")
    for scheme in schemes:
        for t_kind in transforms:
            t = TargetTransform(kind=t_kind)
            vals = [oracles.population_sre(d, t, scheme).value for d in dists]
            out.write(f"| {scheme} | {t.label} | "
                      + " | ".join(f"{v:.4f}" for v in vals) + " |\n")
    return out.getvalue()
