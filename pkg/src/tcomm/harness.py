"""SNR-grid sweeps, multi-seed aggregation and result files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from tcomm import attacks, pipelines
from tcomm.errors import ConfigError, TrainingDiverged
from tcomm.pipelines import PipelineKind, TrainConfig
from tcomm.rng import make_rng
from tcomm.signal import SensingConfig, make_dataset, noise_sigma
from tcomm.svg import write_line_chart

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
CSV_COLUMNS = ("pipeline", "snr_s_db", "snr_c_db", "seed", "attack", "param", "metric", "value")
PRESET_DIR = Path(__file__).with_name("presets")


def derive_seed(seed: int, *keys) -> int:
    """Stable 63-bit seed from a master seed and arbitrary printable keys."""
    text = ":".join(str(k) for k in (seed, *keys))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


# ---------------------------------------------------------------- attacks


@dataclass(frozen=True)
class AttackSpec:
    """One requested attack; ``kind`` is ``"backdoor"`` or ``"evasion"``."""

    kind: str
    tau: float = 0.2
    theta: float = math.pi / 5
    victim: int = 0
    target: int = 1
    denominator: str = "victim"
    mode: str = "targeted"
    pnr_db: float = 0.0
    perturber: str = "fgsm"

    def __post_init__(self):
        if self.kind not in ("backdoor", "evasion"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        # validates the remaining fields
        if self.kind == "backdoor":
            attacks.BackdoorConfig(self.victim, self.target, self.theta, self.tau, 0, self.denominator)
        else:
            attacks.EvasionConfig(self.mode, self.pnr_db, self.perturber, self.target)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        d = dict(d)
        kind = d.pop("type", d.pop("kind", None))
        allowed = {f.name for f in fields(cls)} - {"kind"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown attack fields {sorted(unknown)}")
        return cls(kind=kind, **d)

    def to_dict(self) -> dict:
        if self.kind == "backdoor":
            keys = ("tau", "theta", "victim", "target", "denominator")
        else:
            keys = ("mode", "pnr_db", "perturber", "target")
        return {"type": self.kind, **{k: getattr(self, k) for k in keys}}

    @property
    def name(self) -> str:
        if self.kind == "backdoor":
            return "backdoor"
        return f"{self.perturber}_{self.mode}"

    @property
    def param(self) -> str:
        if self.kind == "backdoor":
            return f"tau={self.tau:g};theta={self.theta:.6g}"
        return f"pnr_db={self.pnr_db:g}"

    @property
    def metrics(self) -> tuple:
        if self.kind == "backdoor":
            return ("acc_poisoned_victim", "acc_clean_victim", "acc_clean_target")
        return ("accuracy",)


# ---------------------------------------------------------------- config


@dataclass
class SweepConfig:
    pipelines: list
    snr_s_grid: list
    snr_c_grid: list
    seeds: list
    attacks: list = field(default_factory=list)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_samples: int = 5000
    phase_impairment: bool = False
    output_dir: str = "runs/sweep"
    workers: int = 1
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        self.pipelines = [PipelineKind.parse(p) for p in self.pipelines]
        if not self.pipelines or not self.snr_s_grid or not self.snr_c_grid:
            raise ConfigError("pipelines and both SNR grids must be nonempty")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        self.snr_s_grid = [float(v) for v in self.snr_s_grid]
        self.snr_c_grid = [float(v) for v in self.snr_c_grid]
        self.seeds = [int(s) for s in self.seeds]
        self.attacks = [a if isinstance(a, AttackSpec) else AttackSpec.from_dict(a) for a in self.attacks]
        if isinstance(self.train, dict):
            self.train = _train_config(self.train)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        SensingConfig(n_samples=self.n_samples)

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        allowed = {f.name for f in fields(cls)}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown sweep config keys {sorted(unknown)}")
        missing = {"pipelines", "snr_s_grid", "snr_c_grid", "seeds"} - set(d)
        if missing:
            raise ConfigError(f"sweep config lacks {sorted(missing)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train.pop("seed")
        train.pop("snr_c")
        return {
            "version": self.version,
            "pipelines": [p.value for p in self.pipelines],
            "snr_s_grid": self.snr_s_grid,
            "snr_c_grid": self.snr_c_grid,
            "seeds": self.seeds,
            "attacks": [a.to_dict() for a in self.attacks],
            "train": train,
            "n_samples": self.n_samples,
            "phase_impairment": self.phase_impairment,
        }


def _train_config(d: dict) -> TrainConfig:
    allowed = {f.name for f in fields(TrainConfig)} - {"seed", "snr_c"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown train config keys {sorted(unknown)}")
    return TrainConfig(**d)


def load_config(path) -> dict:
    """Read a JSON config; bare names resolve to the shipped presets."""
    p = Path(path)
    if not p.exists():
        candidate = PRESET_DIR / p.name
        if not candidate.exists() and not p.suffix:
            candidate = PRESET_DIR / f"{p.name}.json"
        if not candidate.exists():
            raise ConfigError(f"config file {path} not found")
        p = candidate
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return data


# ---------------------------------------------------------------- model cache


class ModelCache:
    """Trained pipelines keyed by everything that determines their weights.

    Kept in memory, and mirrored to ``directory`` when one is given so that
    later runs (or other subcommands) skip retraining.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        self._mem: dict = {}

    @staticmethod
    def key(kind, data_key, train_cfg: TrainConfig, poison=None) -> str:
        blob = json.dumps([kind.value, data_key, asdict(train_cfg), poison], sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:24]

    def get_or_train(self, key, fit):
        tp = self._mem.get(key)
        if tp is not None:
            return tp
        path = self.directory / key if self.directory else None
        if path is not None and (path / "manifest.json").exists():
            tp = pipelines.load_pipeline(path)
        else:
            tp = fit()
            if path is not None:
                pipelines.save_pipeline(tp, path)
        self._mem[key] = tp
        return tp


# ---------------------------------------------------------------- sweep


@dataclass
class SweepResult:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def sorted(self) -> "SweepResult":
        return SweepResult(sorted(self.records, key=record_key), sorted(self.failures, key=_failure_key), self.config)

    def to_json(self) -> str:
        payload = {"config": self.config, "records": self.records, "failures": self.failures}
        return json.dumps(payload, indent=1, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "SweepResult":
        d = json.loads(text)
        return cls(d["records"], d.get("failures", []), d.get("config", {}))


def record_key(r: dict):
    return (r["pipeline"], r["snr_s_db"], r["snr_c_db"], r["seed"], r["attack"], r["param"], r["metric"])


def _failure_key(f: dict):
    return (f["pipeline"], f["snr_s_db"], f["snr_c_db"], f["seed"], f["attack"], f["param"])


def _record(kind, snr_s, snr_c, seed, attack, param, metric, value):
    return {
        "pipeline": kind.value,
        "snr_s_db": float(snr_s),
        "snr_c_db": float(snr_c),
        "seed": int(seed),
        "attack": attack,
        "param": param,
        "metric": metric,
        "value": float(value),
    }


def _dataset(cfg: SweepConfig, snr_s: float, seed: int):
    return make_dataset(
        SensingConfig(n_samples=cfg.n_samples, snr_s=snr_s, phase_impairment=cfg.phase_impairment, seed=derive_seed(seed, "data", snr_s))
    )


def _train_cfg(cfg: SweepConfig, kind, snr_s, snr_c, seed, tag="clean") -> TrainConfig:
    # the no-channel classifier never sees snr_c, so one model serves the whole row
    if kind in (PipelineKind.NO_CHANNEL, PipelineKind.APPROACH1):
        snr_c = 0.0
    return TrainConfig(**{**asdict(cfg.train), "seed": derive_seed(seed, "train", kind.value, snr_s, snr_c, tag), "snr_c": snr_c})


def run_unit(cfg: SweepConfig, kind, snr_s: float, seed: int, cache: ModelCache | None = None):
    """All snr_c cells of one (pipeline, snr_s, seed) row; returns (records, failures)."""
    cache = cache if cache is not None else ModelCache()
    ds = _dataset(cfg, snr_s, seed)
    data_key = [cfg.n_samples, snr_s, cfg.phase_impairment, seed]
    sigma = noise_sigma(snr_s)
    records, failures = [], []
    for snr_c in cfg.snr_c_grid:
        tcfg = _train_cfg(cfg, kind, snr_s, snr_c, seed)
        eval_seed = derive_seed(seed, "eval", kind.value, snr_s, snr_c)

        def fit(tc=tcfg, x=ds.train_x, y=ds.train_y):
            return pipelines.train(kind, x, y, tc)

        try:
            tp = cache.get_or_train(ModelCache.key(kind, data_key, tcfg), fit)
        except TrainingDiverged as exc:
            failures.append(_failure(kind, snr_s, snr_c, seed, "none", "", exc))
            continue
        acc = pipelines.evaluate(tp, ds.test_x, ds.test_y, make_rng(eval_seed, "eval_channel")).accuracy
        records.append(_record(kind, snr_s, snr_c, seed, "none", "", "accuracy", acc))
        for spec in cfg.attacks:
            try:
                records.extend(_run_attack(cfg, spec, kind, ds, data_key, tp, sigma, snr_s, snr_c, seed, cache))
            except TrainingDiverged as exc:
                failures.append(_failure(kind, snr_s, snr_c, seed, spec.name, spec.param, exc))
    return records, failures


def _failure(kind, snr_s, snr_c, seed, attack, param, exc):
    return {
        "pipeline": kind.value,
        "snr_s_db": float(snr_s),
        "snr_c_db": float(snr_c),
        "seed": int(seed),
        "attack": attack,
        "param": param,
        "error": f"{type(exc).__name__}: {exc}",
        "epoch": getattr(exc, "epoch", None),
    }


def _run_attack(cfg, spec: AttackSpec, kind, ds, data_key, tp, sigma, snr_s, snr_c, seed, cache):
    attack_seed = derive_seed(seed, "attack", kind.value, snr_s, snr_c, spec.name, spec.param)
    if spec.kind == "backdoor":
        bcfg = attacks.BackdoorConfig(spec.victim, spec.target, spec.theta, spec.tau, attack_seed, spec.denominator)
        poisoned, _ = attacks.poison_dataset(ds, bcfg)
        tcfg = _train_cfg(cfg, kind, snr_s, snr_c, seed, tag=spec.param)
        key = ModelCache.key(kind, data_key, tcfg, spec.to_dict())
        ptp = cache.get_or_train(key, lambda: pipelines.train(kind, poisoned.train_x, poisoned.train_y, tcfg))
        rep = attacks.eval_backdoor(ptp, ds.test_x, ds.test_y, bcfg)
        return [_record(kind, snr_s, snr_c, seed, spec.name, spec.param, m, v) for m, v in zip(spec.metrics, rep.as_tuple())]
    ecfg = attacks.EvasionConfig(spec.mode, spec.pnr_db, spec.perturber, spec.target, attack_seed)
    acc = attacks.eval_evasion(tp, ds.test_x, ds.test_y, ecfg, sigma)
    return [_record(kind, snr_s, snr_c, seed, spec.name, spec.param, "accuracy", acc)]


def _units(cfg: SweepConfig):
    return [(kind, s, seed) for kind in cfg.pipelines for s in cfg.snr_s_grid for seed in cfg.seeds]


def _run_unit_star(args):
    cfg, kind, s, seed, cache_dir = args
    return run_unit(cfg, kind, s, seed, ModelCache(cache_dir))


def run_sweep(cfg: SweepConfig, cache: ModelCache | None = None, progress=None) -> SweepResult:
    """Train and evaluate every grid cell; records come back in key order.

    ``progress`` is an optional callable receiving ``(done, total)``.
    """
    units = _units(cfg)
    records, failures = [], []
    if cfg.workers > 1:
        cache_dir = cache.directory if cache is not None else None
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for done, (r, f) in enumerate(pool.map(_run_unit_star, [(cfg, *u, cache_dir) for u in units]), 1):
                records += r
                failures += f
                if progress:
                    progress(done, len(units))
    else:
        cache = cache if cache is not None else ModelCache()
        for done, unit in enumerate(units, 1):
            r, f = run_unit(cfg, *unit, cache=cache)
            records += r
            failures += f
            log.info("unit %d/%d done: %s snr_s=%g seed=%d", done, len(units), unit[0].value, unit[1], unit[2])
            if progress:
                progress(done, len(units))
    for f in failures:
        log.warning("failed cell: %s", f)
    return SweepResult(records, failures, cfg.to_dict()).sorted()


def expected_record_count(cfg: SweepConfig) -> int:
    cells = len(cfg.pipelines) * len(cfg.snr_s_grid) * len(cfg.snr_c_grid) * len(cfg.seeds)
    return cells * (1 + sum(len(a.metrics) for a in cfg.attacks))


# ---------------------------------------------------------------- aggregation

GROUP_FIELDS = ("pipeline", "snr_s_db", "snr_c_db", "seed", "attack", "param", "metric")


def aggregate(records, group_by) -> list[dict]:
    """Mean and sample standard deviation of ``value`` per group.

    Rows are sorted by the group key.
    """
    group_by = tuple(group_by)
    bad = [g for g in group_by if g not in GROUP_FIELDS]
    if bad:
        raise KeyError(f"unknown group fields {bad}")
    groups = defaultdict(list)
    for r in records:
        groups[tuple(r[g] for g in group_by)].append(r["value"])
    if not groups:
        raise ValueError("nothing to aggregate")
    rows = []
    for key in sorted(groups):
        vals = np.asarray(groups[key], dtype=np.float64)
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        rows.append({**dict(zip(group_by, key)), "mean": float(np.mean(vals)), "std": std, "n": int(vals.size)})
    return rows


def select(records, **criteria) -> list[dict]:
    return [r for r in records if all(r[k] == v for k, v in criteria.items())]


# ---------------------------------------------------------------- files


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(records, key=record_key):
        w.writerow(
            [r["pipeline"], f"{r['snr_s_db']:g}", f"{r['snr_c_db']:g}", r["seed"], r["attack"], r["param"], r["metric"], f"{r['value']:.6f}"]
        )
    return buf.getvalue()


def read_records_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0]) != CSV_COLUMNS:
        raise ConfigError(f"unexpected CSV columns {tuple(rows[0])}")
    return [
        {
            "pipeline": r["pipeline"],
            "snr_s_db": float(r["snr_s_db"]),
            "snr_c_db": float(r["snr_c_db"]),
            "seed": int(r["seed"]),
            "attack": r["attack"],
            "param": r["param"],
            "metric": r["metric"],
            "value": float(r["value"]),
        }
        for r in rows
    ]


def summary_csv(records) -> str:
    """Wide table: one row per cell, mean over seeds, one column per attack metric.

    Attack columns appear only when the records contain attacks.
    """
    cols = sorted({(r["attack"], r["param"], r["metric"]) for r in records})
    cells = aggregate(records, ("pipeline", "snr_s_db", "snr_c_db", "attack", "param", "metric"))
    table = defaultdict(dict)
    for row in cells:
        table[(row["pipeline"], row["snr_s_db"], row["snr_c_db"])][(row["attack"], row["param"], row["metric"])] = row["mean"]
    names = ["accuracy" if a == "none" else f"{a}[{p}].{m}" for a, p, m in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pipeline", "snr_s_db", "snr_c_db", *names])
    for key in sorted(table):
        w.writerow([key[0], f"{key[1]:g}", f"{key[2]:g}", *(f"{table[key][c]:.6f}" if c in table[key] else "" for c in cols)])
    return buf.getvalue()


def output_dir(default) -> Path:
    return Path(os.environ.get("TCOMM_OUT") or default)


def write_results(res: SweepResult, directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"json": directory / "results.json", "csv": directory / "results.csv"}
    paths["json"].write_text(res.to_json() + "\n")
    paths["csv"].write_text(records_csv(res.records))
    return paths


# ---------------------------------------------------------------- reports

SERIES_NAMES = {"toc": "TOC", "approach2": "Comm+Class", "nochannel": "No Channel", "approach1": "Approach 1"}


def fig5_series(records, fixed: str, value: float) -> dict:
    """Mean clean accuracy per pipeline along the SNR axis not held ``fixed``."""
    swept = "snr_c_db" if fixed == "snr_s_db" else "snr_s_db"
    rows = aggregate(select(records, attack="none", metric="accuracy"), ("pipeline", fixed, swept))
    series = defaultdict(list)
    for row in rows:
        if row[fixed] == value:
            series[SERIES_NAMES.get(row["pipeline"], row["pipeline"])].append((row[swept], row["mean"]))
    return dict(series)


def table1(records) -> str:
    """Attack results averaged over SNR cells and seeds, as plain text."""
    lines = []
    bd = [r for r in records if r["attack"] == "backdoor"]
    if bd:
        lines.append("backdoor  param                          poisoned_victim  clean_victim  clean_target")
        by = {(row["param"], row["metric"]): row["mean"] for row in aggregate(bd, ("param", "metric"))}
        for param in sorted({p for p, _ in by}, key=_param_order):
            vals = [by.get((param, m), float("nan")) for m in ("acc_poisoned_victim", "acc_clean_victim", "acc_clean_target")]
            lines.append(f"          {param:<30} {vals[0]:>15.3f} {vals[1]:>13.3f} {vals[2]:>13.3f}")
    ev = [r for r in records if r["attack"] not in ("none", "backdoor")]
    if ev:
        if lines:
            lines.append("")
        lines.append("evasion   perturber  pnr_db    targeted  non_targeted")
        by = {(row["attack"], row["param"]): row["mean"] for row in aggregate(ev, ("attack", "param"))}
        for pert in ("fgsm", "gaussian"):
            for param in sorted({p for a, p in by if a.startswith(pert)}, key=_param_order):
                t = by.get((f"{pert}_targeted", param), float("nan"))
                n = by.get((f"{pert}_non_targeted", param), float("nan"))
                lines.append(f"          {pert:<10} {param.split('=')[1]:>6} {t:>11.3f} {n:>13.3f}")
    return "\n".join(lines) + "\n" if lines else ""


def _param_order(param: str):
    head = param.split(";")[0]
    try:
        return (0, float(head.split("=")[1]))
    except (IndexError, ValueError):
        return (1, param)


def render(res: SweepResult, kind: str, directory) -> list[Path]:
    """Write result files of ``kind`` (csv, json, svg or table) under ``directory``."""
    if not res.records:
        raise ValueError("no records to render")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write to {directory}: {exc}") from exc
    written = []
    if kind == "csv":
        written.append(directory / "results.csv")
        written[-1].write_text(records_csv(res.records))
        written.append(directory / "summary.csv")
        written[-1].write_text(summary_csv(res.records))
    elif kind == "json":
        written.append(directory / "results.json")
        written[-1].write_text(res.to_json() + "\n")
    elif kind == "svg":
        clean = select(res.records, attack="none", metric="accuracy")
        if not clean:
            raise ValueError("no clean-accuracy records to plot")
        for fixed, label, swept_label in (("snr_s_db", "SNR_s", "SNR_c (dB)"), ("snr_c_db", "SNR_c", "SNR_s (dB)")):
            for value in sorted({r[fixed] for r in clean}):
                series = fig5_series(clean, fixed, value)
                path = directory / f"accuracy_{fixed.split('_')[1]}_{_fmt_db(value)}.svg"
                written.append(
                    write_line_chart(
                        path, series, title=f"Task accuracy, {label} = {value:g} dB", x_label=swept_label, y_label="Task accuracy"
                    )
                )
    elif kind == "table":
        text = table1(res.records)
        if not text:
            raise ValueError("no attack records for a table")
        written.append(directory / "table1.txt")
        written[-1].write_text(text)
    else:
        raise ValueError(f"unknown render kind {kind!r}")
    return written


def _fmt_db(v: float) -> str:
    return f"{v:g}".replace("-", "m")
