"""Command-line entry point: ``tcomm <command> [options]``.

Every command accepts ``--config FILE`` (JSON). Keys in the file supply
defaults for the matching flags; flags given on the command line win.
Failures print one JSON object on stderr, e.g.
``{"error": "usage", "message": "..."}``, and exit with:

    0  success
    1  runtime failure (bad data file, divergence, I/O)
    2  usage error (unknown flag, missing --seed, bad value)
    3  invalid config file
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from tcomm import attacks, harness, pipelines, signal
from tcomm.errors import ConfigError, TcommError
from tcomm.pipelines import PipelineKind, TrainConfig
from tcomm.rng import make_rng

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3

# hard defaults, applied after the config file and the flags
DEFAULTS = {
    "snr_s": 10.0,
    "snr_c": 10.0,
    "n_samples": 5000,
    "phase_impairment": False,
    "pipeline": "toc",
    "epochs": 100,
    "batch_size": 64,
    "lr": 1e-3,
    "tau": 0.2,
    "theta": math.pi / 5,
    "victim": 0,
    "target": 1,
    "denominator": "victim",
    "pnr_db": 0.0,
    "mode": "targeted",
    "perturber": "fgsm",
    "workers": 1,
    "kind": "csv",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# ---------------------------------------------------------------- parser


def _common(p, seed=True):
    p.add_argument("--config", help="JSON file (or preset name) supplying defaults")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (required)")
    p.add_argument("--out", help="output directory (default: $TCOMM_OUT, else a folder under runs/)")
    p.add_argument("-v", "--verbose", action="store_true", default=None)


def _data_flags(p):
    p.add_argument("--snr-s", type=float, help="sensing SNR in dB")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--phase-impairment", action="store_true", default=None)


def _train_flags(p):
    p.add_argument("--pipeline", choices=[k.value for k in PipelineKind])
    p.add_argument("--snr-c", type=float, help="channel SNR in dB")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--data", help="dataset file from gen-data (default: generate one)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tcomm", description="Task-oriented communication experiments and attacks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a labelled BPSK/QPSK dataset")
    _common(p)
    _data_flags(p)
    p.add_argument("--csv", action="store_true", default=None, help="also write dataset.csv")

    p = sub.add_parser("train", help="train one pipeline and save its weights")
    _common(p)
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("eval", help="clean accuracy of a saved pipeline")
    _common(p)
    p.add_argument("--model", help="directory written by train")
    p.add_argument("--data", help="dataset file from gen-data")

    p = sub.add_parser("attack", help="run an attack")
    asub = p.add_subparsers(dest="attack", required=True, parser_class=_Parser)
    b = asub.add_parser("backdoor", help="poison, retrain and measure trigger success")
    _common(b)
    _data_flags(b)
    _train_flags(b)
    b.add_argument("--tau", type=float, help="poisoned fraction of victim samples")
    b.add_argument("--theta", type=float, help="trigger phase shift in radians")
    b.add_argument("--victim", type=int, choices=(0, 1))
    b.add_argument("--target", type=int, choices=(0, 1))
    b.add_argument("--denominator", choices=("victim", "all"))
    f = asub.add_parser("fgsm", help="evasion attack on a clean model")
    _common(f)
    _data_flags(f)
    _train_flags(f)
    f.add_argument("--model", help="saved pipeline to attack (default: train one)")
    f.add_argument("--pnr-db", type=float, help="perturbation-to-noise ratio in dB")
    f.add_argument("--mode", choices=("targeted", "non_targeted"))
    f.add_argument("--perturber", choices=("fgsm", "gaussian"))
    f.add_argument("--target", type=int, choices=(0, 1))

    p = sub.add_parser("sweep", help="SNR-grid sweep from a config file")
    _common(p, seed=False)
    p.add_argument("--seed", type=int, action="append", dest="seeds", help="override the config seeds (repeatable)")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir", help="reuse trained models across runs")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("report", help="render results as csv, json, svg or table")
    _common(p, seed=False)
    p.add_argument("--results", help="results.json from sweep (default: <out>/results.json)")
    p.add_argument("--kind", choices=("csv", "json", "svg", "table"))
    return parser


# ---------------------------------------------------------------- config merge


def _merge(args) -> dict:
    """Flags over config-file values over DEFAULTS."""
    opts = vars(args).copy()
    cfg_path = opts.pop("config", None)
    file_values = harness.load_config(cfg_path) if cfg_path else {}
    if args.command == "sweep":
        opts["sweep_config"] = file_values
        return opts
    for key, value in file_values.items():
        dest = key.replace("-", "_")
        if dest not in opts or dest in ("command", "attack"):
            raise ConfigError(f"config key {key!r} is not an option of {args.command}")
        if opts[dest] is None:
            opts[dest] = value
    for key, value in DEFAULTS.items():
        if key in opts and opts[key] is None:
            opts[key] = value
    return opts


def _need_seed(opts):
    if opts.get("seed") is None:
        raise UsageError(f"{opts['command']}: --seed is required")


def _out(opts, name) -> Path:
    return Path(opts.get("out") or harness.output_dir(Path("runs") / name))


def _dataset(opts):
    if opts.get("data"):
        return signal.load_dataset(opts["data"])
    return signal.make_dataset(
        signal.SensingConfig(
            n_samples=opts["n_samples"], snr_s=opts["snr_s"], phase_impairment=bool(opts["phase_impairment"]), seed=opts["seed"]
        )
    )


def _train_cfg(opts) -> TrainConfig:
    return TrainConfig(epochs=opts["epochs"], batch_size=opts["batch_size"], lr=opts["lr"], seed=opts["seed"], snr_c=opts["snr_c"])


# ---------------------------------------------------------------- commands


def cmd_gen_data(opts):
    _need_seed(opts)
    ds = _dataset({**opts, "data": None})
    out = _out(opts, "data")
    out.mkdir(parents=True, exist_ok=True)
    signal.save_dataset(ds, out / "dataset.tcds")
    if opts.get("csv"):
        signal.export_csv(ds, out / "dataset.csv")
    _emit({"dataset": str(out / "dataset.tcds"), **ds.counts})


def cmd_train(opts):
    _need_seed(opts)
    ds = _dataset(opts)
    kind = PipelineKind.parse(opts["pipeline"])
    tp = pipelines.train(kind, ds.train_x, ds.train_y, _train_cfg(opts))
    out = _out(opts, "model")
    pipelines.save_pipeline(tp, out)
    acc = pipelines.evaluate(tp, ds.test_x, ds.test_y, make_rng(opts["seed"], "eval_channel")).accuracy
    _emit({"model": str(out), "pipeline": kind.value, "test_accuracy": round(acc, 6)})


def cmd_eval(opts):
    _need_seed(opts)
    if not opts.get("model") or not opts.get("data"):
        raise UsageError("eval: --model and --data are required")
    tp = pipelines.load_pipeline(opts["model"])
    ds = signal.load_dataset(opts["data"])
    rep = pipelines.evaluate(tp, ds.test_x, ds.test_y, make_rng(opts["seed"], "eval_channel"))
    _emit(
        {
            "pipeline": tp.kind.value,
            "accuracy": round(rep.accuracy, 6),
            "per_label": {signal.LABELS[k]: round(rep.per_label_accuracy(k), 6) for k in range(2)},
            "n": rep.n,
        }
    )


def cmd_backdoor(opts):
    _need_seed(opts)
    ds = _dataset(opts)
    kind = PipelineKind.parse(opts["pipeline"])
    cfg = attacks.BackdoorConfig(opts["victim"], opts["target"], opts["theta"], opts["tau"], opts["seed"], opts["denominator"])
    poisoned, mask = attacks.poison_dataset(ds, cfg)
    tp = pipelines.train(kind, poisoned.train_x, poisoned.train_y, _train_cfg(opts))
    rep = attacks.eval_backdoor(tp, ds.test_x, ds.test_y, cfg)
    payload = {
        "pipeline": kind.value,
        "tau": cfg.tau,
        "theta": cfg.theta,
        "poisoned": int(mask.sum()),
        "acc_poisoned_victim": round(rep.acc_poisoned_victim, 6),
        "acc_clean_victim": round(rep.acc_clean_victim, 6),
        "acc_clean_target": round(rep.acc_clean_target, 6),
    }
    _write_json(opts, "backdoor", payload)
    _emit(payload)


def cmd_fgsm(opts):
    _need_seed(opts)
    ds = _dataset(opts)
    if opts.get("model"):
        tp = pipelines.load_pipeline(opts["model"])
    else:
        tp = pipelines.train(PipelineKind.parse(opts["pipeline"]), ds.train_x, ds.train_y, _train_cfg(opts))
    cfg = attacks.EvasionConfig(opts["mode"], opts["pnr_db"], opts["perturber"], opts["target"], opts["seed"])
    snr_s = ds.meta.get("snr_s", opts["snr_s"])
    sigma = signal.noise_sigma(snr_s)
    acc = attacks.eval_evasion(tp, ds.test_x, ds.test_y, cfg, sigma)
    payload = {
        "pipeline": tp.kind.value,
        "perturber": cfg.perturber,
        "mode": cfg.mode,
        "pnr_db": cfg.pnr_db,
        "epsilon": round(attacks.perturbation_size(cfg.pnr_db, sigma), 9),
        "accuracy": round(acc, 6),
    }
    _write_json(opts, "evasion", payload)
    _emit(payload)


def _write_json(opts, name, payload):
    out = _out(opts, name)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def cmd_sweep(opts):
    d = dict(opts["sweep_config"])
    if not d:
        raise UsageError("sweep: --config is required")
    if opts.get("seeds"):
        d["seeds"] = opts["seeds"]
    if opts.get("workers"):
        d["workers"] = opts["workers"]
    if opts.get("epochs"):
        d["train"] = {**d.get("train", {}), "epochs": opts["epochs"]}
    if "seeds" not in d:
        raise UsageError("sweep: seeds must come from the config or --seed")
    cfg = harness.SweepConfig.from_dict(d)
    out = Path(opts.get("out") or harness.output_dir(cfg.output_dir))
    cache = harness.ModelCache(opts.get("cache_dir"))

    def progress(done, total):
        logging.getLogger("tcomm.sweep").info("%d/%d units", done, total)

    res = harness.run_sweep(cfg, cache, progress)
    paths = harness.write_results(res, out)
    _emit(
        {
            "records": len(res.records),
            "expected": harness.expected_record_count(cfg),
            "failures": len(res.failures),
            **{k: str(v) for k, v in paths.items()},
        }
    )
    return EXIT_RUNTIME if res.failures and not res.records else EXIT_OK


def cmd_report(opts):
    out = _out(opts, "sweep")
    src = Path(opts.get("results") or out / "results.json")
    if not src.exists():
        raise FileNotFoundError(f"no results at {src}")
    res = harness.SweepResult.from_json(src.read_text())
    written = harness.render(res, opts["kind"], out)
    if opts["kind"] == "table":
        print(written[0].read_text(), end="")
    _emit({"written": [str(p) for p in written]})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
    ("attack", "backdoor"): cmd_backdoor,
    ("attack", "fgsm"): cmd_fgsm,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        opts = _merge(args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[(args.command, args.attack) if args.command == "attack" else args.command]
    try:
        code = handler(opts)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", str(exc), EXIT_CONFIG)
    except (TcommError, OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
