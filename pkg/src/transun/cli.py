"""Command-line entry points.

Verbs:
  synth       sample a synthetic benchmark distribution to CSV
  train       one config-driven training run; saves the parameter file
  experiment  config-driven replicated grid; emits report files
  oracle      print the population oracle table
  report      re-render a stored json-lines report

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .harness import ConfigError, CsvError, emit_report, load_config, load_report, run_experiment
from .regressors import train as train_model
from .synthdata import DISTRIBUTION_IDS, RngStream, sample


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transun",
                                description="bias-free regression under target transformation")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("synth", help="sample a benchmark distribution to CSV")
    sp.add_argument("--dist", required=True, choices=DISTRIBUTION_IDS)
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output CSV path")

    tp = sub.add_parser("train", help="single training run from a config")
    tp.add_argument("--config", required=True)
    tp.add_argument("--seed", type=int, default=None, help="override model seed")
    tp.add_argument("--out", default="out", help="output directory")

    ep = sub.add_parser("experiment", help="config-driven replicated grid")
    ep.add_argument("--config", required=True)
    ep.add_argument("--seed", type=int, default=None, help="override data seed")
    ep.add_argument("--out", default="out", help="output directory")
    ep.add_argument("--format", default="jsonl,csv,md",
                    help="comma-separated subset of jsonl,csv,md")
    ep.add_argument("--threads", type=int, default=1)

    op = sub.add_parser("oracle", help="print the population oracle table")
    op.add_argument("--dist", action="append", default=None, choices=DISTRIBUTION_IDS)
    op.add_argument("--out", default=None, help="write to file instead of stdout")

    rp = sub.add_parser("report", help="re-render a stored json-lines report")
    rp.add_argument("path", help="input .jsonl report")
    rp.add_argument("--format", default="md", help="comma-separated subset of jsonl,csv,md")
    rp.add_argument("--out", default="out", help="output directory")
    return p


def _cmd_synth(args) -> int:
    y = sample(args.dist, args.n, RngStream(args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("target\n")
        fh.writelines(f"{float(v)!r}\n" for v in y)
    print(f"wrote {args.n} rows from {args.dist} to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    raw = copy.deepcopy(cfg.raw)
    if args.seed is not None:
        raw.setdefault("model", {})["seed"] = args.seed
    data_cfg = raw["data"]
    if data_cfg["source"] == "synthetic":
        rng = RngStream(harness._derive(int(data_cfg.get("seed", 0)),
                                        data_cfg["distribution"], int(data_cfg["n"]), 0))
        from .regressors import Dataset

        ds = Dataset.fixed_x(sample(data_cfg["distribution"], int(data_cfg["n"]), rng))
    else:
        if cfg.path_dir is not None:
            p = Path(data_cfg["path"])
            if not p.is_absolute():
                data_cfg["path"] = str((cfg.path_dir / p).resolve())
        ds, _eval_ds, _ = harness._load_csv_source(data_cfg)
    spec = harness._build_point_spec(raw, fields=ds.fields,
                                     replicate_seed=int(raw["model"].get("seed", 0)))
    model = train_model(ds, spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / f"{cfg.name}.params"
    model.save(model_path)
    preds = model.predict_dataset(ds)
    summary = {
        "config": cfg.name,
        "scheme": spec.scheme,
        "transform": spec.transform.label,
        "rows": len(ds),
        "final_loss": float(model.loss_log[-1]),
        "prediction_mean": float(np.mean(preds)),
        "target_mean": float(np.mean(ds.targets)),
        "model_file": str(model_path),
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.raw.setdefault("data", {})["seed"] = args.seed
    report = run_experiment(cfg, threads=args.threads)
    written = []
    for fmt in [f.strip() for f in args.format.split(",") if f.strip()]:
        written += emit_report(report, fmt, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_oracle(args) -> int:
    text = harness.oracle_table(dists=args.dist)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_report(args) -> int:
    report = load_report(args.path)
    for fmt in [f.strip() for f in args.format.split(",") if f.strip()]:
        for path in emit_report(report, fmt, args.out):
            print(f"wrote {path}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "experiment": _cmd_experiment,
    "oracle": _cmd_oracle,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.cmd](args)
    except (ConfigError, CsvError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
