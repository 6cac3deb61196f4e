"""Command-line interface.

Subcommands: gen-data, train, eval, ablate-t, check. Every command is
deterministic given its flags and seed. Exit codes: 0 success, 1
verification failure, 2 usage or config error, 3 training divergence.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import checks, data, metrics
from .errors import CscsegError, ConfigError, TrainingDiverged
from .net import SegNet
from .sparse_block import BlockTrace, sparsity
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_t_list(text):
    try:
        values = [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"--t expects a comma-separated integer list, got {text!r}")
    if not values or any(v < 0 for v in values):
        raise ConfigError(f"--t values must be >= 0, got {text!r}")
    return values


def _load_train_config(args):
    cfg = TrainConfig()
    if args.config:
        with open(args.config) as f:
            raw = json.load(f)
        known = set(asdict(cfg))
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"--config: unknown keys {sorted(unknown)}")
        for key, value in raw.items():
            setattr(cfg, key, tuple(value) if isinstance(value, list) else value)
    cfg.data_dir = args.data
    cfg.out_dir = args.out
    for name in ("epochs", "batch_size", "lr", "weight_decay", "seed", "stride"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "t", None) is not None:
        t_values = _parse_t_list(args.t)
        if len(t_values) == 1:
            cfg.iterations = (t_values[0],) * 3
        elif len(t_values) == 3:
            cfg.iterations = tuple(t_values)
        else:
            raise ConfigError(f"--t wants 1 or 3 values for train, got {len(t_values)}")
    return cfg.validate()


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    payload = asdict(cfg)
    payload["iterations"] = list(cfg.iterations)
    payload["widths"] = list(cfg.widths)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_gen_data(args):
    manifest = data.generate(
        out_dir=args.out,
        seed=args.seed,
        n_cases=args.cases,
        size=args.size,
        n_classes=args.classes,
        noise_sigma=args.noise,
    )
    print(json.dumps({
        "out": args.out,
        "n_cases": len(manifest.splits["train"]) + len(manifest.splits["val"]),
        "train": len(manifest.splits["train"]),
        "val": len(manifest.splits["val"]),
        "n_classes": manifest.n_classes,
        "image_size": manifest.image_size,
    }, sort_keys=True))
    return EXIT_OK


def cmd_train(args):
    cfg = _load_train_config(args)
    _echo_config(cfg, cfg.out_dir)
    result = train(cfg)
    report = metrics.evaluate(result.checkpoint_path, cfg.data_dir, "val")
    report.save(os.path.join(cfg.out_dir, "report.json"))
    print(json.dumps({
        "checkpoint": result.checkpoint_path,
        "loss_csv": result.csv_path,
        "best_val_dsc": result.best_val_dsc,
        "val_mean_dsc": report.mean_dsc,
        "val_mean_hd95": report.mean_hd95,
    }, sort_keys=True))
    return EXIT_OK


def _final_stage_sparsity(net, data_dir):
    _, cases = data.load_split(data_dir, "val")
    values = []
    for case in cases:
        x = case.image[None, None].astype(net.dtype)
        stage_codes = []
        net.forward(x, train=False, stage_codes=stage_codes)
        values.append(sparsity(stage_codes[-1]))
    return float(np.mean(values))


def cmd_eval(args):
    net = SegNet.load(args.model)
    report = metrics.evaluate(net, args.data, args.split)
    report.save(args.report)
    if args.trace:
        _, cases = data.load_split(args.data, args.split)
        x = cases[0].image[None, None].astype(net.dtype)
        trace = BlockTrace()
        net.forward(x, train=False, traces={len(net.stages) - 1: trace})
        trace.to_csv(args.trace)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_ablate_t(args):
    t_values = _parse_t_list(args.t)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["T", "mean_dsc", "mean_hd95", "final_sparsity_gamma2"])
        f.flush()
        for t in t_values:
            run_args = argparse.Namespace(
                data=args.data,
                out=os.path.join(args.out, f"t{t}"),
                config=args.config,
                t=str(t),
                epochs=args.epochs,
                batch_size=None,
                lr=None,
                weight_decay=None,
                seed=args.seed,
                stride=None,
            )
            cfg = _load_train_config(run_args)
            _echo_config(cfg, cfg.out_dir)
            result = train(cfg)
            net = SegNet.load(result.checkpoint_path)
            report = metrics.evaluate(net, args.data, "val")
            report.save(os.path.join(cfg.out_dir, "report.json"))
            writer.writerow([
                t,
                repr(report.mean_dsc),
                repr(report.mean_hd95),
                repr(_final_stage_sparsity(net, args.data)),
            ])
            f.flush()
    print(json.dumps({"ablation_csv": csv_path, "t_values": t_values}, sort_keys=True))
    return EXIT_OK


def cmd_check(args):
    report, passed = checks.run_checks(args.suite)
    print(json.dumps(report, sort_keys=True, default=float))
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cscseg",
        description="Sparse-coding decoder segmentation: data, training, "
                    "evaluation, ablation, and verification suites.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=42, help="generator seed (default 42)")
    p.add_argument("--cases", type=int, default=200, help="number of cases (default 200)")
    p.add_argument("--size", type=int, default=96,
                   help="square image size, divisible by 8 (default 96)")
    p.add_argument("--classes", type=int, default=4,
                   help="class count incl. background (default 4)")
    p.add_argument("--noise", type=float, default=0.08,
                   help="additive Gaussian noise sigma (default 0.08)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory for outputs")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--t", help="refinement iterations, one value or 3 comma-separated")
    p.add_argument("--epochs", type=int, help="training epochs (default 30)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (default 4)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    p.add_argument("--weight-decay", dest="weight_decay", type=float,
                   help="decoupled weight decay (default 1e-4)")
    p.add_argument("--seed", type=int, help="run seed (default 42)")
    p.add_argument("--stride", type=int,
                   help="sparse block stride (default 1; only 1 is valid in the decoder)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--model", required=True, help="checkpoint path (.csct)")
    p.add_argument("--report", required=True, help="output report JSON path")
    p.add_argument("--split", default="val", help="dataset split (default val)")
    p.add_argument("--trace", help="write refinement trace CSV for the first case")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-t", help="train one model per iteration count")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--t", required=True, help="comma-separated iteration counts")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config applied to every run")
    p.add_argument("--epochs", type=int, help="override epochs for every run")
    p.add_argument("--seed", type=int, help="seed shared by all runs")
    p.set_defaults(func=cmd_ablate_t)

    p = sub.add_parser("check", help="run the verification suites")
    p.add_argument("suite", choices=["adjoint", "grad", "oracle", "all"])
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CscsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
