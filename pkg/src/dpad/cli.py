"""Command-line interface: decompose, train, eval, predict, selftest."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from dpad import nnkernel as nk
from dpad.drd import build_drd_tree, drd_forward
from dpad.harness import (Dataset, dominant_fft_bin, load_csv, make_windows,
                          split_chronological, write_components_csv)
from dpad.memd import mcd_decompose
from dpad.morph import SEKernel
from dpad.nnkernel import ParameterSet
from dpad.pipeline import (DPadModel, ModelConfig, evaluate_model, load_checkpoint,
                           revin_normalize, save_checkpoint, train)

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpad",
        description="Frequency-disentangling decomposition and forecasting for time series.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose each channel and export component CSVs")
    p.add_argument("--input", required=True, help="input CSV (timestamp + channels)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--k", type=int, default=6, help="components per decomposition")
    p.add_argument("--levels", type=int, default=1,
                   help="tree depth; 1 = plain decomposition, >1 uses seeded blocks")
    p.add_argument("--kernel-size", type=int, default=3, help="base SE kernel length (odd)")
    p.add_argument("--max-sift", type=int, default=10)
    p.add_argument("--rt-threshold", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0, help="seed for level>1 block parameters")
    p.add_argument("--checkpoint", default=None,
                   help="reuse a trained model's tree instead of seeded parameters")
    p.add_argument("--fill", choices=["forward"], default=None)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", default=None, help="JSON config mirroring ModelConfig fields")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--lookback", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None,
                   help="set every hidden width (hidden/embed/graph/fuse dims)")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--disable-if", action="store_true", help="drop the interaction head")
    p.add_argument("--fill", choices=["forward"], default=None)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=None,
                   help="must match the checkpoint's trained horizon")
    p.add_argument("--fill", choices=["forward"], default=None)

    p = sub.add_parser("predict", help="forecast from the last lookback window of a CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="forecast CSV path")
    p.add_argument("--fill", choices=["forward"], default=None)

    sub.add_parser("selftest", help="run built-in oracle and gradient suites")
    return parser


def _seed_override(seed: int | None) -> int | None:
    env = os.environ.get("DPAD_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"DPAD_SEED must be an integer, got {env!r}") from None
    return seed


def _cmd_decompose(args) -> int:
    ds = load_csv(args.input, fill=args.fill)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kernel = SEKernel.from_length(args.kernel_size)
    seed = _seed_override(args.seed)

    model = None
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)

    summary_rows = []
    for name in ds.names:
        series = ds.channel(name)
        if model is not None:
            if len(series) < model.config.lookback:
                raise ValueError(f"channel {name!r} has {len(series)} samples, checkpoint "
                                 f"needs {model.config.lookback}")
            window, _ = revin_normalize(series[-model.config.lookback:])
            with nk.no_grad():
                matrix = drd_forward(window, model.tree)
            leaves = model.tree.leaf_count
            k = model.config.components
        elif args.levels == 1:
            matrix = mcd_decompose(series, args.k, kernel, max_sift=args.max_sift,
                                   rt_threshold=args.rt_threshold)
            leaves, k = 1, args.k
        else:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed or 0)))
            ps = ParameterSet()
            tree = build_drd_tree(ps, length=len(series), components=args.k,
                                  depth=args.levels, kernel=kernel,
                                  hidden=min(len(series), 336), mask_span=3,
                                  max_sift=args.max_sift, rt_threshold=args.rt_threshold,
                                  rng=rng)
            with nk.no_grad():
                matrix = drd_forward(series, tree)
            leaves, k = tree.leaf_count, args.k
        names = None
        if leaves > 1:
            names = [f"leaf{g + 1}_imf{i}" if i < k else f"leaf{g + 1}_residual"
                     for g in range(leaves) for i in range(1, k + 1)]
        path = out_dir / f"components_{name}.csv"
        write_components_csv(path, matrix, column_names=names)
        n = matrix.shape[0]
        for j in range(matrix.shape[1]):
            col = matrix[:, j]
            rms = float(np.sqrt((col ** 2).mean()))
            bin_idx = dominant_fft_bin(col) if rms > 0 else 0
            summary_rows.append((name, j, bin_idx, bin_idx / n, rms))
    with open(out_dir / "frequency_summary.csv", "w", encoding="utf-8") as fh:
        fh.write("channel,column,dominant_bin,dominant_freq_cycles_per_sample,rms\n")
        for row in summary_rows:
            fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]:.17g},{row[4]:.17g}\n")
    print(f"wrote {len(ds.names)} component file(s) and frequency_summary.csv to {out_dir}")
    return 0


def _load_config(args) -> ModelConfig:
    fields = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            fields.update(json.load(fh))
    overrides = {
        "lookback": args.lookback, "horizon": args.horizon,
        "components": args.components, "levels": args.levels,
        "learning_rate": args.learning_rate, "batch_size": args.batch_size,
        "max_epochs": args.max_epochs, "patience": args.patience,
        "seed": _seed_override(args.seed),
    }
    if args.hidden is not None:
        for key in ("hidden_dim", "embed_dim", "graph_in_dim", "graph_mid_dim",
                    "fuse_out_dim"):
            fields[key] = args.hidden
    if args.disable_if:
        fields["disable_if_module"] = True
    for key, val in overrides.items():
        if val is not None:
            fields[key] = val
    return ModelConfig.from_dict(fields)


def _split_windows(ds: Dataset, config: ModelConfig):
    ratios = (config.train_ratio, config.val_ratio, config.test_ratio)
    need = config.lookback + config.horizon
    train_ds, val_ds, test_ds = split_chronological(ds, ratios, min_length=need)
    return tuple(make_windows(part, config.lookback, config.horizon)
                 for part in (train_ds, val_ds, test_ds))


def _cmd_train(args) -> int:
    config = _load_config(args)
    ds = load_csv(args.data, fill=args.fill)
    train_w, val_w, _ = _split_windows(ds, config)
    model = DPadModel(config)
    history = train(model, train_w.channel_pairs(), val_w.channel_pairs(),
                    verbose=args.verbose)
    save_checkpoint(args.out, model)
    metrics_path = Path(str(args.out)).with_suffix(".metrics.json")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump({"best_epoch": history.best_epoch,
                   "best_val_mse": history.best_val_mse,
                   "stopped_early": history.stopped_early,
                   "epochs": history.epochs}, fh, indent=2)
    print(f"checkpoint written to {args.out}; metrics history in {metrics_path}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.horizon is not None and args.horizon != model.config.horizon:
        raise ValueError(f"checkpoint was trained for horizon {model.config.horizon}, "
                         f"got --horizon {args.horizon}")
    ds = load_csv(args.data, fill=args.fill)
    _, _, test_w = _split_windows(ds, model.config)
    mse, mae = evaluate_model(model, test_w.channel_pairs())
    print(json.dumps({"mse": mse, "mae": mae}))
    return 0


def _cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = load_csv(args.input, fill=args.fill)
    lookback = model.config.lookback
    if len(ds) < lookback:
        raise ValueError(f"input has {len(ds)} rows, need at least {lookback}")
    forecast = model.predict(ds.values[-lookback:])
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("t," + ",".join(ds.names) + "\n")
        for h in range(forecast.shape[0]):
            fh.write(f"{h + 1}," + ",".join(f"{v:.17g}" for v in forecast[h]) + "\n")
    print(f"forecast of {forecast.shape[0]} steps written to {args.out}")
    return 0


def _cmd_selftest() -> int:
    from dpad.selftest import run_all
    results = run_all()
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: {res.detail}")
        failed += not res.passed
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "decompose":
            return _cmd_decompose(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "predict":
            return _cmd_predict(args)
        if args.command == "selftest":
            return _cmd_selftest()
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
