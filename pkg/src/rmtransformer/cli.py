"""Command-line entry point: ``rmt gen|train|eval|predict|gradcheck``.

Exit codes: 0 success, 1 runtime/IO failure, 2 usage/validation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import CheckpointError, checkpoint_hash, load_checkpoint
from .data import (
    DEFAULT_CELL_SIZE_M,
    DatasetError,
    LayoutParams,
    SynthChannelParams,
    load_dataset,
    write_dataset,
)
from .metrics import metric_rmse
from .model import PROFILES, get_profile
from .pgm import encode_pgm16
from .train import TrainConfig, check_params_match, config_echo, evaluate, predict, train

log = logging.getLogger("rmtransformer")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class UsageError(Exception):
    """Bad flags or a configuration that cannot work; maps to exit code 2."""


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed {text} is not a u64")
    return v


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Dashes in keys become underscores."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# parser ------------------------------------------------------------------------------

def _shared() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=_u64, default=0, help="u64 seed for all randomness")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--config", help="key = value file; flags override it")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmt", description="Radio-map transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    shared = _shared()

    g = sub.add_parser("gen", parents=[shared], help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=32)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--alpha", type=float, default=SynthChannelParams.alpha)
    g.add_argument("--beta", type=float, default=SynthChannelParams.beta)
    g.add_argument("--sigma", type=float, default=SynthChannelParams.sigma_sf)
    g.add_argument("--wall-loss", type=float, default=SynthChannelParams.wall_loss_db)
    g.add_argument("--cell-size", type=float, default=DEFAULT_CELL_SIZE_M)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[shared], help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="run", help="directory for checkpoint.rmtc and loss.csv")
    t.add_argument("--model", choices=["rmt", "baseline"], default="rmt")
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--lr-start", type=float, default=TrainConfig.lr_start)
    t.add_argument("--lr-end", type=float, default=TrainConfig.lr_end)
    t.add_argument("--train-frac", type=float, default=TrainConfig.train_frac)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--roi-loss", action="store_true", help="restrict the loss to RoI pixels")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[shared], help="compute metrics on a split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--model", choices=["auto", "rmt", "baseline"], default="auto")
    e.add_argument("--threshold", type=float, default=TrainConfig.threshold)
    e.add_argument("--split", choices=["test", "train", "all"], default="test")
    e.add_argument("--train-frac", type=float, default=TrainConfig.train_frac)
    e.add_argument("--out", default="metrics.json")
    e.add_argument("--oracle", action="store_true", help="predict the ground truth (negative control)")
    e.add_argument("--per-sample", action="store_true", help="average RMSE per map instead of pooling")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", parents=[shared], help="write predicted radio maps as PGM")
    pr.add_argument("--data", required=True)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--model", choices=["auto", "rmt", "baseline"], default="auto")
    pr.add_argument("--out", default="pred")
    pr.add_argument("--split", choices=["test", "train", "all"], default="test")
    pr.add_argument("--train-frac", type=float, default=TrainConfig.train_frac)
    pr.add_argument("--side-by-side", action="store_true", help="also write [prediction | truth] images")
    pr.set_defaults(func=cmd_predict)

    gc = sub.add_parser("gradcheck", parents=[shared], help="run the gradient-check suite")
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: Optional[str]):
    """The sub-parser called ``name``; ``None`` returns the sub-parsers action itself."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action if name is None else action.choices[name]
    raise KeyError(name)


def parse_args(argv) -> argparse.Namespace:
    """Parse flags, layering a ``--config`` file underneath them."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in _subparser(parser, None).choices), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    values = read_config_file(known.config)
    sp = _subparser(parser, command)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config", "func")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    defaults = {}
    for key, value in values.items():
        action = actions[key]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() not in _TRUE | _FALSE:
                raise UsageError(f"config key {key} expects a boolean, got {value!r}")
            defaults[key] = value.lower() in _TRUE
            continue
        try:
            converted = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config key {key}: {exc}") from exc
        if action.choices is not None and converted not in action.choices:
            raise UsageError(f"config key {key}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = converted
        # a required flag may now come from the file
        action.required = False
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _echo(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _resolve(path) -> Path:
    return Path(path).expanduser().resolve()


def _load(path):
    return load_dataset(_resolve(path))


def _check_extents(data, model_cfg) -> None:
    shape = (data.manifest["height"], data.manifest["width"])
    if shape != (model_cfg.height, model_cfg.width):
        raise UsageError(
            f"dataset is {shape[0]}x{shape[1]} but profile {model_cfg.profile!r} "
            f"expects {model_cfg.height}x{model_cfg.width}"
        )


def _detect_kind(params) -> str:
    names = params.names()
    if any("_attn." in n for n in names):
        return "rmt"
    if any("_mix." in n for n in names):
        return "baseline"
    raise CheckpointError("checkpoint matches neither model kind")


def _indices(data, split: str, train_frac: float) -> list:
    if split == "all":
        return list(range(len(data)))
    tr, te = data.split(train_frac)
    return tr if split == "train" else te


# commands -----------------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.size < 8 or args.size & (args.size - 1):
        raise UsageError("--size must be a power of two >= 8")
    try:
        params = SynthChannelParams(alpha=args.alpha, beta=args.beta, sigma_sf=args.sigma,
                                    wall_loss_db=args.wall_loss)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.cell_size <= 0:
        raise UsageError("--cell-size must be > 0")
    out = _resolve(args.out)
    # output location is left out of the echo so identical runs give identical trees
    echo = {k: v for k, v in _echo(args).items() if k != "out"}
    manifest = write_dataset(out, args.count, args.seed, args.size, params,
                             LayoutParams.for_size(args.size), args.cell_size, extra=echo)
    print(f"wrote {manifest['count']} samples of {args.size}x{args.size} to {out} "
          f"(alpha={params.alpha}, beta={params.beta}, sigma={params.sigma_sf}, seed={args.seed})")
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg = get_profile(args.profile)
    try:
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr_start=args.lr_start,
                          lr_end=args.lr_end, seed=args.seed, profile=args.profile,
                          train_frac=args.train_frac, roi_loss=args.roi_loss, max_steps=args.max_steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    data = _load(args.data)
    _check_extents(data, model_cfg)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(data, cfg, model_cfg, args.model,
                checkpoint_path=out / "checkpoint.rmtc", trace_path=out / "loss.csv")
    summary = {"config": config_echo(cfg, model_cfg, args.model), "cli": _echo(args),
               "checkpoint_sha256": res.checkpoint_hash, "steps": len(res.trace),
               "final_loss": res.trace[-1][3], "train_indices": res.train_indices}
    (out / "train.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"trained {args.model}/{args.profile} for {len(res.trace)} steps, "
          f"final loss {res.trace[-1][3]:.6g}; checkpoint {out / 'checkpoint.rmtc'} "
          f"sha256 {res.checkpoint_hash[:16]}")
    return EXIT_OK


def _load_model(args, model_cfg):
    params = load_checkpoint(_resolve(args.checkpoint))
    kind = _detect_kind(params) if args.model == "auto" else args.model
    try:
        check_params_match(params, model_cfg, kind)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return params, kind


def cmd_eval(args) -> int:
    if not 0 < args.threshold < 1:
        raise UsageError("--threshold must lie in (0, 1)")
    if not args.oracle and not args.checkpoint:
        raise UsageError("eval needs --checkpoint unless --oracle is given")
    model_cfg = get_profile(args.profile)
    data = _load(args.data)
    _check_extents(data, model_cfg)
    params, kind, ck_hash = None, args.model, None
    if not args.oracle:
        params, kind = _load_model(args, model_cfg)
        ck_hash = checkpoint_hash(_resolve(args.checkpoint))
    idx = _indices(data, args.split, args.train_frac)
    if not idx:
        raise UsageError(f"split {args.split!r} is empty")
    report, _ = evaluate(data, params, model_cfg, kind, args.threshold, idx,
                         per_sample=args.per_sample, oracle=args.oracle)
    doc = report.to_dict()
    doc.update(config=_echo(args), model_kind=kind, checkpoint_sha256=ck_hash, indices=idx)
    out = _resolve(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"rmse {report.rmse:.6g}  ch_pred_err {report.ch_pred_err:.6g}  "
          f"cov_pred_err {report.cov_pred_err:.6g}  (n={report.n_samples}, thres={args.threshold})")
    return EXIT_OK


def cmd_predict(args) -> int:
    model_cfg = get_profile(args.profile)
    data = _load(args.data)
    _check_extents(data, model_cfg)
    params, kind = _load_model(args, model_cfg)
    idx = _indices(data, args.split, args.train_frac)
    if not idx:
        raise UsageError(f"split {args.split!r} is empty")
    preds = predict(data, idx, params, model_cfg, kind)
    out = _resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, pred in zip(idx, preds):
        (out / f"pred_{i:05d}.pgm").write_bytes(encode_pgm16(pred))
        if args.side_by_side:
            pair = np.concatenate([pred, data.samples[i].radio], axis=1)
            (out / f"compare_{i:05d}.pgm").write_bytes(encode_pgm16(pair))
    truths = np.stack([data.samples[i].radio for i in idx])
    print(f"wrote {len(idx)} predictions to {out}; rmse vs truth {metric_rmse(preds, truths):.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .suite import run_suite

    reports = run_suite(seed=args.seed, tol=args.tol)
    ok = True
    for name, rep in reports.items():
        status = "ok" if rep.passed else "FAIL"
        print(f"{name:<20} worst rel err {rep.worst:.3e}  {status}")
        ok &= rep.passed
    print("gradcheck passed" if ok else "gradcheck FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv: Optional[list] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse
        return int(exc.code or 0)
    except (OSError, DatasetError, CheckpointError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
