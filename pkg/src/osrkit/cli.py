"""Command-line experiment runner.

Subcommands: gen-data, train, eval, sweep-lambda, curves.  Every command is a
pure function of (config file, flags): identical inputs produce byte-identical
artifacts, and manifests carry the resolved configuration instead of
timestamps.

Exit codes: 0 success, 2 config error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, make_bundle, model_from_config
from .data import write_csv
from .errors import ConfigError, ContractError, CsvFormatError, DomainError, NumericError
from .metrics import compute_report, score_bundle, write_scores_csv
from .model import closed_set_scores, load_checkpoint, save_checkpoint
from .special import h_scale, prob_inclusion
from .trainer import train

VERSION_STRING = f"osrkit-{__version__}"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n")


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(cfg: ExperimentConfig) -> None:
    """Write the four dataset CSVs plus a manifest describing their generation."""
    if cfg.synthetic is None:
        raise ConfigError("gen-data needs a data.synthetic section")
    bundle = make_bundle(cfg)
    out = _out_dir(cfg)
    write_csv(out / "train_known.csv", bundle.train_known_x, bundle.train_known_y)
    write_csv(out / "background.csv", bundle.background_x)
    write_csv(out / "test_known.csv", bundle.test_known_x, bundle.test_known_y)
    write_csv(out / "test_unknown.csv", bundle.test_unknown_x)
    _write_json(
        out / "manifest.json",
        {"version": VERSION_STRING, "seed": cfg.seed, "config": cfg.resolved_dict()},
    )


def cmd_train(cfg: ExperimentConfig, resume: str | None = None) -> None:
    """Train per the config; emit checkpoint.json, trace.csv, run_manifest.json."""
    bundle = make_bundle(cfg)
    out = _out_dir(cfg)
    if resume is not None:
        model, state = load_checkpoint(resume)
        if state is None:
            raise ConfigError(f"checkpoint {resume} carries no training state to resume")
        start_epoch, velocity = state["epoch"], state["velocity"]
    else:
        model = model_from_config(cfg, bundle.input_dim, bundle.class_count)
        start_epoch, velocity = 0, {}
    trace = train(
        bundle,
        model,
        cfg.loss,
        cfg.optim,
        checkpoint_dir=out,
        start_epoch=start_epoch,
        velocity=velocity,  # filled in place by the trainer
    )
    save_checkpoint(
        model,
        out / "checkpoint.json",
        training_state={"epoch": cfg.optim.epochs, "velocity": velocity},
    )
    trace.to_csv(out / "trace.csv")
    _write_json(
        out / "run_manifest.json",
        {"version": VERSION_STRING, "seed": cfg.seed, "config": cfg.resolved_dict()},
    )


def _f1_threshold(cfg: ExperimentConfig, model, bundle) -> float:
    """Score threshold accepting f1_accept_fraction of the known training data."""
    if cfg.eval.f1_threshold is not None:
        return float(cfg.eval.f1_threshold)
    scores, _ = closed_set_scores(model, bundle.train_known_x)
    ranked = np.sort(scores)
    k = int(math.floor((1.0 - cfg.eval.f1_accept_fraction) * len(ranked)))
    return float(ranked[min(k, len(ranked) - 1)])


def cmd_eval(cfg: ExperimentConfig, checkpoint: str) -> None:
    """Score the test sets under the checkpointed model; emit report.json + scores.csv."""
    bundle = make_bundle(cfg)
    model, _ = load_checkpoint(checkpoint)
    if model.class_count != bundle.class_count:
        raise ConfigError(
            f"checkpoint has {model.class_count} classes but data has {bundle.class_count}"
        )
    if model.extractor.input_dim != bundle.input_dim:
        raise ConfigError(
            f"checkpoint expects input dim {model.extractor.input_dim}, data has {bundle.input_dim}"
        )
    samples = score_bundle(model, bundle)
    report = compute_report(
        samples,
        fpr_target=cfg.eval.fpr_target,
        tpr_target=cfg.eval.tpr_target,
        f1_threshold=_f1_threshold(cfg, model, bundle),
    )
    out = _out_dir(cfg)
    (out / "report.json").write_text(report.to_json())
    write_scores_csv(samples, out / "scores.csv")


def cmd_sweep_lambda(cfg: ExperimentConfig, lambdas: list[float]) -> None:
    """Train and evaluate one run per lambda under shared seeds; emit a table CSV."""
    bundle = make_bundle(cfg)
    out = _out_dir(cfg)
    rows = ["lambda,accuracy,auroc,oscr"]
    for lam in lambdas:
        model = model_from_config(cfg, bundle.input_dim, bundle.class_count)
        run_loss = replace(cfg.loss, family="none" if lam == 0.0 else cfg.loss.family, lam=lam)
        train(bundle, model, run_loss, cfg.optim)
        samples = score_bundle(model, bundle)
        report = compute_report(
            samples,
            fpr_target=cfg.eval.fpr_target,
            tpr_target=cfg.eval.tpr_target,
            f1_threshold=_f1_threshold(cfg, model, bundle),
        )
        rows.append(f"{lam!r},{report.accuracy!r},{report.auroc!r},{report.oscr_ccr_at_fpr!r}")
    (out / "lambda_sweep.csv").write_text("\n".join(rows) + "\n")


def cmd_curves(n: int, max_distance: float, steps: int, out_dir: str) -> None:
    """Emit (distance, inclusion probability, hypersphere score) columns as CSV."""
    if n < 1 or steps < 2 or max_distance <= 0.0:
        raise ConfigError("curves needs n >= 1, steps >= 2, max-distance > 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["distance,p_inclusion,p_hsc"]
    for dist in np.linspace(0.0, max_distance, steps):
        d_sq = float(dist) ** 2
        p_i = prob_inclusion(d_sq, n)
        p_h = math.exp(-h_scale(d_sq))
        rows.append(f"{float(dist)!r},{p_i!r},{p_h!r}")
    (out / "curves.csv").write_text("\n".join(rows) + "\n")


def _parse_lambdas(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise ConfigError(f"could not parse lambda list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osrkit", description=__doc__)
    parser.add_argument("--version", action="version", version=VERSION_STRING)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override config output_dir")

    p = sub.add_parser("gen-data", help="generate and dump the synthetic dataset CSVs")
    add_config_args(p)

    p = sub.add_parser("train", help="train a model per the config")
    add_config_args(p)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's test data")
    add_config_args(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep-lambda", help="train/evaluate across a list of lambdas")
    add_config_args(p)
    p.add_argument("--lambdas", required=True, help="comma-separated values, e.g. 0,0.5,1")

    p = sub.add_parser("curves", help="dump inclusion/hypersphere score curves as CSV")
    p.add_argument("--n", type=int, default=128, help="latent dimension")
    p.add_argument("--max-distance", type=float, default=20.0)
    p.add_argument("--steps", type=int, default=201)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "curves":
            cmd_curves(args.n, args.max_distance, args.steps, args.out)
            return 0
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        if args.command == "gen-data":
            cmd_gen_data(cfg)
        elif args.command == "train":
            cmd_train(cfg, resume=args.resume)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        elif args.command == "sweep-lambda":
            cmd_sweep_lambda(cfg, _parse_lambdas(args.lambdas))
        return 0
    except (ConfigError, ContractError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (OSError, CsvFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
