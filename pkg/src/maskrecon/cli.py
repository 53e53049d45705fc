"""Command-line surface: rank-analysis, reconstruct, train, attack, eval, sweep.

Every command reads one JSON config (see config.py), funnels all randomness
through the config's root seed, and writes CSV/checkpoint outputs under the
config's output directory. Re-running a command with an identical config and
seed reproduces byte-identical CSVs.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .data import gen_synthetic, load_idx
from .errors import (
    CheckpointFormatError,
    ConfigError,
    CorruptCheckpointError,
    DataError,
    EmptyInputError,
    InsufficientObservationsError,
    InvalidRangeError,
    NumericalError,
    ShapeError,
)
from .estimation import Defense, Method, reconstruct_image, to_wide_matrix
from .masking import derive_seed, inference_p, make_schedule
from .model import Classifier, load_checkpoint, save_checkpoint
from .pipeline import (
    AttackSpec,
    Dataset,
    EvalReport,
    EvalRow,
    eval_report_csv,
    evaluate,
    infer_vote,
    sweep_csv,
    tradeoff_sweep,
    train,
)
from .rank_analysis import rank_report, report_to_csv

log = logging.getLogger("maskrecon")

_TAG_DATA = 401
_TAG_SURROGATE = 402
_TAG_EVAL = 403
_TAG_SWEEP = 404
_TAG_ATTACK_CMD = 405
_TAG_RECON = 406
_TAG_VOTE_ROW = 407


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors (not the default 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="maskrecon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output-dir", default=None, help="override the config output_dir")
        return p

    p = common(sub.add_parser("rank-analysis", help="approximate-rank histogram and CDF"))
    p.add_argument("--energy-fraction", type=float, default=0.9)
    p.add_argument("--unsquared", action="store_true", help="use unsquared singular-value energy")

    p = common(sub.add_parser("reconstruct", help="mask and reconstruct one image"))
    p.add_argument("--p", type=float, required=True, help="observation probability")
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--index", type=int, default=0, help="image index in the dataset")

    common(sub.add_parser("train", help="mask-augment the dataset and train the classifier"))

    p = common(sub.add_parser("attack", help="per-image attack results for the config's grid"))
    p.add_argument("--checkpoint", default=None, help="model checkpoint (default: train fresh)")

    p = common(sub.add_parser("eval", help="clean and per-attack accuracy report"))
    p.add_argument("--checkpoint", default=None, help="model checkpoint (default: train fresh)")

    common(sub.add_parser("sweep", help="clean/robust accuracy across masking ranges"))
    return parser


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset is None:
        raise ConfigError(["this command needs a 'dataset' section"])
    if cfg.dataset.kind == "idx":
        ds = load_idx(cfg.dataset.images, cfg.dataset.labels)
    else:
        ds = gen_synthetic(cfg.dataset.synthetic, derive_seed(cfg.seed, _TAG_DATA))
    if cfg.dataset.limit is not None:
        ds = ds.subset(range(min(cfg.dataset.limit, len(ds))))
    log.info("dataset: %d images of %dx%dx%d", len(ds), ds.images[0].height,
             ds.images[0].width, ds.images[0].channels)
    return ds


def _eval_subset(cfg: ExperimentConfig, ds: Dataset) -> Dataset:
    if cfg.eval_limit is None:
        return ds
    return ds.subset(range(min(cfg.eval_limit, len(ds))))


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    log.info("wrote %s", path)


def _require_train(cfg: ExperimentConfig):
    if cfg.train is None:
        raise ConfigError(["this command needs a 'train' section"])


def _schedule(cfg: ExperimentConfig):
    return make_schedule(
        cfg.train.p_start, cfg.train.p_end, cfg.train.n_masks, cfg.train.include_endpoint
    )


def _get_model(cfg: ExperimentConfig, ds: Dataset, checkpoint: str | None):
    if checkpoint is not None:
        log.info("loading checkpoint %s", checkpoint)
        return load_checkpoint(checkpoint)
    _require_train(cfg)
    plan = cfg.train.plan(cfg.estimator, cfg.hidden, cfg.seed)
    log.info("training: %d epochs on %d images x %d masks",
             plan.epochs, len(ds), plan.schedule.n)
    params, _ = train(plan, ds)
    path = os.path.join(cfg.output_dir, "model.ckpt")
    os.makedirs(cfg.output_dir, exist_ok=True)
    save_checkpoint(params, path)
    log.info("wrote %s", path)
    return params


def _surrogates(cfg: ExperimentConfig, ds: Dataset):
    """One independently trained copy shared by every transfer row."""
    if not any(row.transfer for row in cfg.attacks):
        return None
    _require_train(cfg)
    plan = cfg.train.plan(
        cfg.estimator, cfg.hidden, derive_seed(cfg.seed, _TAG_SURROGATE)
    )
    log.info("training transfer surrogate")
    params, _ = train(plan, ds)
    return params


def _grid(cfg: ExperimentConfig, surrogate):
    return tuple(
        AttackSpec(
            name=row.name,
            kind=row.kind,
            cfg=row.cfg,
            surrogate=surrogate if row.transfer else None,
        )
        for row in cfg.attacks
    )


def _defense(cfg: ExperimentConfig) -> Defense | None:
    if cfg.train is None:
        return None
    return Defense(estimator=cfg.estimator, p=inference_p(_schedule(cfg)))


def _cmd_rank_analysis(cfg: ExperimentConfig, args) -> int:
    ds = _load_dataset(cfg)
    report = rank_report(ds.images, args.energy_fraction, not args.unsquared)
    body = report_to_csv(report)
    _write(os.path.join(cfg.output_dir, "rank_cdf.csv"), f"# seed={cfg.seed}\n{body}")
    log.info("cdf(5) = %.4f over %d images", report.cdf_at(5), len(report.ranks))
    return 0


def _cmd_reconstruct(cfg: ExperimentConfig, args) -> int:
    ds = _load_dataset(cfg)
    if not 0 <= args.index < len(ds):
        raise ConfigError([f"--index {args.index} outside dataset of {len(ds)} images"])
    estimator = cfg.estimator
    if args.method is not None:
        from dataclasses import replace

        estimator = replace(estimator, method=Method(args.method))
    img = ds.images[args.index]
    recon = reconstruct_image(img, args.p, derive_seed(cfg.seed, _TAG_RECON, args.index), estimator)
    wide_in, wide_out = to_wide_matrix(img), to_wide_matrix(recon)
    denom = float(np.linalg.norm(wide_in))
    rel_error = float(np.linalg.norm(wide_out - wide_in)) / denom if denom > 0 else 0.0
    matrix_rows = "\n".join(",".join(repr(float(v)) for v in row) for row in wide_out)
    _write(
        os.path.join(cfg.output_dir, f"recon_{args.index}.csv"),
        f"# seed={cfg.seed}\n{matrix_rows}\n",
    )
    _write(
        os.path.join(cfg.output_dir, "reconstruct_summary.csv"),
        f"# seed={cfg.seed}\nindex,p,method,rel_error\n"
        f"{args.index},{args.p!r},{estimator.method.value},{rel_error!r}\n",
    )
    log.info("relative error %.6g at p=%g with %s", rel_error, args.p, estimator.method.value)
    return 0


def _cmd_train(cfg: ExperimentConfig, args) -> int:
    ds = _load_dataset(cfg)
    _require_train(cfg)
    plan = cfg.train.plan(cfg.estimator, cfg.hidden, cfg.seed)
    log.info("training: %d epochs on %d images x %d masks", plan.epochs, len(ds), plan.schedule.n)
    params, epochs = train(plan, ds)
    os.makedirs(cfg.output_dir, exist_ok=True)
    save_checkpoint(params, os.path.join(cfg.output_dir, "model.ckpt"))
    log.info("wrote %s", os.path.join(cfg.output_dir, "model.ckpt"))
    lines = [f"# seed={cfg.seed}", "epoch,mean_loss,train_accuracy"]
    for row in epochs:
        lines.append(f"{row['epoch']},{row['mean_loss']!r},{row['train_accuracy']!r}")
    _write(os.path.join(cfg.output_dir, "train_log.csv"), "\n".join(lines) + "\n")
    return 0


def _cmd_attack(cfg: ExperimentConfig, args) -> int:
    ds = _load_dataset(cfg)
    if not cfg.attacks:
        raise ConfigError(["the 'attack' command needs a non-empty 'attacks' list"])
    params = _get_model(cfg, ds, args.checkpoint)
    defense = _defense(cfg)
    surrogate = _surrogates(cfg, ds)
    eval_ds = _eval_subset(cfg, ds)
    from .pipeline import _ATTACK_FNS, _defended_predict  # shared per-image machinery

    clf = Classifier(params)
    lines = [f"# seed={cfg.seed}", "attack,image,label,success,final_loss,linf"]
    for row_idx, spec in enumerate(_grid(cfg, surrogate)):
        for i, (img, y) in enumerate(zip(eval_ds.images, eval_ds.labels)):
            attack_seed = derive_seed(cfg.seed, _TAG_ATTACK_CMD, row_idx, i)
            if spec.surrogate is not None:
                res = _ATTACK_FNS[spec.kind](
                    Classifier(spec.surrogate), None, img, y, spec.cfg, attack_seed
                )
                pred = _defended_predict(
                    clf, defense, res.adversarial,
                    derive_seed(cfg.seed, _TAG_ATTACK_CMD, row_idx, i, 1),
                )
                success = pred != y
            else:
                res = _ATTACK_FNS[spec.kind](clf, defense, img, y, spec.cfg, attack_seed)
                success = res.success
            linf = float(np.max(np.abs(res.adversarial.data - res.origin.data)))
            lines.append(
                f"{spec.name},{i},{y},{int(success)},{res.final_loss!r},{linf!r}"
            )
    _write(os.path.join(cfg.output_dir, "attack_results.csv"), "\n".join(lines) + "\n")
    return 0


def _vote_rows(cfg: ExperimentConfig, params, eval_ds: Dataset) -> tuple:
    if cfg.votes is None or cfg.train is None:
        return ()
    p = inference_p(_schedule(cfg))
    correct = 0
    for i, (img, y) in enumerate(zip(eval_ds.images, eval_ds.labels)):
        pred = infer_vote(
            params, cfg.estimator, p, img, cfg.votes,
            derive_seed(cfg.seed, _TAG_VOTE_ROW, i),
        )
        correct += int(pred == y)
    return (
        EvalRow(
            p_range=f"{cfg.train.p_start:g}-{cfg.train.p_end:g}",
            method=cfg.estimator.method.value,
            attack=f"vote{cfg.votes}",
            steps=0,
            accuracy=correct / len(eval_ds),
        ),
    )


def _cmd_eval(cfg: ExperimentConfig, args) -> int:
    ds = _load_dataset(cfg)
    params = _get_model(cfg, ds, args.checkpoint)
    defense = _defense(cfg)
    surrogate = _surrogates(cfg, ds)
    eval_ds = _eval_subset(cfg, ds)
    label = f"{cfg.train.p_start:g}-{cfg.train.p_end:g}" if cfg.train else ""
    report = evaluate(
        params, defense, eval_ds, _grid(cfg, surrogate),
        seed=derive_seed(cfg.seed, _TAG_EVAL), p_range_label=label,
    )
    report = EvalReport(
        clean_accuracy=report.clean_accuracy,
        rows=report.rows + _vote_rows(cfg, params, eval_ds),
    )
    _write(os.path.join(cfg.output_dir, "eval_report.csv"), eval_report_csv(report, cfg.seed))
    for row in report.rows:
        log.info("%s: accuracy %.4f %s", row.attack, row.accuracy, row.error)
    return 0


def _cmd_sweep(cfg: ExperimentConfig, args) -> int:
    ds = _load_dataset(cfg)
    _require_train(cfg)
    if not cfg.sweep_ranges:
        raise ConfigError(["the 'sweep' command needs a 'sweep' section with 'ranges'"])
    if not cfg.attacks:
        raise ConfigError(["the 'sweep' command needs at least one attack for the robust column"])
    surrogate = _surrogates(cfg, ds)
    spec = _grid(cfg, surrogate)[0]
    plan = cfg.train.plan(cfg.estimator, cfg.hidden, cfg.seed)
    rows = tradeoff_sweep(
        ds, cfg.sweep_ranges, cfg.estimator, spec, plan,
        eval_dataset=_eval_subset(cfg, ds), seed=derive_seed(cfg.seed, _TAG_SWEEP),
    )
    _write(os.path.join(cfg.output_dir, "sweep.csv"), sweep_csv(rows, cfg.seed))
    for row in rows:
        log.info("p %s: clean %.4f robust %.4f", row.p_range, row.clean_accuracy, row.robust_accuracy)
    return 0


_COMMANDS = {
    "rank-analysis": _cmd_rank_analysis,
    "reconstruct": _cmd_reconstruct,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
        if args.output_dir is not None:
            from dataclasses import replace

            cfg = replace(cfg, output_dir=args.output_dir)
        return _COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidRangeError) as e:
        log.error("config error: %s", e)
        return 1
    except (
        DataError,
        OSError,
        ShapeError,
        EmptyInputError,
        CheckpointFormatError,
        CorruptCheckpointError,
    ) as e:
        log.error("data error: %s", e)
        return 2
    except (NumericalError, InsufficientObservationsError) as e:
        log.error("numerical failure: %s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
