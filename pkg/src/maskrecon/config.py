"""Experiment configuration: a JSON document validated against a closed
schema. Unknown keys are rejected and every violation is reported at once.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .attacks import AttackConfig, BackwardMode
from .data import SyntheticSpec
from .errors import ConfigError, MaskreconError
from .estimation import EstimatorConfig, Method
from .masking import make_schedule
from .pipeline import AttackKind, TrainPlan

__all__ = [
    "DatasetConfig",
    "TrainConfig",
    "AttackRow",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "config_to_json",
]

_REQUIRED = object()


@dataclass(frozen=True)
class DatasetConfig:
    kind: str
    images: str | None = None
    labels: str | None = None
    limit: int | None = None
    synthetic: SyntheticSpec | None = None


@dataclass(frozen=True)
class TrainConfig:
    p_start: float
    p_end: float
    n_masks: int = 10
    include_endpoint: bool = False
    epochs: int = 5
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    adversarial: bool = False
    adv_steps: int = 7
    adv_epsilon: float = 0.3
    adv_step_size: float = 0.01
    adv_through_defense: bool = True

    def plan(self, estimator: EstimatorConfig, hidden, seed: int) -> TrainPlan:
        return TrainPlan(
            schedule=make_schedule(
                self.p_start, self.p_end, self.n_masks, self.include_endpoint
            ),
            estimator=estimator,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            hidden=tuple(hidden),
            adversarial=self.adversarial,
            adv_steps=self.adv_steps,
            adv_epsilon=self.adv_epsilon,
            adv_step_size=self.adv_step_size,
            adv_through_defense=self.adv_through_defense,
            seed=seed,
        )


@dataclass(frozen=True)
class AttackRow:
    name: str
    kind: AttackKind
    cfg: AttackConfig
    transfer: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    dataset: DatasetConfig
    hidden: tuple
    train: TrainConfig | None
    estimator: EstimatorConfig
    attacks: tuple
    eval_limit: int | None
    votes: int | None
    sweep_ranges: tuple | None


class _Walker:
    """Collects every schema violation instead of failing on the first."""

    def __init__(self):
        self.problems = []

    def check_keys(self, where: str, obj: dict, allowed):
        for key in obj:
            if key not in allowed:
                self.problems.append(f"{where}: unknown key '{key}'")

    def get(self, where: str, obj: dict, key: str, kinds, default=_REQUIRED):
        if key not in obj:
            if default is _REQUIRED:
                self.problems.append(f"{where}: missing required key '{key}'")
                return None
            return default
        value = obj[key]
        if kinds is bool:
            ok = isinstance(value, bool)
        elif kinds is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif kinds is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif kinds is str:
            ok = isinstance(value, str)
        elif kinds is list:
            ok = isinstance(value, list)
        elif kinds is dict:
            ok = isinstance(value, dict)
        else:
            ok = isinstance(value, kinds)
        if not ok:
            self.problems.append(
                f"{where}: key '{key}' must be {getattr(kinds, '__name__', kinds)}, "
                f"got {type(value).__name__}"
            )
            return None
        return value


def _parse_dataset(w: _Walker, obj) -> DatasetConfig | None:
    if obj is None:
        return None
    before = len(w.problems)
    kind = w.get("dataset", obj, "kind", str)
    if kind == "idx":
        w.check_keys("dataset", obj, {"kind", "images", "labels", "limit"})
        images = w.get("dataset", obj, "images", str)
        labels = w.get("dataset", obj, "labels", str)
        limit = w.get("dataset", obj, "limit", int, None)
        if limit is not None and limit < 1:
            w.problems.append(f"dataset: limit must be >= 1, got {limit}")
        if len(w.problems) > before:
            return None
        return DatasetConfig(kind="idx", images=images, labels=labels, limit=limit)
    if kind == "synthetic":
        allowed = {
            "kind", "count", "height", "width", "channels", "rank",
            "noise_sigma", "classes", "limit",
        }
        w.check_keys("dataset", obj, allowed)
        fields = {
            "count": w.get("dataset", obj, "count", int),
            "height": w.get("dataset", obj, "height", int),
            "width": w.get("dataset", obj, "width", int),
            "channels": w.get("dataset", obj, "channels", int, 1),
            "rank": w.get("dataset", obj, "rank", int, 1),
            "noise_sigma": w.get("dataset", obj, "noise_sigma", float, 0.0),
            "classes": w.get("dataset", obj, "classes", int, 2),
        }
        limit = w.get("dataset", obj, "limit", int, None)
        if limit is not None and limit < 1:
            w.problems.append(f"dataset: limit must be >= 1, got {limit}")
        if len(w.problems) > before or any(v is None for v in fields.values()):
            return None
        try:
            spec = SyntheticSpec(**fields)
        except MaskreconError as e:
            w.problems.append(f"dataset: {e}")
            return None
        return DatasetConfig(kind="synthetic", synthetic=spec, limit=limit)
    if kind is not None:
        w.problems.append(f"dataset: kind must be 'idx' or 'synthetic', got '{kind}'")
    return None


_TRAIN_KEYS = {
    "p_start": (float, _REQUIRED),
    "p_end": (float, _REQUIRED),
    "n_masks": (int, 10),
    "include_endpoint": (bool, False),
    "epochs": (int, 5),
    "batch_size": (int, 32),
    "lr": (float, 0.01),
    "momentum": (float, 0.9),
    "adversarial": (bool, False),
    "adv_steps": (int, 7),
    "adv_epsilon": (float, 0.3),
    "adv_step_size": (float, 0.01),
    "adv_through_defense": (bool, True),
}

_ESTIMATOR_KEYS = {
    "method": (str, "soft_impute"),
    "usvt_eta": (float, 0.01),
    "si_lambda": (float, 0.5),
    "max_iters": (int, 200),
    "tol": (float, 1e-4),
    "nn_lambda_min": (float, 1e-3),
    "nn_anneal": (float, 0.7),
    "clip_lo": (float, 0.0),
    "clip_hi": (float, 1.0),
}

_ATTACK_KEYS = {
    "name": (str, _REQUIRED),
    "kind": (str, _REQUIRED),
    "epsilon": (float, 8 / 255),
    "step_size": (float, 2 / 255),
    "steps": (int, 7),
    "restarts": (int, 1),
    "random_start": (bool, True),
    "backward_mode": (str, "none"),
    "projection_rank_k": (int, None),
    "spsa_batch": (int, 2048),
    "spsa_delta": (float, 0.01),
    "spsa_lr": (float, 0.01),
    "transfer": (bool, False),
}


def _parse_section(w: _Walker, where: str, obj: dict, schema: dict) -> dict | None:
    w.check_keys(where, obj, set(schema))
    out = {}
    for key, (kind, default) in schema.items():
        out[key] = w.get(where, obj, key, kind, default)
    if any(v is None and schema[k][1] is _REQUIRED for k, v in out.items()):
        return None
    return out


def _parse_attack(w: _Walker, idx: int, obj) -> AttackRow | None:
    where = f"attacks[{idx}]"
    if not isinstance(obj, dict):
        w.problems.append(f"{where}: must be an object")
        return None
    fields = _parse_section(w, where, obj, _ATTACK_KEYS)
    if fields is None:
        return None
    try:
        kind = AttackKind(fields["kind"])
    except ValueError:
        w.problems.append(
            f"{where}: kind must be one of {[k.value for k in AttackKind]}, "
            f"got '{fields['kind']}'"
        )
        return None
    try:
        mode = BackwardMode(fields["backward_mode"])
        cfg = AttackConfig(
            epsilon=fields["epsilon"],
            step_size=fields["step_size"],
            steps=fields["steps"],
            restarts=fields["restarts"],
            random_start=fields["random_start"],
            backward_mode=mode,
            projection_rank_k=fields["projection_rank_k"],
            spsa_batch=fields["spsa_batch"],
            spsa_delta=fields["spsa_delta"],
            spsa_lr=fields["spsa_lr"],
        )
    except ValueError:
        w.problems.append(
            f"{where}: backward_mode must be one of "
            f"{[m.value for m in BackwardMode]}, got '{fields['backward_mode']}'"
        )
        return None
    except MaskreconError as e:
        w.problems.append(f"{where}: {e}")
        return None
    return AttackRow(name=fields["name"], kind=kind, cfg=cfg, transfer=fields["transfer"])


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises ConfigError listing every violation."""
    w = _Walker()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"invalid JSON: {e}"]) from e
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])

    allowed = {
        "seed", "output_dir", "dataset", "model", "train", "estimator",
        "attacks", "eval", "sweep",
    }
    w.check_keys("top level", raw, allowed)
    seed = w.get("top level", raw, "seed", int, 0)
    output_dir = w.get("top level", raw, "output_dir", str, "out")

    dataset_obj = w.get("top level", raw, "dataset", dict)
    dataset = _parse_dataset(w, dataset_obj)

    hidden = (256, 128)
    model_obj = w.get("top level", raw, "model", dict, None)
    if model_obj is not None:
        w.check_keys("model", model_obj, {"hidden"})
        hidden_list = w.get("model", model_obj, "hidden", list, [256, 128])
        if hidden_list is not None:
            if all(isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in hidden_list):
                hidden = tuple(hidden_list)
            else:
                w.problems.append("model: 'hidden' must be a list of positive integers")

    train = None
    train_obj = w.get("top level", raw, "train", dict, None)
    if train_obj is not None:
        fields = _parse_section(w, "train", train_obj, _TRAIN_KEYS)
        if fields is not None:
            try:
                train = TrainConfig(**fields)
            except MaskreconError as e:
                w.problems.append(f"train: {e}")

    estimator = EstimatorConfig()
    est_obj = w.get("top level", raw, "estimator", dict, None)
    if est_obj is not None:
        fields = _parse_section(w, "estimator", est_obj, _ESTIMATOR_KEYS)
        if fields is not None:
            try:
                estimator = EstimatorConfig(
                    method=Method(fields["method"]),
                    usvt_eta=fields["usvt_eta"],
                    si_lambda=fields["si_lambda"],
                    max_iters=fields["max_iters"],
                    tol=fields["tol"],
                    nn_lambda_min=fields["nn_lambda_min"],
                    nn_anneal=fields["nn_anneal"],
                    clip_range=(fields["clip_lo"], fields["clip_hi"]),
                )
            except ValueError:
                w.problems.append(
                    f"estimator: method must be one of {[m.value for m in Method]}, "
                    f"got '{fields['method']}'"
                )
            except MaskreconError as e:
                w.problems.append(f"estimator: {e}")

    attacks = []
    attacks_obj = w.get("top level", raw, "attacks", list, [])
    if attacks_obj:
        for i, entry in enumerate(attacks_obj):
            row = _parse_attack(w, i, entry)
            if row is not None:
                attacks.append(row)

    eval_limit, votes = None, None
    eval_obj = w.get("top level", raw, "eval", dict, None)
    if eval_obj is not None:
        w.check_keys("eval", eval_obj, {"limit", "votes"})
        eval_limit = w.get("eval", eval_obj, "limit", int, None)
        votes = w.get("eval", eval_obj, "votes", int, None)
        if eval_limit is not None and eval_limit < 1:
            w.problems.append(f"eval: limit must be >= 1, got {eval_limit}")
        if votes is not None and votes < 1:
            w.problems.append(f"eval: votes must be >= 1, got {votes}")

    sweep_ranges = None
    sweep_obj = w.get("top level", raw, "sweep", dict, None)
    if sweep_obj is not None:
        w.check_keys("sweep", sweep_obj, {"ranges"})
        ranges = w.get("sweep", sweep_obj, "ranges", list)
        if ranges is not None:
            parsed = []
            for i, pair in enumerate(ranges):
                if (
                    isinstance(pair, list)
                    and len(pair) == 2
                    and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pair)
                ):
                    parsed.append((float(pair[0]), float(pair[1])))
                else:
                    w.problems.append(f"sweep: ranges[{i}] must be [a, b] numbers")
            sweep_ranges = tuple(parsed)

    if w.problems:
        raise ConfigError(w.problems)
    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        dataset=dataset,
        hidden=hidden,
        train=train,
        estimator=estimator,
        attacks=tuple(attacks),
        eval_limit=eval_limit,
        votes=votes,
        sweep_ranges=sweep_ranges,
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def config_to_json(cfg: ExperimentConfig) -> str:
    """Serialize so that parse_config(config_to_json(cfg)) == cfg."""
    out = {"seed": cfg.seed, "output_dir": cfg.output_dir}
    ds = {"kind": cfg.dataset.kind}
    if cfg.dataset.kind == "idx":
        ds["images"] = cfg.dataset.images
        ds["labels"] = cfg.dataset.labels
    else:
        s = cfg.dataset.synthetic
        ds.update(
            count=s.count, height=s.height, width=s.width, channels=s.channels,
            rank=s.rank, noise_sigma=s.noise_sigma, classes=s.classes,
        )
    if cfg.dataset.limit is not None:
        ds["limit"] = cfg.dataset.limit
    out["dataset"] = ds
    out["model"] = {"hidden": list(cfg.hidden)}
    if cfg.train is not None:
        out["train"] = {
            "p_start": cfg.train.p_start,
            "p_end": cfg.train.p_end,
            "n_masks": cfg.train.n_masks,
            "include_endpoint": cfg.train.include_endpoint,
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "lr": cfg.train.lr,
            "momentum": cfg.train.momentum,
            "adversarial": cfg.train.adversarial,
            "adv_steps": cfg.train.adv_steps,
            "adv_epsilon": cfg.train.adv_epsilon,
            "adv_step_size": cfg.train.adv_step_size,
            "adv_through_defense": cfg.train.adv_through_defense,
        }
    est = cfg.estimator
    out["estimator"] = {
        "method": est.method.value,
        "usvt_eta": est.usvt_eta,
        "si_lambda": est.si_lambda,
        "max_iters": est.max_iters,
        "tol": est.tol,
        "nn_lambda_min": est.nn_lambda_min,
        "nn_anneal": est.nn_anneal,
        "clip_lo": est.clip_range[0],
        "clip_hi": est.clip_range[1],
    }
    rows = []
    for a in cfg.attacks:
        rows.append(
            {
                "name": a.name,
                "kind": a.kind.value,
                "epsilon": a.cfg.epsilon,
                "step_size": a.cfg.step_size,
                "steps": a.cfg.steps,
                "restarts": a.cfg.restarts,
                "random_start": a.cfg.random_start,
                "backward_mode": a.cfg.backward_mode.value,
                **(
                    {"projection_rank_k": a.cfg.projection_rank_k}
                    if a.cfg.projection_rank_k is not None
                    else {}
                ),
                "spsa_batch": a.cfg.spsa_batch,
                "spsa_delta": a.cfg.spsa_delta,
                "spsa_lr": a.cfg.spsa_lr,
                "transfer": a.transfer,
            }
        )
    if rows:
        out["attacks"] = rows
    eval_section = {}
    if cfg.eval_limit is not None:
        eval_section["limit"] = cfg.eval_limit
    if cfg.votes is not None:
        eval_section["votes"] = cfg.votes
    if eval_section:
        out["eval"] = eval_section
    if cfg.sweep_ranges is not None:
        out["sweep"] = {"ranges": [[a, b] for a, b in cfg.sweep_ranges]}
    return json.dumps(out, indent=2) + "\n"
