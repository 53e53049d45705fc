"""Training on mask-reconstructed data, standard / majority-vote inference,
robustness evaluation, and the generalization-robustness sweep.

Seed policy: every random decision derives from one root seed through
derive_seed(root, tag, indices...), so augmentation, training, inference, and
evaluation are bit-reproducible and parallelizable per image.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .attacks import (
    AttackConfig,
    BackwardMode,
    approx_input_attack,
    fgsm,
    pgd,
    projected_bpda,
    spsa_attack,
)
from .errors import (
    ConfigError,
    EmptyInputError,
    InvalidRangeError,
    MaskreconError,
    NumericalError,
)
from .estimation import Defense, EstimatorConfig, ImageTensor, reconstruct_image
from .masking import MaskSchedule, derive_seed, inference_p, rng_from_seed
from .model import Classifier, ClassifierParams, init_params, loss_and_grad, sgd_step

__all__ = [
    "Dataset",
    "TrainPlan",
    "AttackKind",
    "AttackSpec",
    "EvalRow",
    "EvalReport",
    "SweepRow",
    "mask_augment",
    "train",
    "infer",
    "infer_vote",
    "evaluate",
    "tradeoff_sweep",
    "eval_report_csv",
    "sweep_csv",
]

_TAG_AUG = 201
_TAG_INIT = 202
_TAG_SHUFFLE = 203
_TAG_ADV = 204
_TAG_ADV_RECON = 205
_TAG_INFER = 206
_TAG_VOTE = 207
_TAG_CLEAN = 208
_TAG_ATTACK = 209
_TAG_REPLAY = 210
_TAG_SWEEP = 211
_TAG_RESAMPLE = 212


@dataclass(frozen=True)
class Dataset:
    """Images with integer class labels."""

    images: tuple
    labels: tuple

    def __post_init__(self):
        images = tuple(self.images)
        labels = tuple(int(y) for y in self.labels)
        if len(images) != len(labels):
            raise InvalidRangeError(
                f"{len(images)} images but {len(labels)} labels"
            )
        if any(y < 0 for y in labels):
            raise InvalidRangeError("labels must be non-negative")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def n_classes(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def subset(self, indices) -> "Dataset":
        return Dataset(
            images=tuple(self.images[i] for i in indices),
            labels=tuple(self.labels[i] for i in indices),
        )

    def flat_inputs(self) -> np.ndarray:
        return np.stack([img.flatten() for img in self.images])


@dataclass(frozen=True)
class TrainPlan:
    schedule: MaskSchedule
    estimator: EstimatorConfig
    epochs: int
    batch_size: int
    lr: float
    momentum: float = 0.9
    hidden: tuple = (256, 128)
    adversarial: bool = False
    adv_steps: int = 7
    adv_epsilon: float = 0.3
    adv_step_size: float = 0.01
    adv_through_defense: bool = True
    resample_per_epoch: bool = False
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"momentum must be in [0, 1), got {self.momentum}")
        if self.adversarial and self.adv_steps < 1:
            problems.append(f"adv_steps must be >= 1, got {self.adv_steps}")
        if self.adv_epsilon < 0:
            problems.append(f"adv_epsilon must be >= 0, got {self.adv_epsilon}")
        if self.adv_step_size <= 0:
            problems.append(f"adv_step_size must be > 0, got {self.adv_step_size}")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def mask_augment(dataset: Dataset, schedule: MaskSchedule, estimator: EstimatorConfig, seed: int) -> Dataset:
    """Replace each image by its n mask-and-reconstruct variants (one per
    schedule probability), labels copied; |output| = n * |input|."""
    images, labels = [], []
    for i, (img, y) in enumerate(zip(dataset.images, dataset.labels)):
        for j, p in enumerate(schedule.probs):
            try:
                images.append(
                    reconstruct_image(img, p, derive_seed(seed, _TAG_AUG, i, j), estimator)
                )
            except MaskreconError as e:
                raise type(e)(f"augmentation failed at image {i}: {e}") from e
            labels.append(y)
    return Dataset(images=tuple(images), labels=tuple(labels))


def _adv_batch(params, defense, images, labels, plan: TrainPlan, epoch: int, indices):
    """PGD examples for one mini-batch against the current model."""
    clf = Classifier(params)
    cfg = AttackConfig(
        epsilon=plan.adv_epsilon,
        step_size=plan.adv_step_size,
        steps=plan.adv_steps,
        restarts=1,
        random_start=True,
        backward_mode=(
            BackwardMode.IDENTITY_BPDA if plan.adv_through_defense else BackwardMode.NONE
        ),
    )
    rows = []
    for img, y, idx in zip(images, labels, indices):
        res = pgd(
            clf,
            defense if plan.adv_through_defense else None,
            img,
            y,
            cfg,
            seed=derive_seed(plan.seed, _TAG_ADV, epoch, int(idx)),
        )
        if plan.adv_through_defense:
            seen = defense.apply(
                res.adversarial, derive_seed(plan.seed, _TAG_ADV_RECON, epoch, int(idx))
            )
            rows.append(seen.flatten())
        else:
            rows.append(res.adversarial.flatten())
    return np.stack(rows)


def train(plan: TrainPlan, dataset: Dataset):
    """Mask-augment the dataset, then train the classifier with momentum SGD.

    The adversarial path replaces every mini-batch with PGD(adv_steps)
    examples generated against the current model (through the defense with an
    identity backward pass by default). With resample_per_epoch the augmented
    set is redrawn before every epoch after the first, so each epoch sees
    fresh masks. Returns (params, per-epoch log).
    """
    if len(dataset) == 0:
        raise EmptyInputError("train needs a non-empty dataset")
    augmented = mask_augment(dataset, plan.schedule, plan.estimator, plan.seed)
    d = augmented.images[0].flatten().size
    classes = augmented.n_classes
    params = init_params((d, *plan.hidden, classes), derive_seed(plan.seed, _TAG_INIT))
    defense = Defense(estimator=plan.estimator, p=inference_p(plan.schedule))

    inputs = augmented.flat_inputs()
    labels = np.asarray(augmented.labels, dtype=np.int64)
    velocity = None
    log = []
    n = len(augmented)
    for epoch in range(plan.epochs):
        if plan.resample_per_epoch and epoch > 0:
            augmented = mask_augment(
                dataset,
                plan.schedule,
                plan.estimator,
                derive_seed(plan.seed, _TAG_RESAMPLE, epoch),
            )
            inputs = augmented.flat_inputs()
            labels = np.asarray(augmented.labels, dtype=np.int64)
        order = rng_from_seed(derive_seed(plan.seed, _TAG_SHUFFLE, epoch)).permutation(n)
        losses = []
        for start in range(0, n, plan.batch_size):
            batch_idx = order[start: start + plan.batch_size]
            if plan.adversarial:
                x_batch = _adv_batch(
                    params,
                    defense,
                    [augmented.images[i] for i in batch_idx],
                    [augmented.labels[i] for i in batch_idx],
                    plan,
                    epoch,
                    batch_idx,
                )
            else:
                x_batch = inputs[batch_idx]
            loss, grads = loss_and_grad(params, x_batch, labels[batch_idx])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {start // plan.batch_size}"
                )
            params, velocity = sgd_step(params, grads, plan.lr, plan.momentum, velocity)
            losses.append(loss)
        preds = Classifier(params).predict_batch(inputs)
        log.append(
            {
                "epoch": epoch,
                "mean_loss": float(np.mean(losses)),
                "train_accuracy": float(np.mean(preds == labels)),
            }
        )
    return params, tuple(log)


def infer(params: ClassifierParams, estimator: EstimatorConfig, schedule: MaskSchedule, img: ImageTensor, seed: int) -> int:
    """One mask at the schedule mean, reconstruct, classify."""
    recon = reconstruct_image(img, inference_p(schedule), seed, estimator)
    return Classifier(params).predict(recon.flatten())


def infer_vote(params: ClassifierParams, estimator: EstimatorConfig, p: float, img: ImageTensor, votes: int = 10, seed: int = 0) -> int:
    """Plurality over independent mask-reconstruct-predict rounds; ties break
    to the lowest label index."""
    if votes < 1:
        raise InvalidRangeError(f"votes must be >= 1, got {votes}")
    clf = Classifier(params)
    counts = {}
    for r in range(votes):
        # Round 0 reuses the caller seed so a 1-vote election is exactly the
        # single-shot inference; later rounds get derived streams.
        rseed = seed if r == 0 else derive_seed(seed, _TAG_VOTE, r)
        recon = reconstruct_image(img, p, rseed, estimator)
        label = clf.predict(recon.flatten())
        counts[label] = counts.get(label, 0) + 1
    best = max(counts.items(), key=lambda kv: (kv[1], -kv[0]))
    return int(best[0])


class AttackKind(str, Enum):
    FGSM = "fgsm"
    PGD = "pgd"
    SPSA = "spsa"
    APPROX_INPUT = "approx_input"
    PROJECTED_BPDA = "projected_bpda"


@dataclass(frozen=True)
class AttackSpec:
    """One row of an evaluation grid. With a surrogate, the attack runs
    white-box against the surrogate network and the resulting images are
    replayed against the defended victim (transfer attack)."""

    name: str
    kind: AttackKind
    cfg: AttackConfig
    surrogate: ClassifierParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))


@dataclass(frozen=True)
class EvalRow:
    p_range: str
    method: str
    attack: str
    steps: int
    accuracy: float
    error: str = ""


@dataclass(frozen=True)
class EvalReport:
    clean_accuracy: float
    rows: tuple


def _defended_predict(clf: Classifier, defense, img: ImageTensor, seed: int) -> int:
    if defense is None:
        return clf.predict(img.flatten())
    return clf.predict(defense.apply(img, seed).flatten())


_ATTACK_FNS = {
    AttackKind.FGSM: lambda model, defense, img, y, cfg, seed: fgsm(model, defense, img, y, cfg, seed),
    AttackKind.PGD: lambda model, defense, img, y, cfg, seed: pgd(model, defense, img, y, cfg, seed),
    AttackKind.SPSA: lambda model, defense, img, y, cfg, seed: spsa_attack(model, defense, img, y, cfg, seed),
    AttackKind.APPROX_INPUT: lambda model, defense, img, y, cfg, seed: approx_input_attack(defense, model, img, y, cfg, seed),
    AttackKind.PROJECTED_BPDA: lambda model, defense, img, y, cfg, seed: projected_bpda(defense, model, img, y, cfg, seed),
}


def evaluate(params: ClassifierParams, defense, dataset: Dataset, grid, seed: int = 0, p_range_label: str = "") -> EvalReport:
    """Clean accuracy plus one accuracy row per attack in the grid.

    Accuracy under attack counts an image as defended only when the attack's
    success flag is false (for restarts: every restart failed). Transfer rows
    re-judge the surrogate-crafted image through the victim pipeline. Attack
    failures are recorded in the row's error column instead of aborting.
    """
    if len(dataset) == 0:
        raise EmptyInputError("evaluate needs a non-empty dataset")
    grid = tuple(grid)
    clf = Classifier(params)
    method = defense.estimator.method.value if defense is not None else "none"

    correct = 0
    for i, (img, y) in enumerate(zip(dataset.images, dataset.labels)):
        pred = _defended_predict(clf, defense, img, derive_seed(seed, _TAG_CLEAN, i))
        correct += int(pred == y)
    clean_acc = correct / len(dataset)

    rows = [
        EvalRow(
            p_range=p_range_label,
            method=method,
            attack="clean",
            steps=0,
            accuracy=clean_acc,
        )
    ]
    for row_idx, spec in enumerate(grid):
        try:
            defended = 0
            for i, (img, y) in enumerate(zip(dataset.images, dataset.labels)):
                attack_seed = derive_seed(seed, _TAG_ATTACK, row_idx, i)
                if spec.surrogate is not None:
                    res = _ATTACK_FNS[spec.kind](
                        Classifier(spec.surrogate), None, img, y, spec.cfg, attack_seed
                    )
                    replay = _defended_predict(
                        clf, defense, res.adversarial, derive_seed(seed, _TAG_REPLAY, row_idx, i)
                    )
                    fooled = replay != y
                else:
                    res = _ATTACK_FNS[spec.kind](clf, defense, img, y, spec.cfg, attack_seed)
                    fooled = res.success
                defended += int(not fooled)
            rows.append(
                EvalRow(
                    p_range=p_range_label,
                    method=method,
                    attack=spec.name,
                    steps=spec.cfg.steps,
                    accuracy=defended / len(dataset),
                )
            )
        except MaskreconError as e:
            rows.append(
                EvalRow(
                    p_range=p_range_label,
                    method=method,
                    attack=spec.name,
                    steps=spec.cfg.steps,
                    accuracy=float("nan"),
                    error=str(e),
                )
            )
    return EvalReport(clean_accuracy=clean_acc, rows=tuple(rows))


@dataclass(frozen=True)
class SweepRow:
    p_range: str
    clean_accuracy: float
    robust_accuracy: float


def tradeoff_sweep(dataset: Dataset, p_ranges, estimator: EstimatorConfig, attack: AttackSpec, plan: TrainPlan, eval_dataset: Dataset | None = None, seed: int = 0):
    """Train one model per masking range (shared training seed) and report
    clean and under-attack accuracy for each."""
    p_ranges = list(p_ranges)
    if not p_ranges:
        raise EmptyInputError("tradeoff_sweep needs at least one p-range")
    from .masking import make_schedule  # local import to keep module top light

    eval_set = dataset if eval_dataset is None else eval_dataset
    rows = []
    for a, b in p_ranges:
        schedule = make_schedule(a, b, plan.schedule.n)
        range_plan = replace(plan, schedule=schedule, estimator=estimator)
        params, _ = train(range_plan, dataset)
        defense = Defense(estimator=estimator, p=inference_p(schedule))
        report = evaluate(
            params,
            defense,
            eval_set,
            (attack,),
            seed=derive_seed(seed, _TAG_SWEEP),
            p_range_label=f"{a:g}-{b:g}",
        )
        attack_row = report.rows[1]
        rows.append(
            SweepRow(
                p_range=f"{a:g}-{b:g}",
                clean_accuracy=report.clean_accuracy,
                robust_accuracy=attack_row.accuracy,
            )
        )
    return tuple(rows)


def eval_report_csv(report: EvalReport, seed: int) -> str:
    lines = [f"# seed={seed}", "p_range,method,attack,steps,accuracy,error"]
    for r in report.rows:
        lines.append(
            f"{r.p_range},{r.method},{r.attack},{r.steps},{r.accuracy!r},{r.error}"
        )
    return "\n".join(lines) + "\n"


def sweep_csv(rows, seed: int) -> str:
    lines = [f"# seed={seed}", "p_range,clean_accuracy,robust_accuracy"]
    for r in rows:
        lines.append(f"{r.p_range},{r.clean_accuracy!r},{r.robust_accuracy!r}")
    return "\n".join(lines) + "\n"
