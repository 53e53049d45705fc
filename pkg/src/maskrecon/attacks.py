"""L-infinity attack suite: FGSM, PGD with restarts, BPDA variants through a
mask-and-reconstruct preprocessing stage, and gradient-free SPSA.

Conventions shared by every attack:

- `model` exposes predict(flat) -> int, logits(flat or batch) -> ndarray, and
  loss_and_input_grad(flat, label) -> (loss, grad). `Classifier` satisfies it.
- `defense` is None or exposes apply(img: ImageTensor, seed: int) -> ImageTensor.
  When a defense is present, attack success is always judged through it.
- Every attack is a pure function of its arguments including `seed`; the
  per-restart, per-step, and sampling seeds are derived with derive_seed, so a
  run with restarts=r reproduces the first r runs of any larger restart count.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, InvalidRangeError, NumericalError
from .estimation import ImageTensor, to_wide_matrix
from .masking import derive_seed, rng_from_seed
from .numerics import svd

__all__ = [
    "BackwardMode",
    "AttackConfig",
    "AttackResult",
    "fgsm",
    "pgd",
    "bpda_gradient",
    "approx_input_attack",
    "projected_bpda",
    "spsa_gradient_estimate",
    "spsa_attack",
]

# Seed-derivation tags (arbitrary distinct constants).
_TAG_RESTART = 101
_TAG_START = 102
_TAG_DEFENSE = 103
_TAG_FINAL = 104
_TAG_SPSA_DRAW = 105
_TAG_SPSA_EVAL = 106
_TAG_APPROX = 107


class BackwardMode(str, Enum):
    NONE = "none"
    IDENTITY_BPDA = "identity_bpda"
    PROJECTED_BPDA = "projected_bpda"
    APPROX_INPUT = "approx_input"


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    steps: int = 7
    restarts: int = 1
    random_start: bool = True
    backward_mode: BackwardMode = BackwardMode.NONE
    projection_rank_k: int | None = None
    recompute_projection_basis: bool = False
    spsa_batch: int = 2048
    spsa_delta: float = 0.01
    spsa_lr: float = 0.01

    def __post_init__(self):
        problems = []
        if self.epsilon < 0:
            problems.append(f"epsilon must be >= 0, got {self.epsilon}")
        if self.step_size <= 0:
            problems.append(f"step_size must be > 0, got {self.step_size}")
        if self.steps < 1:
            problems.append(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            problems.append(f"restarts must be >= 1, got {self.restarts}")
        mode = BackwardMode(self.backward_mode)
        if mode is BackwardMode.PROJECTED_BPDA:
            if self.projection_rank_k is None or self.projection_rank_k < 1:
                problems.append("projected backward mode needs projection_rank_k >= 1")
        if self.spsa_batch < 1:
            problems.append(f"spsa_batch must be >= 1, got {self.spsa_batch}")
        if self.spsa_delta <= 0:
            problems.append(f"spsa_delta must be > 0, got {self.spsa_delta}")
        if self.spsa_lr <= 0:
            problems.append(f"spsa_lr must be > 0, got {self.spsa_lr}")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "backward_mode", mode)


@dataclass(frozen=True)
class AttackResult:
    """`origin` is the budget anchor: ||adversarial - origin||_inf <= epsilon."""

    adversarial: ImageTensor
    origin: ImageTensor
    final_loss: float
    steps: int
    success: bool


def _flat(img: ImageTensor) -> np.ndarray:
    return img.flatten()


def _img_like(flat: np.ndarray, ref: ImageTensor) -> ImageTensor:
    return ImageTensor.from_flat(
        np.clip(flat, 0.0, 1.0), ref.height, ref.width, ref.channels
    )


def _defended_flat(defense, flat: np.ndarray, ref: ImageTensor, seed: int) -> np.ndarray:
    if defense is None:
        return flat
    return defense.apply(_img_like(flat, ref), seed).flatten()


def _check_finite(g: np.ndarray):
    if not np.all(np.isfinite(g)):
        raise NumericalError("attack gradient is non-finite")
    return g


class _Projector:
    """Projection onto the span of the top-k singular vectors of a wide matrix:
    G -> U_k U_k^T G V_k V_k^T. Exact identity shortcut for square matrices
    with k = min(dims)."""

    def __init__(self, wide: np.ndarray, k: int):
        m, n = wide.shape
        if k > min(m, n):
            raise InvalidRangeError(
                f"projection_rank_k={k} exceeds min dims {min(m, n)} of the wide matrix"
            )
        self.identity = k == min(m, n) and m == n
        if not self.identity:
            res = svd(wide)
            self.u_k = res.u[:, :k]
            self.v_k = res.vt[:k, :].T

    def __call__(self, g_wide: np.ndarray) -> np.ndarray:
        if self.identity:
            return g_wide
        return self.u_k @ (self.u_k.T @ g_wide @ self.v_k) @ self.v_k.T


def _project_flat(grad_flat: np.ndarray, ref: ImageTensor, projector: _Projector) -> np.ndarray:
    if projector.identity:
        return grad_flat
    g_img = grad_flat.reshape(ref.height, ref.width, ref.channels)
    g_wide = np.concatenate([g_img[:, :, c] for c in range(ref.channels)], axis=1)
    p_wide = projector(g_wide)
    w = ref.width
    planes = [p_wide[:, c * w: (c + 1) * w] for c in range(ref.channels)]
    return np.stack(planes, axis=2).reshape(-1)


def _pgd_run(model, defense, x: ImageTensor, label: int, cfg: AttackConfig, run_seed: int):
    x0 = _flat(x)
    eps = cfg.epsilon
    if cfg.random_start and eps > 0:
        rng = rng_from_seed(derive_seed(run_seed, _TAG_START))
        adv = np.clip(x0 + rng.uniform(-eps, eps, size=x0.shape), 0.0, 1.0)
    else:
        adv = x0.copy()

    mode = cfg.backward_mode
    projector = None
    if mode is BackwardMode.PROJECTED_BPDA and defense is not None:
        projector = _Projector(to_wide_matrix(x), cfg.projection_rank_k)

    for step in range(cfg.steps):
        if defense is None or mode is BackwardMode.NONE:
            _, grad = model.loss_and_input_grad(adv, label)
        else:
            z = _defended_flat(defense, adv, x, derive_seed(run_seed, _TAG_DEFENSE, step))
            _, grad = model.loss_and_input_grad(z, label)
            if projector is not None:
                if cfg.recompute_projection_basis:
                    projector = _Projector(
                        to_wide_matrix(_img_like(adv, x)), cfg.projection_rank_k
                    )
                grad = _project_flat(grad, x, projector)
        _check_finite(grad)
        adv = adv + cfg.step_size * np.sign(grad)
        adv = np.clip(np.clip(adv, x0 - eps, x0 + eps), 0.0, 1.0)

    final = _defended_flat(defense, adv, x, derive_seed(run_seed, _TAG_FINAL))
    final_loss, _ = model.loss_and_input_grad(final, label)
    success = model.predict(final) != label
    return adv, final_loss, success


def pgd(model, defense, x: ImageTensor, label: int, cfg: AttackConfig, seed: int = 0) -> AttackResult:
    """Projected gradient descent with optional restarts.

    Each restart runs independently (random start, its own derived seeds); the
    returned image comes from the restart with the highest final loss, while
    the success flag is the OR across restarts: one fooling restart defeats
    the example.
    """
    if cfg.backward_mode is BackwardMode.APPROX_INPUT:
        return approx_input_attack(defense, model, x, label, cfg, seed)
    best = None
    any_success = False
    for r in range(cfg.restarts):
        adv, final_loss, success = _pgd_run(
            model, defense, x, label, cfg, derive_seed(seed, _TAG_RESTART, r)
        )
        any_success = any_success or success
        if best is None or final_loss > best[1]:
            best = (adv, final_loss)
    return AttackResult(
        adversarial=_img_like(best[0], x),
        origin=x,
        final_loss=float(best[1]),
        steps=cfg.steps * cfg.restarts,
        success=bool(any_success),
    )


def fgsm(model, defense, x: ImageTensor, label: int, cfg: AttackConfig, seed: int = 0) -> AttackResult:
    """Single signed-gradient step of size epsilon (a one-step PGD run)."""
    one_step = replace(
        cfg,
        steps=1,
        step_size=max(cfg.epsilon, np.finfo(float).tiny),
        restarts=1,
        random_start=False,
    )
    return pgd(model, defense, x, label, one_step, seed)


def bpda_gradient(defense, model, x: ImageTensor, label: int, seed: int = 0) -> np.ndarray:
    """Gradient through the defended pipeline with an identity backward pass:
    forward is model(defense(x)); the returned gradient is d loss / d z taken
    at z = defense(x), reshaped to the image."""
    z = _defended_flat(defense, _flat(x), x, seed)
    _, grad = model.loss_and_input_grad(z, label)
    return _check_finite(grad).reshape(x.height, x.width, x.channels)


def approx_input_attack(defense, model, x: ImageTensor, label: int, cfg: AttackConfig, seed: int = 0) -> AttackResult:
    """Attack the reconstruction instead of the raw image: start PGD from
    x' = defense(x) with the identity-BPDA backward pass; the perturbation
    budget is measured from x'."""
    if defense is None:
        return pgd(model, None, x, label, replace(cfg, backward_mode=BackwardMode.NONE), seed)
    x_prime = defense.apply(x, derive_seed(seed, _TAG_APPROX))
    inner = replace(cfg, backward_mode=BackwardMode.IDENTITY_BPDA)
    return pgd(model, defense, x_prime, label, inner, seed)


def projected_bpda(defense, model, x: ImageTensor, label: int, cfg: AttackConfig, seed: int = 0) -> AttackResult:
    """BPDA-PGD whose gradients are projected onto the span of the top-k
    singular vectors of the clean image's wide matrix (optionally recomputed
    from the current iterate)."""
    if cfg.projection_rank_k is None:
        raise ConfigError("projected_bpda needs projection_rank_k")
    inner = replace(cfg, backward_mode=BackwardMode.PROJECTED_BPDA)
    return pgd(model, defense, x, label, inner, seed)


def spsa_gradient_estimate(loss_fn, x_flat: np.ndarray, delta: float, batch: int, seed: int) -> np.ndarray:
    """Two-sided SPSA estimate: mean over Rademacher directions v of
    (loss(x + delta v) - loss(x - delta v)) / (2 delta) * v.

    loss_fn maps a (K, d) batch of points to a (K,) array of losses.
    """
    if delta <= 0:
        raise InvalidRangeError(f"delta must be > 0, got {delta}")
    rng = rng_from_seed(seed)
    v = rng.integers(0, 2, size=(batch, x_flat.size)).astype(np.float64) * 2.0 - 1.0
    plus = loss_fn(x_flat[None, :] + delta * v)
    minus = loss_fn(x_flat[None, :] - delta * v)
    coeff = (np.asarray(plus) - np.asarray(minus)) / (2.0 * delta)
    return (coeff[:, None] * v).mean(axis=0)


def _margin_losses(model, defense, points: np.ndarray, ref: ImageTensor, label: int, seeds) -> np.ndarray:
    """Margin loss max(logit_label - max_other, 0) of the defended pipeline
    for each row of `points`. seeds: one defense seed per row (or None)."""
    if defense is None:
        logits = model.logits(np.clip(points, 0.0, 1.0))
    else:
        rows = [
            _defended_flat(defense, np.clip(p, 0.0, 1.0), ref, s)
            for p, s in zip(points, seeds)
        ]
        logits = model.logits(np.asarray(rows))
    target = logits[:, label].copy()
    logits[:, label] = -np.inf
    margins = target - logits.max(axis=1)
    return np.maximum(margins, 0.0)


def spsa_attack(model, defense, x: ImageTensor, label: int, cfg: AttackConfig, seed: int = 0) -> AttackResult:
    """Gradient-free attack: estimates margin-loss gradients from paired
    forward evaluations of the full defended pipeline and descends with signed
    steps, projecting to the epsilon ball and the pixel box."""
    x0 = _flat(x)
    adv = x0.copy()
    queries = 0
    if cfg.epsilon > 0:
        for step in range(cfg.steps):
            rng = rng_from_seed(derive_seed(seed, _TAG_SPSA_DRAW, step))
            v = rng.integers(0, 2, size=(cfg.spsa_batch, x0.size)).astype(np.float64) * 2.0 - 1.0
            # One defense seed per direction pair, shared by the +/- sides.
            pair_seeds = [
                derive_seed(seed, _TAG_SPSA_EVAL, step, i) for i in range(cfg.spsa_batch)
            ]
            plus = _margin_losses(model, defense, adv[None, :] + cfg.spsa_delta * v, x, label, pair_seeds)
            minus = _margin_losses(model, defense, adv[None, :] - cfg.spsa_delta * v, x, label, pair_seeds)
            queries += 2 * cfg.spsa_batch
            grad = (((plus - minus) / (2.0 * cfg.spsa_delta))[:, None] * v).mean(axis=0)
            _check_finite(grad)
            adv = adv - cfg.spsa_lr * np.sign(grad)
            adv = np.clip(np.clip(adv, x0 - cfg.epsilon, x0 + cfg.epsilon), 0.0, 1.0)

    final = _defended_flat(defense, adv, x, derive_seed(seed, _TAG_FINAL))
    queries += 1
    final_loss = float(
        _margin_losses(model, None, final[None, :], x, label, None)[0]
    )
    success = model.predict(final) != label
    return AttackResult(
        adversarial=_img_like(adv, x),
        origin=x,
        final_loss=final_loss,
        steps=queries,
        success=bool(success),
    )
