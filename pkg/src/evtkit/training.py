"""Supervised training: NLL loss, AdamW, plateau LR decay, augmentations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix, Tape
from .model import ModelConfig, ModelParams, classify_windows
from .representation import PatchToken, ReprConfig, window_iterator

ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip_norm: float | None = 1.0
    batch_size: int = 16
    epochs: int = 30
    plateau_patience: int = 10   # epochs without train-loss improvement
    seed: int = 0
    token_drop_p: float = 0.0
    temporal_crop_frac: float = 1.0   # kept fraction of windows is >= this
    spatial_shift_max: int = 0
    repeat_augmented: bool = False    # each sample enters the batch twice

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive or None")
        if self.batch_size < 1 or self.epochs < 1 or self.plateau_patience < 1:
            raise ValueError("batch_size, epochs, plateau_patience must be >= 1")
        if not 0.0 <= self.token_drop_p < 1.0:
            raise ValueError("token_drop_p must be in [0, 1)")
        if not 0.0 < self.temporal_crop_frac <= 1.0:
            raise ValueError("temporal_crop_frac must be in (0, 1]")
        if self.spatial_shift_max < 0:
            raise ValueError("spatial_shift_max must be >= 0")


class OptimizerState:
    """Per-parameter first/second moment accumulators and a step counter."""

    def __init__(self, params: ModelParams):
        self.m = {n: np.zeros_like(mat.data) for n, mat in params.items()}
        self.v = {n: np.zeros_like(mat.data) for n, mat in params.items()}
        self.step = 0


def nll_loss(log_probs: Matrix, target: int) -> Matrix:
    """Negative log-likelihood of the target class, as a 1x1 matrix."""
    if not 0 <= target < log_probs.cols:
        raise ValueError(f"target {target} outside {log_probs.cols} classes")
    return ad.scale(ad.pick(log_probs, 0, target), -1.0)


def clip_gradients(grads: dict[str, np.ndarray],
                   max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        grads = {n: g * factor for n, g in grads.items()}
    return grads, norm


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray],
                   state: OptimizerState, cfg: TrainConfig,
                   lr: float | None = None) -> tuple[ModelParams, OptimizerState]:
    """One AdamW update in place: clip, update moments, decayed step."""
    for name, mat in params.items():
        g = grads.get(name)
        if g is not None and g.shape != mat.data.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, "
                             f"expected {mat.data.shape}")
    if cfg.grad_clip_norm is not None:
        grads, _ = clip_gradients(grads, cfg.grad_clip_norm)
    if lr is None:
        lr = cfg.lr
    b1, b2 = cfg.betas
    state.step += 1
    t = state.step
    for name, mat in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(mat.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        mat.data -= lr * (mhat / (np.sqrt(vhat) + ADAM_EPS)
                          + cfg.weight_decay * mat.data)
    return params, state


def augment(windows: list[list[PatchToken]], cfg: TrainConfig,
            rng: np.random.Generator,
            grid_shape: tuple[int, int]) -> list[list[PatchToken]]:
    """Temporal crop, spatial shift, and token drop over one sample.

    Windows are lists of tokens; ``grid_shape`` bounds the spatial shift.
    Every returned window keeps at least one token; windows emptied by the
    shift are removed, and if the shift would empty the whole sample the
    shift is skipped.
    """
    gh, gw = grid_shape
    n = len(windows)
    if n == 0:
        return []
    if cfg.temporal_crop_frac < 1.0 and n > 1:
        lo = max(1, math.ceil(cfg.temporal_crop_frac * n))
        keep = int(rng.integers(lo, n + 1))
        start = int(rng.integers(0, n - keep + 1))
        windows = windows[start:start + keep]
    if cfg.spatial_shift_max > 0:
        s = cfg.spatial_shift_max
        dr = int(rng.integers(-s, s + 1))
        dc = int(rng.integers(-s, s + 1))
        shifted = []
        for win in windows:
            kept = [PatchToken(t.values, t.grid_row + dr, t.grid_col + dc)
                    for t in win
                    if 0 <= t.grid_row + dr < gh and 0 <= t.grid_col + dc < gw]
            if kept:
                shifted.append(kept)
        if shifted:
            windows = shifted
    if cfg.token_drop_p > 0.0:
        dropped = []
        for win in windows:
            mask = rng.random(len(win)) >= cfg.token_drop_p
            kept = [t for t, keep in zip(win, mask) if keep]
            if not kept:
                kept = [win[int(rng.integers(0, len(win)))]]
            dropped.append(kept)
        windows = dropped
    return windows


def _sample_windows(stream, repr_cfg: ReprConfig) -> list[list[PatchToken]]:
    return [r.tokens for r in window_iterator(stream, repr_cfg) if r.tokens]


def train(dataset, model_cfg: ModelConfig, repr_cfg: ReprConfig,
          train_cfg: TrainConfig) -> tuple[ModelParams, list[dict]]:
    """Train on labeled streams; returns params and per-epoch metrics.

    The whole run is a pure function of (dataset, configs, seed): samples
    are shuffled with a seeded generator, gradients are averaged over each
    batch, and the LR halves after ``plateau_patience`` epochs without a
    new best train loss.
    """
    if not dataset:
        raise ValueError("training requires a non-empty dataset")
    if any(s.label is None for s in dataset):
        raise ValueError("training requires labeled streams")
    samples = []
    for stream in dataset:
        windows = _sample_windows(stream, repr_cfg)
        if windows:
            samples.append((windows, stream.label))
    if not samples:
        raise ValueError("no stream produced any activated window")
    if len({label for _, label in samples}) < 2:
        raise ValueError("training requires at least two classes")

    grid_shape = (model_cfg.grid_h, model_cfg.grid_w)
    rng = np.random.default_rng(train_cfg.seed)
    params = ModelParams.init(model_cfg, seed=train_cfg.seed)
    state = OptimizerState(params)
    lr = train_cfg.lr
    best_loss = math.inf
    stale_epochs = 0
    history: list[dict] = []

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(samples))
        loss_sum = 0.0
        correct = 0
        entries_seen = 0
        for lo in range(0, len(order), train_cfg.batch_size):
            batch = order[lo:lo + train_cfg.batch_size]
            grad_sum: dict[str, np.ndarray] = {}
            count = 0
            for si in batch:
                windows, label = samples[int(si)]
                repeats = 2 if train_cfg.repeat_augmented else 1
                for _ in range(repeats):
                    aug = augment(windows, train_cfg, rng, grid_shape)
                    with Tape() as tape:
                        lp = classify_windows(aug, params, model_cfg,
                                              train=True, rng=rng)
                        loss = nll_loss(lp, label)
                    grads = ad.backward(tape, loss)
                    for name, mat in params.items():
                        g = grads.get(mat)
                        if g is None:
                            continue
                        if name in grad_sum:
                            grad_sum[name] += g
                        else:
                            grad_sum[name] = g.copy()
                    loss_sum += loss.item()
                    correct += int(np.argmax(lp.data[0]) == label)
                    count += 1
            mean_grads = {n: g / count for n, g in grad_sum.items()}
            optimizer_step(params, mean_grads, state, train_cfg, lr=lr)
            entries_seen += count
        epoch_loss = loss_sum / entries_seen
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= train_cfg.plateau_patience:
                lr *= 0.5
                stale_epochs = 0
        history.append({"epoch": epoch, "loss": epoch_loss,
                        "accuracy": correct / entries_seen, "lr": lr})
    return params, history


def evaluate(dataset, params: ModelParams, model_cfg: ModelConfig,
             repr_cfg: ReprConfig) -> dict:
    """Accuracy and mean NLL over labeled streams (inference mode).

    Streams yielding no window count as misclassified and are excluded
    from the mean loss.
    """
    if not dataset:
        raise ValueError("evaluation requires a non-empty dataset")
    correct = 0
    labeled = 0
    loss_sum = 0.0
    scored = 0
    predictions = []
    for stream in dataset:
        labeled += int(stream.label is not None)
        windows = _sample_windows(stream, repr_cfg)
        if not windows:
            predictions.append(-1)
            continue
        lp = classify_windows(windows, params, model_cfg)
        pred = int(np.argmax(lp.data[0]))
        predictions.append(pred)
        if stream.label is not None:
            correct += int(pred == stream.label)
            loss_sum += -float(lp.data[0, stream.label])
            scored += 1
    return {
        "accuracy": correct / labeled if labeled else math.nan,
        "mean_loss": loss_sum / scored if scored else math.nan,
        "predictions": predictions,
    }
