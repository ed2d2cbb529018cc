"""Analytic FLOP accounting, latency measurement, and patch statistics.

The analytic model mirrors the instrumented counter in the numeric core
primitive by primitive (2 FLOPs per multiply-add, fixed per-element costs
for softmax/norm/activation), so any disagreement indicates a structural
mismatch rather than a convention difference.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import (
    ModelConfig,
    ModelParams,
    classify,
    fresh_memory,
    memory_update,
    param_spec,
    process_window,
)
from .representation import PatchToken, ReprConfig, next_window, window_iterator


@dataclass(frozen=True)
class FlopReport:
    """Per-window inference cost split by component, plus the model size."""

    tokens: int
    ff1: int
    ff2: int
    cross_attention: int
    self_attention: int
    classifier: int
    params: int

    @property
    def total(self) -> int:
        return (self.ff1 + self.ff2 + self.cross_attention
                + self.self_attention + self.classifier)

    @property
    def gflops(self) -> float:
        return self.total / 1e9


@dataclass(frozen=True)
class LatencyReport:
    """Wall-clock samples of per-window network time, warmup excluded."""

    samples_ms: np.ndarray
    mean_ms: float
    median_ms: float
    p95_ms: float
    budget_ms: float

    @property
    def budget_met(self) -> bool:
        return self.median_ms < self.budget_ms


@dataclass(frozen=True)
class PatchStats:
    """Distribution of activated-patch counts per window over a dataset."""

    n_windows: int
    mean_tokens: float
    median_tokens: float
    histogram: dict[int, int]
    mean_activated_fraction: float


def _mha_flops(n_q: int, n_kv: int, d: int, heads: int) -> int:
    proj = 2 * n_q * d * d + n_q * d          # queries
    proj += 2 * (2 * n_kv * d * d + n_kv * d)  # keys and values
    scores_mix = 4 * n_q * n_kv * d           # QK^T and the weighted sum
    pointwise = (1 + ad.SOFTMAX_FLOPS_PER_ELEM) * heads * n_q * n_kv
    out = 2 * n_q * d * d + n_q * d
    return proj + scores_mix + pointwise + out


def _ffn_flops(n: int, d: int, hidden: int) -> int:
    up = 2 * n * d * hidden + n * hidden
    act = ad.GELU_FLOPS_PER_ELEM * n * hidden
    down = 2 * n * hidden * d + n * d
    return up + act + down


def _block_flops(n_q: int, n_kv: int, cfg: ModelConfig, kv_norm: bool) -> int:
    d, hidden = cfg.dim, cfg.ff_mult * cfg.dim
    ln = ad.LAYER_NORM_FLOPS_PER_ELEM
    cost = ln * n_q * d                       # query norm
    if kv_norm:
        cost += ln * n_kv * d                 # dedicated key/value norm
    cost += _mha_flops(n_q, n_kv, d, cfg.heads)
    cost += n_q * d                           # attention residual
    cost += ln * n_q * d                      # pre-FF norm
    cost += _ffn_flops(n_q, d, hidden)
    cost += n_q * d                           # FF residual
    return cost


def count_flops(cfg: ModelConfig, tokens: int) -> FlopReport:
    """Analytic per-window inference FLOPs for a token count."""
    if tokens < 1:
        raise ValueError("token count must be >= 1")
    t, d, m = tokens, cfg.dim, cfg.num_latents
    ff1 = 2 * t * cfg.token_dim * d + t * d
    ff1 += 2 * t * (d + cfg.pos_dim) * d + t * d
    ff2 = _ffn_flops(t, d, cfg.ff_mult * d) + t * d  # skip-connection add
    cross = _block_flops(m, t, cfg, kv_norm=True)
    self_att = cfg.self_blocks * _block_flops(m, m, cfg, kv_norm=False)
    c = cfg.num_classes
    classifier = (2 * m * d * d + m * d
                  + ad.GELU_FLOPS_PER_ELEM * m * d
                  + m * d                              # mean pool
                  + 2 * d * c + c
                  + ad.LOG_SOFTMAX_FLOPS_PER_ELEM * c)
    n_params = sum(rows * cols for _, (rows, cols), _ in param_spec(cfg))
    return FlopReport(tokens=tokens, ff1=ff1, ff2=ff2, cross_attention=cross,
                      self_attention=self_att, classifier=classifier,
                      params=n_params)


def random_tokens(cfg: ModelConfig, count: int,
                  rng: np.random.Generator) -> list[PatchToken]:
    """Synthetic tokens for cost and latency probes at a chosen T."""
    cells = rng.integers(0, cfg.grid_h * cfg.grid_w, size=count)
    return [PatchToken(rng.normal(size=cfg.token_dim),
                       int(c) // cfg.grid_w, int(c) % cfg.grid_w)
            for c in cells]


def verify_flops(cfg: ModelConfig, tokens: int, seed: int = 0) -> float:
    """Max relative deviation of the analytic model from an instrumented run.

    Runs process_window + classify under the numeric core's FLOP counter
    and compares each component and the total against :func:`count_flops`.
    """
    rng = np.random.default_rng(seed)
    params = ModelParams.init(cfg, seed=seed)
    toks = random_tokens(cfg, tokens, rng)
    memory = fresh_memory(params)
    with ad.FlopCounter() as counter:
        out, _ = process_window(toks, memory, params, cfg)
        classify(memory_update(memory, out), params)
    report = count_flops(cfg, tokens)
    analytic = {
        "ff1": report.ff1,
        "ff2": report.ff2,
        "cross_attention": report.cross_attention,
        "self_attention": report.self_attention,
        "classifier": report.classifier,
    }
    worst = 0.0
    measured_total = 0
    for scope, want in analytic.items():
        got = counter.by_scope.get(scope, 0)
        if scope == "self_attention" and cfg.self_blocks == 0:
            if got:
                raise AssertionError("self-attention FLOPs without blocks")
            continue
        measured_total += got
        worst = max(worst, abs(want - got) / got)
    worst = max(worst, abs(report.total - measured_total) / measured_total)
    return worst


def time_window(tokens: list[PatchToken], params: ModelParams,
                cfg: ModelConfig, reps: int = 20,
                warmup: int = 5) -> np.ndarray:
    """Per-repetition wall-clock seconds of process_window + memory_update."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    memory = fresh_memory(params)
    samples = np.empty(reps)
    for i in range(warmup + reps):
        start = time.perf_counter()
        out, _ = process_window(tokens, memory, params, cfg)
        memory_update(memory, out)
        elapsed = time.perf_counter() - start
        if i >= warmup:
            samples[i - warmup] = elapsed
    return samples


def measure_latency(stream, params: ModelParams, cfg: ModelConfig,
                    repr_cfg: ReprConfig, warmup: int = 5, reps: int = 10,
                    include_repr: bool = False) -> LatencyReport:
    """Time each window of a stream; the first ``warmup`` windows are dropped.

    With ``include_repr`` the timed section also rebuilds the window's
    representation (frame + tokenization); otherwise only the network and
    the memory update are measured.  Single-threaded, monotonic clock.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    spans = []
    cursor = 0
    for result in window_iterator(stream, repr_cfg):
        if result.tokens:
            spans.append((cursor, result))
        cursor = result.window_end
    if len(spans) <= warmup:
        raise ValueError(f"stream has {len(spans)} usable windows; "
                         f"need more than warmup={warmup}")
    memory = fresh_memory(params)
    samples = []
    for w, (start_us, result) in enumerate(spans):
        for _ in range(reps):
            t0 = time.perf_counter()
            if include_repr:
                rebuilt = next_window(stream, start_us, repr_cfg)
                tokens = rebuilt.tokens
            else:
                tokens = result.tokens
            out, _ = process_window(tokens, memory, params, cfg)
            candidate = memory_update(memory, out)
            elapsed = time.perf_counter() - t0
            if w >= warmup:
                samples.append(elapsed)
        memory = candidate
    arr = np.array(samples) * 1e3
    return LatencyReport(
        samples_ms=arr,
        mean_ms=float(arr.mean()),
        median_ms=float(np.median(arr)),
        p95_ms=float(np.percentile(arr, 95)),
        budget_ms=repr_cfg.delta_t_us / 1e3,
    )


def patch_stats(dataset, repr_cfg: ReprConfig) -> PatchStats:
    """Distribution of the activated-patch count T per window."""
    if not dataset:
        raise ValueError("patch_stats requires a non-empty dataset")
    counts = []
    fractions = []
    for stream in dataset:
        gh, gw = repr_cfg.grid_shape(stream.width, stream.height)
        capacity = gh * gw
        for result in window_iterator(stream, repr_cfg):
            if not result.tokens:
                continue
            counts.append(len(result.tokens))
            fractions.append(len(result.tokens) / capacity)
    if not counts:
        raise ValueError("dataset produced no activated windows")
    arr = np.array(counts)
    hist: dict[int, int] = {}
    for t in counts:
        hist[t] = hist.get(t, 0) + 1
    return PatchStats(
        n_windows=len(counts),
        mean_tokens=float(arr.mean()),
        median_tokens=float(np.median(arr)),
        histogram=dict(sorted(hist.items())),
        mean_activated_fraction=float(np.mean(fractions)),
    )
