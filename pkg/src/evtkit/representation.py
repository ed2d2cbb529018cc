"""Patch-based representation of event-stream windows.

A window of the stream becomes a dense count tensor (height x width x bins
x 2 polarities), is log-smoothed, split into non-overlapping square patches,
and only patches where enough pixels registered events survive as flattened
tokens.  Under-filled windows grow until they hold enough activated patches,
so the effective window length adapts to the event density.

Trailing rows/columns that do not fill a whole patch are discarded, which
keeps token length uniform.  The activation threshold reads "at least
min_pixel_pct percent" inclusively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .io import EventStream


@dataclass(frozen=True)
class ReprConfig:
    delta_t_us: int = 24_000
    bins: int = 2
    patch_size: int = 6
    min_pixel_pct: float = 7.5   # percent of patch pixels that must log events
    min_patches: int = 16        # frames with fewer activated patches expand
    expansion_step_us: int | None = None  # None: grow by another delta_t

    def __post_init__(self):
        if self.delta_t_us <= 0:
            raise ValueError("delta_t_us must be positive")
        if self.bins < 1 or self.patch_size < 1:
            raise ValueError("bins and patch_size must be >= 1")
        if not 0.0 <= self.min_pixel_pct <= 100.0:
            raise ValueError("min_pixel_pct must be in [0, 100]")
        if self.min_patches < 0:
            raise ValueError("min_patches must be >= 0")
        if self.expansion_step_us is not None and self.expansion_step_us <= 0:
            raise ValueError("expansion_step_us must be positive")

    @property
    def step_us(self) -> int:
        return self.expansion_step_us if self.expansion_step_us is not None else self.delta_t_us

    def grid_shape(self, width: int, height: int) -> tuple[int, int]:
        return height // self.patch_size, width // self.patch_size

    @property
    def token_dim(self) -> int:
        return self.patch_size * self.patch_size * self.bins * 2

    def activation_threshold(self) -> int:
        """Smallest pixel count satisfying the inclusive percentage rule."""
        exact = self.min_pixel_pct * self.patch_size * self.patch_size / 100.0
        return max(0, math.ceil(exact - 1e-9))


@dataclass
class EventFrame:
    """Per-window event counts and their log-smoothed form.

    ``counts[y, x, b, p]`` is the number of polarity-p events at pixel
    (x, y) whose timestamp fell into time bin b of the window; ``smoothed``
    is log(counts + 1), zero exactly where counts is zero.
    """

    counts: np.ndarray    # (H, W, B, 2) int64
    smoothed: np.ndarray  # (H, W, B, 2) float64
    window_start: int
    window_end: int


@dataclass
class PatchToken:
    """One activated patch, flattened pixel-row-major, then bin, then polarity."""

    values: np.ndarray  # (patch_size^2 * bins * 2,) float64
    grid_row: int
    grid_col: int


@dataclass
class WindowResult:
    tokens: list[PatchToken]
    window_end: int
    exhausted: bool = False  # stream ended before min_patches was reached


def build_frame(stream: EventStream, window_start: int, window_end: int,
                cfg: ReprConfig) -> EventFrame:
    """Histogram the events of [window_start, window_end) into a frame.

    An event at time t lands in bin floor((t - start) * bins / span); the
    half-open window makes the clamp to bins-1 unreachable for integer
    timestamps but it is kept as a guard.
    """
    if window_end <= window_start:
        raise ValueError(f"inverted window: [{window_start}, {window_end})")
    counts = np.zeros((stream.height, stream.width, cfg.bins, 2), dtype=np.int64)
    lo = np.searchsorted(stream.ts, window_start, side="left")
    hi = np.searchsorted(stream.ts, window_end, side="left")
    if hi > lo:
        rel = (stream.ts[lo:hi] - np.uint64(window_start)).astype(np.int64)
        span = window_end - window_start
        bins = np.minimum(rel * cfg.bins // span, cfg.bins - 1)
        flat = (
            (stream.ys[lo:hi].astype(np.int64) * stream.width + stream.xs[lo:hi]) * (cfg.bins * 2)
            + bins * 2
            + stream.ps[lo:hi]
        )
        counts_flat = np.bincount(flat, minlength=counts.size)
        counts += counts_flat.reshape(counts.shape)
    return EventFrame(counts=counts, smoothed=np.log1p(counts),
                      window_start=window_start, window_end=window_end)


def activated_patches(frame: EventFrame, cfg: ReprConfig) -> list[PatchToken]:
    """Tokens for every patch whose active-pixel count meets the threshold.

    The frame is partitioned on the (H // P) x (W // P) grid; a pixel is
    active when any of its bin/polarity counts is non-zero.  Returned in
    grid row-major order.
    """
    p = cfg.patch_size
    grid_h, grid_w = frame.counts.shape[0] // p, frame.counts.shape[1] // p
    if grid_h == 0 or grid_w == 0:
        return []
    active = frame.counts[: grid_h * p, : grid_w * p].any(axis=(2, 3))
    per_patch = active.reshape(grid_h, p, grid_w, p).sum(axis=(1, 3))
    keep_r, keep_c = np.nonzero(per_patch >= cfg.activation_threshold())
    smoothed = frame.smoothed
    tokens = []
    for r, c in zip(keep_r, keep_c):
        block = smoothed[r * p:(r + 1) * p, c * p:(c + 1) * p]
        tokens.append(PatchToken(values=block.reshape(-1).copy(),
                                 grid_row=int(r), grid_col=int(c)))
    return tokens


def next_window(stream: EventStream, cursor: int, cfg: ReprConfig) -> WindowResult:
    """Smallest window from cursor (in delta_t + k*step increments) holding
    at least min_patches activated patches, or whatever remains of the
    stream with ``exhausted`` set."""
    last_t = stream.last_t
    end = cursor + cfg.delta_t_us
    while True:
        frame = build_frame(stream, cursor, end, cfg)
        tokens = activated_patches(frame, cfg)
        if len(tokens) >= cfg.min_patches:
            return WindowResult(tokens=tokens, window_end=end)
        if last_t is None or end > last_t:
            return WindowResult(tokens=tokens, window_end=end, exhausted=True)
        end += cfg.step_us


def window_iterator(stream: EventStream, cfg: ReprConfig) -> Iterator[WindowResult]:
    """Consecutive windows from t=0; each new cursor is the previous window
    end, so the yielded spans tile the stream without gaps or overlaps.  A
    final under-filled window is yielded only if it carries tokens."""
    last_t = stream.last_t
    if last_t is None:
        return
    cursor = 0
    while cursor <= last_t:
        result = next_window(stream, cursor, cfg)
        if result.exhausted:
            if result.tokens:
                yield result
            return
        yield result
        cursor = result.window_end
