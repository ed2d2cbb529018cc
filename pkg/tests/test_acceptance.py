"""Acceptance gate: ten end-to-end checks, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured
numbers (run ``pytest tests/test_acceptance.py -v -s`` to see them live)
and asserts the same condition, including its wall-clock budget.
"""

import dataclasses
import time
from pathlib import Path

import numpy as np
import pytest

import evtkit.autodiff as ad
from evtkit import (
    EventStream,
    ModelConfig,
    ModelParams,
    ReprConfig,
    SynthSpec,
    activated_patches,
    build_frame,
    classify_stream,
    fresh_memory,
    generate_synthetic,
    next_window,
    process_window,
    read_stream,
    window_iterator,
    write_stream,
)
from evtkit.model import multi_head_attention
from evtkit.perf import count_flops, random_tokens, time_window, verify_flops
from evtkit.training import TrainConfig, evaluate, nll_loss, train

from reference import (
    activated_set_by_pixel_loop,
    attention_by_loops,
    frame_by_event_loop,
    token_by_explicit_flatten,
)

GOLDEN = Path(__file__).parent / "golden"

# sensor and windowing used by the learning / sparsity checks
SENSOR = (128, 128)
REPR = ReprConfig(delta_t_us=24_000, bins=2, patch_size=6,
                  min_pixel_pct=7.5, min_patches=16)


def _report(num: int, name: str, ok: bool, detail: str, t0: float,
            budget_s: float) -> None:
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed <= budget_s
    line = (f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d} {name}: "
            f"{detail} ({elapsed:.1f} s)")
    print(line, flush=True)
    assert ok, line


def _gesture_set(per_class: int, seed0: int) -> list[EventStream]:
    w, h = SENSOR
    return [generate_synthetic(
                SynthSpec(class_id=c, duration_us=120_000, width=w, height=h,
                          noise_rate=1.0, seed=seed0 + 1009 * c + k))
            for c in range(4) for k in range(per_class)]


@pytest.fixture(scope="module")
def gesture_data():
    return _gesture_set(50, seed0=0), _gesture_set(25, seed0=500_000)


def test_criterion_01_representation_matches_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(12345)
    frames = tokens_checked = 0
    for i in range(1000):
        w = int(rng.integers(8, 65))
        h = int(rng.integers(8, 65))
        n = int(rng.integers(0, 2001))
        stream = EventStream(
            w, h,
            ts=np.sort(rng.integers(0, 100_000, n)),
            xs=rng.integers(0, w, n), ys=rng.integers(0, h, n),
            ps=rng.integers(0, 2, n))
        cfg = ReprConfig(delta_t_us=10_000, bins=int(rng.integers(1, 4)),
                         patch_size=int(rng.integers(2, 9)),
                         min_pixel_pct=float(rng.uniform(0.5, 20.0)),
                         min_patches=1)
        start = int(rng.integers(0, 100_000))
        end = int(rng.integers(start + 1, 120_001))
        frame = build_frame(stream, start, end, cfg)
        assert np.array_equal(frame.counts,
                              frame_by_event_loop(stream, start, end, cfg.bins))
        got = activated_patches(frame, cfg)
        assert ({(t.grid_row, t.grid_col) for t in got}
                == activated_set_by_pixel_loop(frame.counts, cfg.patch_size,
                                               cfg.min_pixel_pct))
        if i < 100:
            for tok in got:
                ref = token_by_explicit_flatten(frame.smoothed, cfg.patch_size,
                                                tok.grid_row, tok.grid_col)
                assert np.array_equal(tok.values, ref)
                tokens_checked += 1
        frames += 1
    _report(1, "frame and activation oracles", frames == 1000,
            f"{frames} random frames exact, {tokens_checked} tokens "
            f"flatten-checked", t0, 60)


def test_criterion_02_minimal_window_expansion():
    t0 = time.perf_counter()
    cfg = ReprConfig(delta_t_us=8_000, bins=2, patch_size=4,
                     min_pixel_pct=15.0, min_patches=6)
    assert cfg.activation_threshold() == 3

    def burst(t, n_patches, col0=0):
        events = []
        for j in range(n_patches):
            gr, gc = divmod(col0 + j, 6)
            events += [(t, gc * 4 + dx, gr * 4, 1) for dx in range(3)]
        return events

    checked = 0
    for k in range(5):
        late = (k + 1) * cfg.delta_t_us - 1
        stream = EventStream(24, 24,
                             events=burst(1_000, 5) + burst(late, 6, col0=5))
        result = next_window(stream, 0, cfg)
        assert result.window_end == (k + 1) * cfg.delta_t_us
        assert len(result.tokens) >= cfg.min_patches
        assert not result.exhausted
        for shorter in range(1, k + 1):
            end = shorter * cfg.delta_t_us
            frame = build_frame(stream, 0, end, cfg)
            assert len(activated_patches(frame, cfg)) < cfg.min_patches
        checked += 1
    _report(2, "adaptive window minimality", checked == 5,
            "expansion counts 0-4 exhaustively verified", t0, 5)


def test_criterion_03_end_to_end_gradients(monkeypatch):
    t0 = time.perf_counter()
    repr_cfg = ReprConfig(delta_t_us=10_000, bins=2, patch_size=6,
                          min_pixel_pct=5.0, min_patches=3)
    cfg = ModelConfig.for_sensor(4, 24, 24, repr_cfg, dim=16, num_latents=8,
                                 self_blocks=1, heads=2, pos_bands=2)
    params = ModelParams.init(cfg, seed=3)
    rng = np.random.default_rng(3)
    n = 4000
    stream = EventStream(24, 24, ts=np.sort(rng.integers(0, 20_000, n)),
                         xs=rng.integers(0, 24, n), ys=rng.integers(0, 24, n),
                         ps=rng.integers(0, 2, n))
    assert sum(1 for _ in window_iterator(stream, repr_cfg)) == 2

    def loss():
        _, lp = classify_stream(stream, params, cfg, repr_cfg)
        return nll_loss(lp, 1)

    err = ad.grad_check(loss, params.matrices(), max_coords_per_param=6,
                        rng=np.random.default_rng(0))
    monkeypatch.setattr(ad, "_matmul_grad_a", lambda g, b: 1.05 * (g @ b.T))
    corrupted = ad.grad_check(loss, params.matrices(),
                              max_coords_per_param=6,
                              rng=np.random.default_rng(0))
    monkeypatch.undo()
    _report(3, "stream-loss gradient check", err < 1e-4 and corrupted > 1e-2,
            f"max rel err {err:.2e}, corrupted-rule control {corrupted:.2e}",
            t0, 120)


def test_criterion_04_attention_oracle_and_permutation():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        heads = int(rng.choice([1, 2, 4]))
        dim = heads * int(rng.integers(1, 9))
        n_q = int(rng.integers(1, 13))
        n_kv = int(rng.integers(1, 13))
        q = rng.standard_normal((n_q, dim))
        kv = rng.standard_normal((n_kv, dim))
        mats = [rng.standard_normal((dim, dim)) for _ in range(4)]
        biases = [rng.standard_normal((1, dim)) for _ in range(4)]
        args = [x for pair in zip(mats, biases) for x in pair]
        out, _ = multi_head_attention(ad.Matrix(q), ad.Matrix(kv),
                                      *[ad.Matrix(x) for x in args], heads)
        ref = attention_by_loops(q, kv, *args, heads)
        worst = max(worst, float(np.abs(out.data - ref).max()))

    cfg = ModelConfig(num_classes=5, grid_h=6, grid_w=7, token_dim=24,
                      dim=16, num_latents=8, self_blocks=2, heads=4,
                      pos_bands=3)
    params = ModelParams.init(cfg, seed=4)
    tokens = random_tokens(cfg, 20, rng)
    shuffled = [tokens[i] for i in rng.permutation(len(tokens))]
    a, _ = process_window(tokens, fresh_memory(params), params, cfg)
    b, _ = process_window(shuffled, fresh_memory(params), params, cfg)
    perm_gap = float(np.abs(a.data - b.data).max())
    _report(4, "attention oracle and token-order invariance",
            worst < 1e-6 and perm_gap < 1e-6,
            f"loop-oracle gap {worst:.1e} over 100 shapes, "
            f"permutation gap {perm_gap:.1e}", t0, 30)


def test_criterion_05_complexity_structure():
    t0 = time.perf_counter()
    small = ModelConfig(num_classes=4, grid_h=8, grid_w=8, token_dim=50,
                        dim=16, num_latents=8, self_blocks=2, heads=2,
                        pos_bands=4)
    full = ModelConfig.for_sensor(101, 240, 180, ReprConfig())
    affine = flat = True
    for cfg in (small, full):
        cross = {t: count_flops(cfg, t).cross_attention
                 for t in (7, 107, 207, 1000)}
        slope, rem = divmod(cross[107] - cross[7], 100)
        affine &= rem == 0
        affine &= cross[207] - cross[107] == 100 * slope
        affine &= cross[1000] == cross[7] + 993 * slope
        selfs = {count_flops(cfg, t).self_attention for t in (7, 107, 207, 1000)}
        flat &= len(selfs) == 1
    dev_small = verify_flops(small, 64)
    dev_full = verify_flops(full, 100)
    _report(5, "attention cost structure",
            affine and flat and dev_small < 0.05 and dev_full < 0.05,
            f"cross affine in T, self constant; instrumented deviation "
            f"{dev_small:.1e} / {dev_full:.1e}", t0, 30)


def test_criterion_06_cost_brackets():
    t0 = time.perf_counter()
    cfg = ModelConfig.for_sensor(101, 240, 180, ReprConfig())
    report = count_flops(cfg, tokens=532)
    ok = (0.10e9 <= report.total <= 0.40e9
          and 0.30e6 <= report.params <= 0.70e6)
    _report(6, "per-window cost brackets", ok,
            f"{report.gflops:.3f} GFLOPs at T=532, {report.params:,} params",
            t0, 5)


def test_criterion_07_window_latency_budget():
    t0 = time.perf_counter()
    cfg = ModelConfig.for_sensor(11, 128, 128, ReprConfig())
    params = ModelParams.init(cfg, seed=7)
    tokens = random_tokens(cfg, 45, np.random.default_rng(7))
    samples = time_window(tokens, params, cfg, reps=21, warmup=5)
    median_ms = float(np.median(samples) * 1e3)
    budget_ms = REPR.delta_t_us / 1e3
    _report(7, "single-core window latency", median_ms < budget_ms,
            f"median {median_ms:.2f} ms at T=45 vs {budget_ms:.0f} ms budget",
            t0, 60)


def test_criterion_08_learns_gestures_deterministically(gesture_data):
    t0 = time.perf_counter()
    train_set, test_set = gesture_data
    assert len(train_set) == 200 and len(test_set) == 100
    model_cfg = ModelConfig.for_sensor(4, *SENSOR, REPR, dim=32, num_latents=8,
                                       self_blocks=1, heads=2, pos_bands=4)
    train_cfg = TrainConfig(lr=2e-3, batch_size=8, epochs=10, seed=0)

    runs = []
    for _ in range(2):
        params, history = train(train_set, model_cfg, REPR, train_cfg)
        result = evaluate(test_set, params, model_cfg, REPR)
        runs.append((params.to_bytes(), result["accuracy"], history[-1]["loss"]))
    (bytes_a, acc_a, loss_a), (bytes_b, acc_b, loss_b) = runs
    ok = acc_a >= 0.90 and acc_a == acc_b and loss_a == loss_b \
        and bytes_a == bytes_b
    _report(8, "synthetic gesture learning", ok,
            f"test accuracy {acc_a:.3f} on 200/100 split, "
            f"rerun bitwise identical: {bytes_a == bytes_b}", t0, 900)


def test_criterion_09_sparsity_benefit(gesture_data):
    t0 = time.perf_counter()
    from evtkit.perf import patch_stats

    train_set, _ = gesture_data
    stats = patch_stats(train_set, REPR)
    loose = patch_stats(train_set, dataclasses.replace(REPR, min_pixel_pct=5.0))
    tight = patch_stats(train_set, dataclasses.replace(REPR, min_pixel_pct=10.0))
    ok = (stats.mean_activated_fraction < 0.5
          and loose.mean_tokens > tight.mean_tokens)
    _report(9, "activation sparsity", ok,
            f"mean grid fraction {stats.mean_activated_fraction:.2f}; "
            f"mean T {loose.mean_tokens:.1f} -> {tight.mean_tokens:.1f} "
            f"as m goes 5% -> 10%", t0, 60)


def test_criterion_10_format_stability(tmp_path):
    t0 = time.perf_counter()
    stream = generate_synthetic(SynthSpec(class_id=3, duration_us=50_000,
                                          width=64, height=64, noise_rate=2.0,
                                          seed=10))
    a, b = tmp_path / "a.evt1", tmp_path / "b.evt1"
    write_stream(stream, a)
    write_stream(read_stream(a), b)
    stream_ok = a.read_bytes() == b.read_bytes()

    cfg = ModelConfig(num_classes=3, grid_h=4, grid_w=4, token_dim=12,
                      dim=8, num_latents=4, self_blocks=1, heads=2,
                      pos_bands=2)
    params = ModelParams.init(cfg, seed=10)
    ckpt = tmp_path / "m.ckpt"
    params.save(ckpt)
    reloaded = ModelParams.load(ckpt)
    ckpt_ok = (params.allclose(reloaded)
               and reloaded.to_bytes() == ckpt.read_bytes())

    golden_stream = read_stream(GOLDEN / "tiny.evt1")
    write_stream(golden_stream, tmp_path / "g.evt1")
    golden_ckpt = ModelParams.load(GOLDEN / "tiny.ckpt")
    golden_ok = ((tmp_path / "g.evt1").read_bytes()
                 == (GOLDEN / "tiny.evt1").read_bytes()
                 and golden_ckpt.to_bytes()
                 == (GOLDEN / "tiny.ckpt").read_bytes())
    _report(10, "file format stability", stream_ok and ckpt_ok and golden_ok,
            "stream and checkpoint round trips plus golden files byte-exact",
            t0, 5)
