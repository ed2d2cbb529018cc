"""Cost model and measured latency of the classifier.

Every tensor primitive self-reports its FLOPs (2 per multiply-add), so a
forward pass can be metered exactly.  An analytic closed form predicts the
same numbers from the config alone; comparing the two validates both.  The
headline property: per-window cost is affine in the token count T because
only cross-attention and the token encoder touch tokens.

Run:  python3 demos/05_efficiency.py
"""

import numpy as np

from evtkit import ModelConfig, ModelParams, ReprConfig, SynthSpec, generate_synthetic
from evtkit.perf import (
    count_flops,
    measure_latency,
    patch_stats,
    random_tokens,
    time_window,
    verify_flops,
)

repr_cfg = ReprConfig()
cfg = ModelConfig.for_sensor(num_classes=101, width=240, height=180,
                             repr_cfg=repr_cfg)
print(f"reference setup: 240x180 sensor, grid {cfg.grid_h}x{cfg.grid_w}, "
      f"D={cfg.dim}, M={cfg.num_latents}, {cfg.heads} heads")

print()
print("== analytic FLOP breakdown at T=532 ==")
report = count_flops(cfg, tokens=532)
for name in ("ff1", "ff2", "cross_attention", "self_attention", "classifier"):
    flops = getattr(report, name)
    print(f"{name:16s} {flops:>12,}  ({flops / report.total:6.1%})")
print(f"{'total':16s} {report.total:>12,}  = {report.gflops:.3f} GFLOPs")
print(f"parameters: {report.params:,}")

print()
print("== analytic model vs instrumented execution ==")
for tokens in (50, 532):
    deviation = verify_flops(cfg, tokens)
    print(f"T={tokens:3d}: worst per-component deviation {deviation:.2e}")

print()
print("== cost is affine in T; self-attention is flat ==")
reports = {t: count_flops(cfg, t) for t in (100, 200, 400)}
d1 = reports[200].total - reports[100].total
d2 = reports[400].total - reports[200].total
print(f"total  : +{d1:,} FLOPs per +100 tokens, then +{d2 // 2:,} per +100")
print(f"self   : {reports[100].self_attention:,} == "
      f"{reports[400].self_attention:,} regardless of T")

print()
print("== measured per-window latency (single core) ==")
params = ModelParams.init(cfg, seed=0)
for T in (45, 532):
    samples = time_window(random_tokens(cfg, T, np.random.default_rng(0)),
                          params, cfg, reps=15, warmup=3)
    ms = samples * 1e3
    verdict = "within" if np.median(ms) < repr_cfg.delta_t_us / 1e3 else "OVER"
    print(f"T={T:3d}: median {np.median(ms):6.2f} ms, p95 {np.percentile(ms, 95):6.2f} ms "
          f"({verdict} the {repr_cfg.delta_t_us / 1e3:.0f} ms window budget)")

print()
print("== end-to-end on a real stream, including tokenization ==")
stream = generate_synthetic(SynthSpec(class_id=0, duration_us=400_000,
                                      width=240, height=180, noise_rate=1.0,
                                      seed=1))
lat = measure_latency(stream, params, cfg, repr_cfg, warmup=2, reps=5,
                      include_repr=True)
print(f"{lat.samples_ms.size} timed windows: median {lat.median_ms:.2f} ms, "
      f"budget met: {lat.budget_met}")

print()
print("== sparsity: how much of the grid actually computes ==")
streams = [generate_synthetic(SynthSpec(class_id=c % 6, duration_us=150_000,
                                        width=240, height=180, noise_rate=1.0,
                                        seed=c))
           for c in range(12)]
stats = patch_stats(streams, repr_cfg)
print(f"{stats.n_windows} windows: mean T {stats.mean_tokens:.1f} of "
      f"{cfg.grid_h * cfg.grid_w} possible "
      f"({stats.mean_activated_fraction:.1%} of the grid)")
