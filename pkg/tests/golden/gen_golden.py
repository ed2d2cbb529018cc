"""Regenerate the golden files. Run from the repo root:

    python3 tests/golden/gen_golden.py

Outputs are committed; tests byte-compare against them.
"""

import pathlib
import sys

sys.path.insert(0, "src")

import numpy as np

from evtkit.io import EventStream, write_stream
from evtkit.model import ModelConfig, ModelParams

HERE = pathlib.Path(__file__).parent


def tiny_stream() -> EventStream:
    return EventStream(16, 12, events=[(5, 1, 2, 1), (100, 15, 11, 0), (100, 3, 4, 1)],
                       label=3)


def tiny_params() -> ModelParams:
    cfg = ModelConfig(num_classes=3, grid_h=2, grid_w=2, token_dim=8,
                      dim=4, num_latents=2, self_blocks=1, heads=2, ff_mult=2,
                      pos_bands=1, dropout_p=0.0)
    params = ModelParams.init(cfg, seed=123)
    # deterministic non-random values so the bytes are platform independent
    for i, (name, mat) in enumerate(params.items()):
        flat = np.arange(mat.data.size, dtype=np.float64) / 64.0 + i
        mat.data[:] = flat.reshape(mat.data.shape)
    return params


if __name__ == "__main__":
    write_stream(tiny_stream(), HERE / "tiny.evt1", format="binary")
    write_stream(tiny_stream(), HERE / "tiny.csv", format="csv")
    tiny_params().save(HERE / "tiny.ckpt")
    print("golden files regenerated in", HERE)
