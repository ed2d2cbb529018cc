"""Latent-memory attention network over patch tokens.

A small set of latent vectors cross-attends to the window's patch tokens,
refines itself through self-attention, and accumulates across windows by
summation.  Per-window cost is linear in the token count; the self-attention
and classifier costs depend only on the latent count.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix, flop_scope
from .representation import PatchToken, ReprConfig, window_iterator

CKPT_MAGIC = b"EVTC"
CKPT_VERSION = 1
_CKPT_PRELUDE = struct.Struct("<4sHI")  # magic, version, header length


class CheckpointFormatError(ValueError):
    """Raised when checkpoint bytes violate the container layout."""


class NoInformationError(ValueError):
    """Raised when a stream yields no activated window to classify."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``grid_h``/``grid_w`` and ``token_dim`` tie the network to a patch grid;
    use :meth:`for_sensor` to derive them from a sensor geometry and a
    representation config.
    """

    num_classes: int
    grid_h: int
    grid_w: int
    token_dim: int
    dim: int = 128
    num_latents: int = 96
    self_blocks: int = 2
    heads: int = 4
    ff_mult: int = 2
    pos_bands: int = 16
    dropout_p: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        for name in ("grid_h", "grid_w", "token_dim", "dim", "num_latents",
                     "heads", "ff_mult", "pos_bands"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.self_blocks < 0:
            raise ValueError("self_blocks must be >= 0")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def pos_dim(self) -> int:
        return 4 * self.pos_bands

    @classmethod
    def for_sensor(cls, num_classes: int, width: int, height: int,
                   repr_cfg: ReprConfig, **kwargs) -> "ModelConfig":
        gh, gw = repr_cfg.grid_shape(width, height)
        return cls(num_classes=num_classes, grid_h=gh, grid_w=gw,
                   token_dim=repr_cfg.token_dim, **kwargs)


def fourier_positions(grid_h: int, grid_w: int, bands: int) -> np.ndarray:
    """2-D Fourier features for every grid cell, (grid_h*grid_w) x 4*bands.

    Rows are grid-row-major.  Cell centers are normalized to (-1, 1) per
    axis; each axis contributes sin/cos pairs at ``bands`` frequencies
    log-spaced from 1 to half the axis length.  The base frequency of 1
    makes the features injective over the grid.
    """
    if bands < 1:
        raise ValueError("bands must be >= 1")
    if grid_h < 1 or grid_w < 1:
        raise ValueError("grid dimensions must be >= 1")
    fu = np.geomspace(1.0, max(grid_h / 2.0, 1.0), bands)
    fv = np.geomspace(1.0, max(grid_w / 2.0, 1.0), bands)
    u = (2.0 * np.arange(grid_h) + 1.0) / grid_h - 1.0
    v = (2.0 * np.arange(grid_w) + 1.0) / grid_w - 1.0
    au = np.pi * u[:, None] * fu[None, :]
    av = np.pi * v[:, None] * fv[None, :]
    row_feats = np.concatenate([np.sin(au), np.cos(au)], axis=1)
    col_feats = np.concatenate([np.sin(av), np.cos(av)], axis=1)
    return np.concatenate([np.repeat(row_feats, grid_w, axis=0),
                           np.tile(col_feats, (grid_h, 1))], axis=1)


def _block_param_spec(prefix: str, cfg: ModelConfig, kv_norm: bool):
    d, hd = cfg.dim, cfg.ff_mult * cfg.dim
    spec = [(f"{prefix}.ln_q.g", (1, d), "ones"),
            (f"{prefix}.ln_q.b", (1, d), "zeros")]
    if kv_norm:
        spec += [(f"{prefix}.ln_kv.g", (1, d), "ones"),
                 (f"{prefix}.ln_kv.b", (1, d), "zeros")]
    for proj in ("q", "k", "v", "o"):
        spec += [(f"{prefix}.w{proj}", (d, d), "glorot"),
                 (f"{prefix}.b{proj}", (1, d), "zeros")]
    spec += [(f"{prefix}.ln_ff.g", (1, d), "ones"),
             (f"{prefix}.ln_ff.b", (1, d), "zeros"),
             (f"{prefix}.ff.w1", (d, hd), "glorot"),
             (f"{prefix}.ff.b1", (1, hd), "zeros"),
             (f"{prefix}.ff.w2", (hd, d), "glorot"),
             (f"{prefix}.ff.b2", (1, d), "zeros")]
    return spec


def param_spec(cfg: ModelConfig) -> list[tuple[str, tuple[int, int], str]]:
    """Canonical (name, shape, init kind) list defining parameter order."""
    d, hd, pd = cfg.dim, cfg.ff_mult * cfg.dim, cfg.pos_dim
    spec = [
        ("latents", (cfg.num_latents, d), "latent"),
        ("pos_table", (cfg.grid_h * cfg.grid_w, pd), "fourier"),
        ("ff1.w1", (cfg.token_dim, d), "glorot"),
        ("ff1.b1", (1, d), "zeros"),
        ("ff1.w2", (d + pd, d), "glorot"),
        ("ff1.b2", (1, d), "zeros"),
        ("ff2.w1", (d, hd), "glorot"),
        ("ff2.b1", (1, hd), "zeros"),
        ("ff2.w2", (hd, d), "glorot"),
        ("ff2.b2", (1, d), "zeros"),
    ]
    spec += _block_param_spec("cross", cfg, kv_norm=True)
    for i in range(cfg.self_blocks):
        spec += _block_param_spec(f"self{i}", cfg, kv_norm=False)
    spec += [
        ("head.w1", (d, d), "glorot"),
        ("head.b1", (1, d), "zeros"),
        ("head.w2", (d, cfg.num_classes), "glorot"),
        ("head.b2", (1, cfg.num_classes), "zeros"),
    ]
    return spec


class ModelParams:
    """Named trainable matrices in a fixed canonical order."""

    def __init__(self, cfg: ModelConfig, arrays: dict[str, np.ndarray]):
        self.cfg = cfg
        self._params: dict[str, Matrix] = {}
        for name, shape, _ in param_spec(cfg):
            if name not in arrays:
                raise ValueError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"parameter {name!r} has shape {arr.shape}, "
                                 f"expected {shape}")
            self._params[name] = Matrix(arr, requires_grad=True)
        extra = set(arrays) - set(self._params)
        if extra:
            raise ValueError(f"unexpected parameters: {sorted(extra)}")

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        arrays: dict[str, np.ndarray] = {}
        for name, shape, kind in param_spec(cfg):
            if kind == "latent":
                arrays[name] = rng.normal(0.0, 0.2, shape)
            elif kind == "fourier":
                arrays[name] = fourier_positions(cfg.grid_h, cfg.grid_w,
                                                 cfg.pos_bands)
            elif kind == "glorot":
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, shape)
            elif kind == "zeros":
                arrays[name] = np.zeros(shape)
            else:
                arrays[name] = np.ones(shape)
        return cls(cfg, arrays)

    def __getitem__(self, name: str) -> Matrix:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def matrices(self) -> list[Matrix]:
        return list(self._params.values())

    def param_count(self) -> int:
        return sum(m.data.size for m in self._params.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg,
                           {n: m.data.copy() for n, m in self._params.items()})

    def allclose(self, other: "ModelParams") -> bool:
        return self.cfg == other.cfg and all(
            np.array_equal(m.data, other._params[n].data)
            for n, m in self._params.items())

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    def to_bytes(self) -> bytes:
        manifest = [{"name": n, "rows": m.rows, "cols": m.cols}
                    for n, m in self._params.items()]
        header = json.dumps({"config": asdict(self.cfg), "arrays": manifest},
                            sort_keys=True, separators=(",", ":")).encode()
        parts = [_CKPT_PRELUDE.pack(CKPT_MAGIC, CKPT_VERSION, len(header)), header]
        parts += [m.data.astype("<f8").tobytes() for m in self._params.values()]
        return b"".join(parts)

    @classmethod
    def load(cls, path) -> "ModelParams":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelParams":
        if len(blob) < _CKPT_PRELUDE.size:
            raise CheckpointFormatError("truncated checkpoint prelude")
        magic, version, header_len = _CKPT_PRELUDE.unpack_from(blob)
        if magic != CKPT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}")
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        body = blob[_CKPT_PRELUDE.size:]
        if len(body) < header_len:
            raise CheckpointFormatError("truncated checkpoint header")
        try:
            header = json.loads(body[:header_len].decode())
            cfg_fields = {f.name for f in fields(ModelConfig)}
            if set(header["config"]) != cfg_fields:
                raise CheckpointFormatError("config keys do not match")
            cfg = ModelConfig(**header["config"])
            manifest = header["arrays"]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CheckpointFormatError):
                raise
            raise CheckpointFormatError(f"malformed checkpoint header: {exc}")
        payload = body[header_len:]
        arrays: dict[str, np.ndarray] = {}
        offset = 0
        for entry in manifest:
            rows, cols = int(entry["rows"]), int(entry["cols"])
            nbytes = rows * cols * 8
            if offset + nbytes > len(payload):
                raise CheckpointFormatError(
                    f"truncated payload at array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(
                payload, dtype="<f8", count=rows * cols, offset=offset,
            ).reshape(rows, cols).copy()
            offset += nbytes
        if offset != len(payload):
            raise CheckpointFormatError("trailing bytes after last array")
        return cls(cfg, arrays)


@dataclass(frozen=True)
class LatentMemory:
    """Running latent state of one stream; updated only by memory_update."""

    state: Matrix
    windows_seen: int = 0


def fresh_memory(params: ModelParams) -> LatentMemory:
    """Stream-start memory: the learned latent init itself, zero windows."""
    return LatentMemory(params["latents"], 0)


def ff1(tokens: list[PatchToken], params: ModelParams,
        cfg: ModelConfig) -> Matrix:
    """Project tokens to the latent width and mix in positional features.

    Linear token_dim -> dim, concatenate the per-cell Fourier positional
    row, linear (dim + pos_dim) -> dim.  No activation: both stages are
    single layers.
    """
    values = np.stack([t.values for t in tokens])
    if values.shape[1] != cfg.token_dim:
        raise ValueError(f"token length {values.shape[1]}, "
                         f"expected {cfg.token_dim}")
    idx = np.empty(len(tokens), dtype=np.int64)
    for i, t in enumerate(tokens):
        if not (0 <= t.grid_row < cfg.grid_h and 0 <= t.grid_col < cfg.grid_w):
            raise ValueError(f"grid coordinate ({t.grid_row}, {t.grid_col}) "
                             f"outside {cfg.grid_h}x{cfg.grid_w}")
        idx[i] = t.grid_row * cfg.grid_w + t.grid_col
    x = ad.add_row(ad.matmul(Matrix(values), params["ff1.w1"]), params["ff1.b1"])
    pos = ad.take_rows(params["pos_table"], idx)
    h = ad.concat_cols(x, pos)
    return ad.add_row(ad.matmul(h, params["ff1.w2"]), params["ff1.b2"])


def ff2(x: Matrix, params: ModelParams) -> Matrix:
    """Double-layer feed-forward with a skip connection."""
    h = ad.gelu(ad.add_row(ad.matmul(x, params["ff2.w1"]), params["ff2.b1"]))
    return ad.add(x, ad.add_row(ad.matmul(h, params["ff2.w2"]), params["ff2.b2"]))


def multi_head_attention(q_in: Matrix, kv_in: Matrix,
                         wq: Matrix, bq: Matrix, wk: Matrix, bk: Matrix,
                         wv: Matrix, bv: Matrix, wo: Matrix, bo: Matrix,
                         heads: int) -> tuple[Matrix, list[Matrix]]:
    """Scaled dot-product attention over ``heads`` column slices.

    Returns the projected output and the per-head softmax weight matrices
    (n_q x n_kv each).
    """
    d = q_in.cols
    if kv_in.cols != d:
        raise ValueError(f"query dim {d} != key/value dim {kv_in.cols}")
    if d % heads != 0:
        raise ValueError(f"dim {d} not divisible by {heads} heads")
    dh = d // heads
    q = ad.add_row(ad.matmul(q_in, wq), bq)
    k = ad.add_row(ad.matmul(kv_in, wk), bk)
    v = ad.add_row(ad.matmul(kv_in, wv), bv)
    merged = None
    weights = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(dh))
        attn = ad.softmax_rows(scores)
        weights.append(attn)
        mixed = ad.matmul(attn, vh)
        merged = mixed if merged is None else ad.concat_cols(merged, mixed)
    out = ad.add_row(ad.matmul(merged, wo), bo)
    return out, weights


def attention_block(queries: Matrix, keys_values: Matrix, params: ModelParams,
                    prefix: str, *, dropout_p: float = 0.0,
                    rng: np.random.Generator | None = None,
                    ) -> tuple[Matrix, list[Matrix]]:
    """Pre-norm residual attention block with a feed-forward sublayer.

    ``a = queries + MHA(LN(queries), LN(keys_values)); out = a + FF(LN(a))``.
    Cross blocks carry a dedicated key/value norm; when queries and
    keys/values are the same matrix the query norm is reused.
    """
    qn = ad.layer_norm(queries, params[f"{prefix}.ln_q.g"],
                       params[f"{prefix}.ln_q.b"])
    if f"{prefix}.ln_kv.g" in params:
        kn = ad.layer_norm(keys_values, params[f"{prefix}.ln_kv.g"],
                           params[f"{prefix}.ln_kv.b"])
    elif keys_values is queries:
        kn = qn
    else:
        kn = ad.layer_norm(keys_values, params[f"{prefix}.ln_q.g"],
                           params[f"{prefix}.ln_q.b"])
    mixed, weights = multi_head_attention(
        qn, kn,
        params[f"{prefix}.wq"], params[f"{prefix}.bq"],
        params[f"{prefix}.wk"], params[f"{prefix}.bk"],
        params[f"{prefix}.wv"], params[f"{prefix}.bv"],
        params[f"{prefix}.wo"], params[f"{prefix}.bo"],
        params.cfg.heads)
    if dropout_p > 0.0:
        mixed = ad.dropout(mixed, dropout_p, rng)
    a = ad.add(queries, mixed)
    an = ad.layer_norm(a, params[f"{prefix}.ln_ff.g"], params[f"{prefix}.ln_ff.b"])
    h = ad.gelu(ad.add_row(ad.matmul(an, params[f"{prefix}.ff.w1"]),
                           params[f"{prefix}.ff.b1"]))
    ff = ad.add_row(ad.matmul(h, params[f"{prefix}.ff.w2"]),
                    params[f"{prefix}.ff.b2"])
    if dropout_p > 0.0:
        ff = ad.dropout(ff, dropout_p, rng)
    return ad.add(a, ff), weights


def process_window(tokens: list[PatchToken], memory: LatentMemory,
                   params: ModelParams, cfg: ModelConfig, *,
                   train: bool = False, rng: np.random.Generator | None = None,
                   record_attention: bool = False,
                   ) -> tuple[Matrix, list[np.ndarray] | None]:
    """One window of the network: tokens in, refined latents out.

    Token preprocessing, one cross-attention of the memory over the tokens,
    then the self-attention stack.  The output shape is num_latents x dim
    regardless of the token count.  With ``record_attention`` the per-head
    cross-attention weights are returned as arrays.
    """
    if not tokens:
        raise ValueError("process_window requires a non-empty token list")
    p = cfg.dropout_p if train else 0.0
    if p > 0.0 and rng is None:
        raise ValueError("dropout requires an rng at train time")
    with flop_scope("ff1"):
        x = ff1(tokens, params, cfg)
    with flop_scope("ff2"):
        x = ff2(x, params)
    with flop_scope("cross_attention"):
        latents, cross_weights = attention_block(
            memory.state, x, params, "cross", dropout_p=p, rng=rng)
    with flop_scope("self_attention"):
        for i in range(cfg.self_blocks):
            latents, _ = attention_block(latents, latents, params, f"self{i}",
                                         dropout_p=p, rng=rng)
    record = [w.data.copy() for w in cross_weights] if record_attention else None
    return latents, record


def memory_update(memory: LatentMemory, window_output: Matrix) -> LatentMemory:
    """Fold a window's output into the memory by summation (value semantics)."""
    if window_output.shape != memory.state.shape:
        raise ValueError(f"window output {window_output.shape} does not match "
                         f"memory {memory.state.shape}")
    with flop_scope("memory"):
        return LatentMemory(ad.add(memory.state, window_output),
                            memory.windows_seen + 1)


def classify(memory: LatentMemory, params: ModelParams) -> Matrix:
    """Class log-probabilities from the memory: per-latent FF, mean pool, FF."""
    with flop_scope("classifier"):
        h = ad.gelu(ad.add_row(ad.matmul(memory.state, params["head.w1"]),
                               params["head.b1"]))
        pooled = ad.mean_rows(h)
        logits = ad.add_row(ad.matmul(pooled, params["head.w2"]),
                            params["head.b2"])
        return ad.log_softmax_rows(logits)


def classify_windows(window_tokens: list[list[PatchToken]], params: ModelParams,
                     cfg: ModelConfig, *, train: bool = False,
                     rng: np.random.Generator | None = None) -> Matrix:
    """Fold precomputed per-window token lists and classify the final memory."""
    memory = fresh_memory(params)
    for tokens in window_tokens:
        if not tokens:
            continue
        out, _ = process_window(tokens, memory, params, cfg, train=train, rng=rng)
        memory = memory_update(memory, out)
    if memory.windows_seen == 0:
        raise NoInformationError("no window produced any activated patch")
    return classify(memory, params)


def classify_stream(stream, params: ModelParams, cfg: ModelConfig,
                    repr_cfg: ReprConfig) -> tuple[int, Matrix]:
    """Classify a stream online: each window is processed as it is cut."""
    memory = fresh_memory(params)
    for result in window_iterator(stream, repr_cfg):
        if not result.tokens:
            continue
        out, _ = process_window(result.tokens, memory, params, cfg)
        memory = memory_update(memory, out)
    if memory.windows_seen == 0:
        raise NoInformationError("stream produced no activated window")
    log_probs = classify(memory, params)
    return int(np.argmax(log_probs.data[0])), log_probs
