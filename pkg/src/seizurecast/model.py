"""Masked video autoencoder: encoder over visible tubelets, light decoder
reconstructing masked tubelets, and a CLS-token sigmoid classifier head.

Every forward function accepts either a single clip (token arrays of shape
``(L, d)``) or a batch ``(B, L, d)``; per-item index maps are then ``(B, L)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from seizurecast.errors import DimensionError
from seizurecast.numerics import (
    Tensor,
    broadcast_to,
    concat,
    gelu,
    layer_norm,
    linear,
    matmul,
    mul,
    reshape,
    sigmoid,
    softmax,
    take_rows,
    transpose,
)
from seizurecast.tubelet import TubeletGrid, TubeMask, make_tube_mask, masked_mse, patchify

LN_EPS = 1e-5
MLP_RATIO = 4
INIT_STD = 0.02
# fan-in the 0.02 std is calibrated for (a 768-wide transformer); weight std is
# rescaled by sqrt(REFERENCE_FAN_IN / fan_in) to keep the same per-layer gain
REFERENCE_FAN_IN = 768

# stage-1 sampling of frames from a 40-frame clip: T=16 at stride 2
DEFAULT_GRID = TubeletGrid(channels=1, frames=16, height=32, width=32, t_p=2, h_p=8, w_p=8)


@dataclass(frozen=True)
class ModelConfig:
    grid: TubeletGrid = DEFAULT_GRID
    enc_dim: int = 64
    enc_depth: int = 4
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 2
    dec_heads: int = 2

    def __post_init__(self):
        if self.enc_dim % self.enc_heads:
            raise DimensionError(f"enc_dim {self.enc_dim} not divisible by {self.enc_heads} heads")
        if self.dec_dim % self.dec_heads:
            raise DimensionError(f"dec_dim {self.dec_dim} not divisible by {self.dec_heads} heads")
        if self.enc_depth < 0 or self.dec_depth < 0:
            raise ValueError("depth must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        grid = d.pop("grid")
        d.update({f"grid.{k}": v for k, v in grid.items()})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = {k: int(v) for k, v in d.items()}
        grid = TubeletGrid(**{k[5:]: d.pop(k) for k in list(d) if k.startswith("grid.")})
        return cls(grid=grid, **d)


def sinusoid_table(n_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, 2 * (i // 2) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


@dataclass
class ModelParams:
    """Named parameter tensors. Positional tables are stored here too but never trained."""

    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    FIXED = ("encoder.pos_embed", "decoder.pos_embed")

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable_names(self, prefixes: Sequence[str] | None = None) -> list[str]:
        names = [n for n in self.tensors if n not in self.FIXED]
        if prefixes is not None:
            names = [n for n in names if n.startswith(tuple(prefixes))]
        return names

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def count(self, trainable_only: bool = True) -> int:
        names = self.trainable_names() if trainable_only else self.names()
        return sum(self.tensors[n].data.size for n in names)

    def clone(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.tensors.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad) for k, t in self.tensors.items()})

    def set_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, a in arrays.items():
            self.tensors[k].data = a

    @property
    def dtype(self):
        return self.tensors["patch_embed.weight"].dtype


def _block_shapes(prefix: str, dim: int) -> dict[str, tuple[int, ...]]:
    hidden = MLP_RATIO * dim
    shapes = {f"{prefix}.norm1.gamma": (dim,), f"{prefix}.norm1.beta": (dim,)}
    for p in ("q", "k", "v", "proj"):
        shapes[f"{prefix}.attn.{p}.weight"] = (dim, dim)
        shapes[f"{prefix}.attn.{p}.bias"] = (dim,)
    shapes.update(
        {
            f"{prefix}.norm2.gamma": (dim,),
            f"{prefix}.norm2.beta": (dim,),
            f"{prefix}.mlp.fc1.weight": (dim, hidden),
            f"{prefix}.mlp.fc1.bias": (hidden,),
            f"{prefix}.mlp.fc2.weight": (hidden, dim),
            f"{prefix}.mlp.fc2.bias": (dim,),
        }
    )
    return shapes


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    g, de, dd = config.grid, config.enc_dim, config.dec_dim
    shapes: dict[str, tuple[int, ...]] = {
        "patch_embed.weight": (g.token_dim, de),
        "patch_embed.bias": (de,),
        "encoder.pos_embed": (g.num_tokens, de),
    }
    for i in range(config.enc_depth):
        shapes.update(_block_shapes(f"encoder.blocks.{i}", de))
    if config.enc_depth:
        shapes.update({"encoder.norm.gamma": (de,), "encoder.norm.beta": (de,)})
    shapes.update(
        {
            "cls_token": (de,),
            "classifier.weight": (1, de),
            "classifier.bias": (1,),
            "encoder_to_decoder.weight": (de, dd),
            "encoder_to_decoder.bias": (dd,),
            "decoder.mask_token": (dd,),
            "decoder.pos_embed": (g.num_tokens, dd),
        }
    )
    for i in range(config.dec_depth):
        shapes.update(_block_shapes(f"decoder.blocks.{i}", dd))
    if config.dec_depth:
        shapes.update({"decoder.norm.gamma": (dd,), "decoder.norm.beta": (dd,)})
    shapes.update({"decoder.head.weight": (dd, g.token_dim), "decoder.head.bias": (g.token_dim,)})
    return shapes


ENCODER_PREFIXES = ("patch_embed.", "encoder.")
HEAD_PREFIXES = ("cls_token", "classifier.")
DECODER_PREFIXES = ("encoder_to_decoder.", "decoder.")


def _init_array(name: str, shape, rng: np.random.Generator, config: ModelConfig) -> np.ndarray:
    if name == "encoder.pos_embed":
        return sinusoid_table(config.grid.num_tokens, config.enc_dim)
    if name == "decoder.pos_embed":
        return sinusoid_table(config.grid.num_tokens, config.dec_dim)
    if name.startswith("classifier."):
        return np.zeros(shape)
    if name.endswith(".gamma"):
        return np.ones(shape)
    if name.endswith((".bias", ".beta")):
        return np.zeros(shape)
    if name.endswith(".weight"):
        return _trunc_normal(rng, shape, INIT_STD * math.sqrt(REFERENCE_FAN_IN / shape[0]))
    return _trunc_normal(rng, shape)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Truncated normal (cut at 2 std) for weights and tokens: std 0.02 for
    tokens, 0.02 * sqrt(768 / fan_in) for weight matrices. Zeros for biases and
    the classifier; unit LayerNorm gains; fixed sinusoidal positional tables."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        arr = _init_array(name, shape, rng, config).astype(dtype)
        tensors[name] = Tensor(arr, requires_grad=name not in ModelParams.FIXED)
    return ModelParams(config, tensors)


def reinit_head(params: ModelParams, seed: int) -> None:
    """Fresh CLS embedding and zeroed classifier, in place."""
    rng = np.random.default_rng(seed)
    dtype = params.dtype
    params.tensors["cls_token"] = Tensor(_trunc_normal(rng, (params.config.enc_dim,)).astype(dtype), requires_grad=True)
    params.tensors["classifier.weight"] = Tensor(np.zeros((1, params.config.enc_dim), dtype), requires_grad=True)
    params.tensors["classifier.bias"] = Tensor(np.zeros(1, dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# transformer pieces


def _attention(x: Tensor, p: ModelParams, prefix: str, heads: int) -> Tensor:
    B, L, d = x.shape
    dh = d // heads

    def split(name):
        y = linear(x, p[f"{prefix}.{name}.weight"], p[f"{prefix}.{name}.bias"])
        return transpose(reshape(y, (B, L, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    ctx = matmul(softmax(scores, axis=-1), v)
    ctx = reshape(transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    return linear(ctx, p[f"{prefix}.proj.weight"], p[f"{prefix}.proj.bias"])


def _block(x: Tensor, p: ModelParams, prefix: str, heads: int) -> Tensor:
    h = layer_norm(x, p[f"{prefix}.norm1.gamma"], p[f"{prefix}.norm1.beta"], LN_EPS)
    x = x + _attention(h, p, f"{prefix}.attn", heads)
    h = layer_norm(x, p[f"{prefix}.norm2.gamma"], p[f"{prefix}.norm2.beta"], LN_EPS)
    h = gelu(linear(h, p[f"{prefix}.mlp.fc1.weight"], p[f"{prefix}.mlp.fc1.bias"]))
    return x + linear(h, p[f"{prefix}.mlp.fc2.weight"], p[f"{prefix}.mlp.fc2.bias"])


def _stack(x: Tensor, p: ModelParams, prefix: str, depth: int, heads: int) -> Tensor:
    """Pre-norm blocks then a final LayerNorm; an empty stack is the identity."""
    for i in range(depth):
        x = _block(x, p, f"{prefix}.blocks.{i}", heads)
    if depth:
        x = layer_norm(x, p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"], LN_EPS)
    return x


def _batched(x, index_map):
    x = x if isinstance(x, Tensor) else Tensor(x, dtype=np.asarray(x).dtype)
    index_map = np.asarray(index_map, dtype=np.intp)
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), index_map[None, :], True
    return x, index_map, False


def _unbatch(x: Tensor, single: bool) -> Tensor:
    return reshape(x, x.shape[1:]) if single else x


def encode(visible, index_map, params: ModelParams, with_cls: bool = False) -> Tensor:
    """Embed visible tokens, add positional embeddings by grid position, run the encoder.

    With ``with_cls`` the CLS embedding is prepended (no positional term) and
    row 0 of the output is z_cls.
    """
    x, idx, single = _batched(visible, index_map)
    cfg = params.config
    if idx.shape != x.shape[:2]:
        raise DimensionError(f"index map {idx.shape} does not match tokens {x.shape[:2]}")
    if idx.size and (idx.min() < 0 or idx.max() >= cfg.grid.num_tokens):
        raise IndexError(f"grid position out of range [0, {cfg.grid.num_tokens})")
    pos = params["encoder.pos_embed"].data[idx]
    h = linear(x, params["patch_embed.weight"], params["patch_embed.bias"]) + Tensor(pos)
    if with_cls:
        cls = broadcast_to(reshape(params["cls_token"], (1, 1, cfg.enc_dim)), (h.shape[0], 1, cfg.enc_dim))
        h = concat([cls, h], axis=1)
    h = _stack(h, params, "encoder", cfg.enc_depth, cfg.enc_heads)
    return _unbatch(h, single)


def _as_mask_list(mask, batch: int) -> list[TubeMask]:
    masks = [mask] if isinstance(mask, TubeMask) else list(mask)
    if len(masks) != batch:
        raise DimensionError(f"{len(masks)} masks for a batch of {batch}")
    return masks


def decode_all(z: Tensor, mask, params: ModelParams) -> Tensor:
    """Decoder predictions for every grid position, in grid order: (B, N, token_dim)."""
    cfg = params.config
    single = z.ndim == 2
    if single:
        z = reshape(z, (1,) + z.shape)
    B, V, _ = z.shape
    masks = _as_mask_list(mask, B)
    N = cfg.grid.num_tokens
    for m in masks:
        if m.l.size != N or N - m.num_masked != V:
            raise DimensionError(f"{V} encoded tokens + {m.num_masked} masked != {N} grid tokens")
    M = N - V
    order = np.stack([np.concatenate([m.visible_index, m.masked_index]) for m in masks])
    restore = np.empty_like(order)
    np.put_along_axis(restore, order, np.arange(N)[None, :].repeat(B, 0), axis=1)

    y = linear(z, params["encoder_to_decoder.weight"], params["encoder_to_decoder.bias"])
    if M:
        tok = broadcast_to(reshape(params["decoder.mask_token"], (1, 1, cfg.dec_dim)), (B, M, cfg.dec_dim))
        y = concat([y, tok], axis=1)
    y = take_rows(y, restore) + Tensor(params["decoder.pos_embed"].data)
    y = _stack(y, params, "decoder", cfg.dec_depth, cfg.dec_heads)
    out = linear(y, params["decoder.head.weight"], params["decoder.head.bias"])
    return _unbatch(out, single)


def decode_reconstruct(z: Tensor, mask, params: ModelParams) -> Tensor:
    """Predictions for masked positions only, in grid order: (M, token_dim) or (B, M, token_dim)."""
    full = decode_all(z, mask, params)
    if full.ndim == 2:
        return take_rows(full, mask.masked_index)
    masks = _as_mask_list(mask, full.shape[0])
    return take_rows(full, np.stack([m.masked_index for m in masks]))


def tokens_of(frames, grid: TubeletGrid) -> np.ndarray:
    data = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
    return patchify(Tensor(data, dtype=data.dtype), grid).data


def pretrain_loss(tokens: np.ndarray, masks: Sequence[TubeMask], params: ModelParams) -> Tensor:
    """Batched stage-1 loss on pre-patchified tokens (B, N, token_dim)."""
    tokens = np.asarray(tokens, dtype=params.dtype)
    vis_idx = np.stack([m.visible_index for m in masks])
    visible = np.take_along_axis(tokens, vis_idx[..., None], axis=1)
    z = encode(visible, vis_idx, params, with_cls=False)
    pred = decode_all(z, masks, params)
    return masked_mse(pred, tokens, masks)


def pretrain_forward(frames, ratio: float, seed: int, params: ModelParams) -> Tensor:
    """patchify -> tube mask -> encode visible -> decode -> masked MSE, for one clip."""
    grid = params.config.grid
    tokens = tokens_of(frames, grid)
    mask = make_tube_mask(grid, ratio, seed)
    return pretrain_loss(tokens[None], [mask], params)


def classify_logits(tokens: np.ndarray, params: ModelParams) -> Tensor:
    """W . z_cls + b for a batch of unmasked token sets (B, N, token_dim) -> (B,)."""
    tokens = np.asarray(tokens, dtype=params.dtype)
    B, N, _ = tokens.shape
    idx = np.broadcast_to(np.arange(N), (B, N))
    h = encode(tokens, idx, params, with_cls=True)
    z_cls = reshape(take_rows(h, np.zeros((B, 1), dtype=np.intp)), (B, params.config.enc_dim))
    logits = matmul(z_cls, transpose(params["classifier.weight"])) + params["classifier.bias"]
    return reshape(logits, (B,))


def classify_forward(frames, params: ModelParams) -> float:
    """Seizure-onset probability for one clip; no masking at inference."""
    tokens = tokens_of(frames, params.config.grid)
    return float(predict_proba(tokens[None], params)[0])


def predict_proba(token_batch: np.ndarray, params: ModelParams) -> np.ndarray:
    """Probabilities (B,), with the sigmoid evaluated in float64."""
    logits = Tensor(classify_logits(token_batch, params).data.astype(np.float64))
    return sigmoid(logits).data
