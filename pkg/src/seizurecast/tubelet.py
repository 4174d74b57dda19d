"""Tubelet patchification, tube masking, and the masked reconstruction loss.

Token order is temporal-major: token ``k`` sits at grid cell
``(k // (Hg*Wg), (k // Wg) % Hg, k % Wg)``. Within a token, values are laid
out as ``(channel, t, row, col)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np

from seizurecast.errors import ContractError, DimensionError
from seizurecast.numerics import Tensor, mean, power, reshape, sub, take_rows, transpose


@dataclass(frozen=True)
class TubeletGrid:
    channels: int
    frames: int
    height: int
    width: int
    t_p: int = 2
    h_p: int = 8
    w_p: int = 8

    def __post_init__(self):
        for dim, p, what in ((self.frames, self.t_p, "frames"), (self.height, self.h_p, "height"), (self.width, self.w_p, "width")):
            if p <= 0 or dim <= 0 or dim % p:
                raise DimensionError(f"{what}={dim} is not divisible by tubelet size {p}")

    @classmethod
    def for_shape(cls, shape: Sequence[int], tubelet: Sequence[int] = (2, 8, 8)) -> "TubeletGrid":
        c, t, h, w = shape
        return cls(c, t, h, w, *tubelet)

    @property
    def T_g(self) -> int:
        return self.frames // self.t_p

    @property
    def H_g(self) -> int:
        return self.height // self.h_p

    @property
    def W_g(self) -> int:
        return self.width // self.w_p

    @property
    def spatial_cells(self) -> int:
        return self.H_g * self.W_g

    @property
    def num_tokens(self) -> int:
        return self.T_g * self.spatial_cells

    @property
    def token_dim(self) -> int:
        return self.channels * self.t_p * self.h_p * self.w_p

    @property
    def frame_shape(self) -> tuple[int, int, int, int]:
        return (self.channels, self.frames, self.height, self.width)

    def position(self, k: int) -> tuple[int, int, int]:
        return k // self.spatial_cells, (k // self.W_g) % self.H_g, k % self.W_g


def patchify(frames, grid: TubeletGrid) -> Tensor:
    """(C, T, H, W) -> (N, token_dim). Differentiable; pure rearrangement."""
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames), dtype=np.asarray(frames).dtype)
    if x.shape != grid.frame_shape:
        raise DimensionError(f"frames {x.shape} do not match grid {grid.frame_shape}")
    g = grid
    x = reshape(x, (g.channels, g.T_g, g.t_p, g.H_g, g.h_p, g.W_g, g.w_p))
    x = transpose(x, (1, 3, 5, 0, 2, 4, 6))
    return reshape(x, (g.num_tokens, g.token_dim))


def unpatchify(tokens, grid: TubeletGrid) -> Tensor:
    x = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens), dtype=np.asarray(tokens).dtype)
    g = grid
    if x.shape != (g.num_tokens, g.token_dim):
        raise DimensionError(f"tokens {x.shape} do not match grid ({g.num_tokens}, {g.token_dim})")
    x = reshape(x, (g.T_g, g.H_g, g.W_g, g.channels, g.t_p, g.h_p, g.w_p))
    x = transpose(x, (3, 0, 4, 1, 5, 2, 6))
    return reshape(x, g.frame_shape)


def masked_cell_count(ratio: float, cells: int) -> int:
    """round-half-up(ratio * cells), evaluated on the decimal form of ``ratio``."""
    return int((Decimal(repr(float(ratio))) * cells).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class TubeMask:
    l: np.ndarray  # uint8, length N, 1 = masked
    ratio: float
    grid: TubeletGrid

    @property
    def masked_index(self) -> np.ndarray:
        return np.flatnonzero(self.l)

    @property
    def visible_index(self) -> np.ndarray:
        return np.flatnonzero(self.l == 0)

    @property
    def num_masked(self) -> int:
        return int(self.l.sum())

    def spatial(self) -> np.ndarray:
        """(T_g, H_g, W_g) view of ``l``."""
        return self.l.reshape(self.grid.T_g, self.grid.H_g, self.grid.W_g)


def make_tube_mask(grid: TubeletGrid, ratio: float, seed: int) -> TubeMask:
    if not 0.0 <= ratio <= 1.0:
        raise ContractError(f"mask ratio must lie in [0, 1], got {ratio}")
    cells = grid.spatial_cells
    count = masked_cell_count(ratio, cells)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(cells, size=count, replace=False)
    frame_mask = np.zeros(cells, dtype=np.uint8)
    frame_mask[chosen] = 1
    return TubeMask(np.tile(frame_mask, grid.T_g), float(ratio), grid)


def select_visible(tokens: Tensor, mask: TubeMask) -> tuple[Tensor, np.ndarray]:
    """Keep unmasked tokens in original order; the index map gives their grid positions."""
    if tokens.shape[-2] != mask.l.size:
        raise DimensionError(f"{tokens.shape[-2]} tokens vs mask length {mask.l.size}")
    index_map = mask.visible_index
    return take_rows(tokens, index_map), index_map


def scatter_rows(rows: np.ndarray, index_map: np.ndarray, n: int, fill: float = 0.0) -> np.ndarray:
    """Inverse of selection: place ``rows`` back at ``index_map`` in an ``n``-row array."""
    out = np.full((n,) + rows.shape[1:], fill, dtype=rows.dtype)
    out[index_map] = rows
    return out


def masked_mse(pred: Tensor, target, mask: TubeMask | Sequence[TubeMask]) -> Tensor:
    """Mean squared error over the elements of masked tokens only.

    Accepts a single (N, d) prediction with one mask, or a batch (B, N, d)
    with one mask per item (all with the same masked count).
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    masks = [mask] if isinstance(mask, TubeMask) else list(mask)
    batched = pred.ndim == 3
    if (len(masks) != (pred.shape[0] if batched else 1)) or any(m.l.size != pred.shape[-2] for m in masks):
        raise DimensionError("mask count/length does not match predictions")
    counts = {m.num_masked for m in masks}
    if 0 in counts:
        raise ContractError("masked_mse is undefined for an empty mask")
    if len(counts) != 1:
        raise DimensionError("all masks in a batch must mask the same number of tokens")
    if batched:
        idx = np.stack([m.masked_index for m in masks])
        tgt = np.take_along_axis(target, idx[..., None], axis=1)
    else:
        idx = masks[0].masked_index
        tgt = target[idx]
    diff = sub(take_rows(pred, idx), Tensor(tgt.astype(pred.dtype, copy=False)))
    return mean(power(diff, 2.0))
