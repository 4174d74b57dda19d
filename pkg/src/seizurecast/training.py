"""Stage-1 masked-reconstruction pretraining and stage-2 few-shot
fine-tuning / linear probing."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from seizurecast.checkpoint import Checkpoint, transfer_encoder
from seizurecast.clipdata import ClipBundle, sample_frames
from seizurecast.errors import ConfigError, ProtocolError
from seizurecast.model import (
    DECODER_PREFIXES,
    ENCODER_PREFIXES,
    ModelParams,
    classify_logits,
    pretrain_loss,
    tokens_of,
)
from seizurecast.numerics import AdamState, adam_step, backward, bce_with_logits
from seizurecast.seeds import derive_seed
from seizurecast.tubelet import TubeletGrid, make_tube_mask

log = logging.getLogger(__name__)

STAGES = ("pretrain", "finetune", "linear_probe")


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "finetune"
    lr: float = 1e-4
    epochs: int | None = None  # pretrain 50, finetune/linear_probe 20
    batch_size: int = 8
    mask_ratio: float = 0.3
    seed: int = 0
    T: int = 16
    rate: int = 2

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}", path="stage")
        if not self.lr > 0:
            raise ConfigError("lr must be positive", path="lr")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be >= 1", path="epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", path="batch_size")
        if self.stage == "pretrain" and not 0.1 <= self.mask_ratio <= 0.9:
            raise ConfigError("pretraining mask ratio must lie in [0.1, 0.9]", path="mask_ratio")

    @property
    def n_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return 50 if self.stage == "pretrain" else 20


def clip_tokens(clips: Sequence[ClipBundle], grid: TubeletGrid, T: int = 16, rate: int = 2) -> np.ndarray:
    """Sampled, normalized, patchified clips: (B, N, token_dim) float32."""
    return np.stack([tokens_of(sample_frames(c, T, rate), grid) for c in clips]).astype(np.float32)


def _adam_update(params: ModelParams, names: list[str], state: AdamState) -> None:
    new, _ = adam_step({n: params[n].data for n in names}, {n: params[n].grad for n in names}, state)
    params.set_arrays(new)


def pretrain(
    dataset: Sequence[ClipBundle] | np.ndarray,
    config: TrainConfig,
    init: ModelParams,
    provenance: dict | None = None,
) -> tuple[Checkpoint, list[float]]:
    """Masked-reconstruction training with a fresh tube mask per clip per step.

    ``dataset`` may be clips or pre-computed tokens (B, N, token_dim).
    Steps = epochs * ceil(len(dataset) / batch_size); ``init`` is not mutated.
    """
    if config.stage != "pretrain":
        raise ConfigError(f"pretrain needs stage='pretrain', got {config.stage!r}", path="stage")
    if len(dataset) == 0:
        raise ConfigError("empty pretraining dataset; the Base configuration skips pretraining", path="dataset")
    params = init.clone()
    grid = params.config.grid
    tokens = dataset if isinstance(dataset, np.ndarray) else clip_tokens(dataset, grid, config.T, config.rate)
    tokens = tokens.astype(params.dtype, copy=False)
    names = params.trainable_names(ENCODER_PREFIXES + DECODER_PREFIXES)
    state = AdamState(lr=config.lr)
    n = len(tokens)
    per_epoch = math.ceil(n / config.batch_size)
    trace: list[float] = []
    step = 0
    for epoch in range(config.n_epochs):
        order = np.random.default_rng(derive_seed(config.seed, "shuffle", epoch)).permutation(n)
        for b in range(per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            masks = [make_tube_mask(grid, config.mask_ratio, derive_seed(config.seed, "mask", step, j)) for j in range(len(idx))]
            for name in names:
                params[name].grad = None
            loss = pretrain_loss(tokens[idx], masks, params)
            backward(loss, params=[params[k] for k in names])
            _adam_update(params, names, state)
            trace.append(loss.item())
            step += 1
        log.debug("pretrain epoch %d loss %.5f", epoch, trace[-1])
    prov = {"stage": "pretrain", "mask_ratio": repr(config.mask_ratio), "steps": str(step), "seed": str(config.seed), "lr": repr(config.lr)}
    prov.update({k: str(v) for k, v in (provenance or {}).items()})
    return Checkpoint(params.config, params, prov), trace


def _support_arrays(support, grid: TubeletGrid, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(support, tuple):
        tokens, labels = support
    else:
        tokens = clip_tokens(support, grid, config.T, config.rate)
        labels = np.array([c.label for c in support])
    labels = np.asarray(labels, dtype=np.float64)
    if len(labels) == 0 or len(np.unique(labels)) < 2:
        raise ProtocolError("support set must contain both classes")
    return np.asarray(tokens), labels


def _fit_classifier(
    tokens: np.ndarray,
    labels: np.ndarray,
    params: ModelParams,
    names: list[str],
    config: TrainConfig,
) -> list[float]:
    state = AdamState(lr=config.lr)
    tokens = tokens.astype(params.dtype, copy=False)
    trace = []
    for _ in range(config.n_epochs):
        for name in names:
            params[name].grad = None
        loss = bce_with_logits(classify_logits(tokens, params), labels)
        backward(loss, params=[params[k] for k in names])
        _adam_update(params, names, state)
        trace.append(loss.item())
    return trace


def finetune(
    support,
    source: Checkpoint | ModelParams,
    config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """Full-batch BCE fine-tuning of encoder, CLS embedding and classifier.

    ``support`` is a list of labelled clips or a ``(tokens, labels)`` pair.
    The encoder is copied from ``source`` (decoder dropped, head re-initialized).
    """
    if config.stage != "finetune":
        raise ConfigError(f"finetune needs stage='finetune', got {config.stage!r}", path="stage")
    params = transfer_encoder(source, derive_seed(config.seed, "head"))
    tokens, labels = _support_arrays(support, params.config.grid, config)
    names = params.trainable_names()
    return params, _fit_classifier(tokens, labels, params, names, config)


def linear_probe(
    support,
    source: Checkpoint | ModelParams,
    config: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """As :func:`finetune`, but only the classifier W, b are updated."""
    if config.stage != "linear_probe":
        raise ConfigError(f"linear_probe needs stage='linear_probe', got {config.stage!r}", path="stage")
    params = transfer_encoder(source, derive_seed(config.seed, "head"))
    tokens, labels = _support_arrays(support, params.config.grid, config)
    names = ["classifier.weight", "classifier.bias"]
    return params, _fit_classifier(tokens, labels, params, names, config)


def write_loss_trace(trace: Sequence[float], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
