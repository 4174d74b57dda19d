"""Group-based few-shot evaluation: episodes per (method, shot, split),
three metrics per episode, means per shot and a cross-shot ``avg`` row.

Method labels double as the ``config`` column of the results CSV:

* ``<configuration>``              fine-tuned from that configuration's encoder
* ``linear_probe:<configuration>``  frozen encoder, classifier only
* ``zeroshot:<configuration>``      untrained head (chance reference)
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from seizurecast.checkpoint import Checkpoint, transfer_encoder
from seizurecast.clipdata import ClipBundle, Configuration
from seizurecast.errors import EpisodeFailure
from seizurecast.fewshot.episodes import SHOTS, Episode, sample_episode, validate_pool
from seizurecast.fewshot.metrics import all_metrics
from seizurecast.model import ModelParams, predict_proba
from seizurecast.seeds import derive_seed
from seizurecast.training import TrainConfig, clip_tokens, finetune, linear_probe

log = logging.getLogger(__name__)

METRICS = ("bacc", "roc_auc", "pr_auc")
ZERO_SHOT_JITTER = 1e-6
CSV_FIELDS = ("config", "shot", "split", "bacc", "roc_auc", "pr_auc")

Source = Checkpoint | ModelParams


@dataclass(frozen=True)
class ProtocolSettings:
    shots: tuple[int, ...] = SHOTS
    n_splits: int = 10
    seed: int = 0
    epochs: int = 20
    lr: float = 1e-4
    linear_probe_of: tuple[str, ...] = ()
    zeroshot_of: tuple[str, ...] = ()


def zero_shot_scores(probs: np.ndarray, seed: int) -> np.ndarray:
    """Untrained-head scores with a seeded tie-break.

    The zero-initialized head outputs exactly 0.5 for every clip; adding
    ``ZERO_SHOT_JITTER * (u - 0.5)`` with u ~ U[0, 1) turns the all-tie into
    a random ranking and random 0.5-threshold decisions.
    """
    u = np.random.default_rng(seed).random(len(probs))
    return np.asarray(probs, dtype=np.float64) + ZERO_SHOT_JITTER * (u - 0.5)


@dataclass
class EpisodeResult:
    config: str
    shot: int
    split: int
    seed: int
    bacc: float
    roc_auc: float
    pr_auc: float


@dataclass
class ResultsTable:
    rows: list[EpisodeResult] = field(default_factory=list)

    def configs(self) -> list[str]:
        return list(dict.fromkeys(r.config for r in self.rows))

    def shots(self) -> list[int]:
        return sorted({r.shot for r in self.rows})

    def mean(self, config: str, shot: int | str, metric: str) -> float:
        if shot == "avg":
            return float(np.mean([self.mean(config, s, metric) for s in self.shots()]))
        vals = [getattr(r, metric) for r in self.rows if r.config == config and r.shot == shot]
        return float(np.mean(vals))

    def aggregate(self) -> list[tuple[str, str, str, float]]:
        """Long format: (config, shot or 'avg', metric, mean over splits)."""
        out = []
        for cfg in self.configs():
            for shot in [*self.shots(), "avg"]:
                for m in METRICS:
                    out.append((cfg, str(shot), m, self.mean(cfg, shot, m)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([r.config, r.shot, r.split, repr(r.bacc), repr(r.roc_auc), repr(r.pr_auc)])
        for cfg in self.configs():
            for shot in [*self.shots(), "avg"]:
                w.writerow([cfg, shot, "mean", *(repr(self.mean(cfg, shot, m)) for m in METRICS)])
        return buf.getvalue()

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _score_episode(kind: str, source: Source, ep: Episode, tokens, labels, index, settings, seed) -> np.ndarray:
    sup = [index[i] for i in ep.support_ids]
    qry = [index[i] for i in ep.query_ids]
    if kind == "zeroshot":
        params = transfer_encoder(source, derive_seed(seed, "head"))
        return zero_shot_scores(predict_proba(tokens[qry], params), derive_seed(seed, "tiebreak"))
    stage = "linear_probe" if kind == "linear_probe" else "finetune"
    cfg = TrainConfig(stage=stage, lr=settings.lr, epochs=settings.epochs, seed=seed)
    fit = linear_probe if kind == "linear_probe" else finetune
    params, _ = fit((tokens[sup], labels[sup]), source, cfg)
    return predict_proba(tokens[qry], params)


def run_protocol(
    pool: Sequence[ClipBundle],
    configs: Sequence[str | Configuration],
    source_for: Callable[[str], Source],
    settings: ProtocolSettings = ProtocolSettings(),
    tokens: np.ndarray | None = None,
) -> ResultsTable:
    """Evaluate every method on ``n_splits`` episodes per shot.

    ``source_for(configuration)`` supplies the encoder source (a pretraining
    checkpoint, or fresh parameters for Base); it is called once per
    configuration. Episode seeds depend on (seed, shot, split) only, so every
    method sees the same support/query splits.
    """
    validate_pool(pool)
    names = [Configuration.parse(c).value for c in configs]
    sources: dict[str, Source] = {}

    def source(name: str) -> Source:
        if name not in sources:
            sources[name] = source_for(name)
        return sources[name]

    if tokens is None:
        grid = source(names[0]).config.grid if names else None
        tokens = clip_tokens(pool, grid)
    labels = np.array([c.label for c in pool], dtype=np.float64)
    index = {c.meta.id: k for k, c in enumerate(pool)}
    ids = [c.meta.id for c in pool]

    methods = [(n, "finetune", n) for n in names]
    methods += [(f"linear_probe:{Configuration.parse(n).value}", "linear_probe", Configuration.parse(n).value) for n in settings.linear_probe_of]
    methods += [(f"zeroshot:{Configuration.parse(n).value}", "zeroshot", Configuration.parse(n).value) for n in settings.zeroshot_of]

    table = ResultsTable()
    for method, kind, cfg_name in methods:
        for shot in settings.shots:
            for split in range(settings.n_splits):
                ep_seed = derive_seed(settings.seed, "episode", shot, split)
                run_seed = derive_seed(settings.seed, "run", method, shot, split)
                src = source(cfg_name)
                try:
                    ep = sample_episode(pool, shot, ep_seed)
                    scores = _score_episode(kind, src, ep, tokens, labels, index, settings, run_seed)
                    qlab = np.array([y for _, y in ep.query])
                    m = all_metrics(qlab, scores, ids=[ids.index(i) for i in ep.query_ids])
                except Exception as exc:  # noqa: BLE001 - re-raised with reproduction info
                    raise EpisodeFailure(ep_seed, f"{method}/shot={shot}/split={split}", exc) from exc
                table.rows.append(EpisodeResult(method, shot, split, ep_seed, m["bacc"], m["roc_auc"], m["pr_auc"]))
            log.info("%s %d-shot bacc=%.4f", method, shot, table.mean(method, shot, "bacc"))
    return table
