"""On-disk checkpoint cache: one continual-pretraining run per
(configuration, mask ratio, seed), reused across shots and splits."""

from __future__ import annotations

import logging
from pathlib import Path

from seizurecast.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from seizurecast.clipdata import Configuration, build_pretrain_dataset
from seizurecast.errors import StaleCacheError
from seizurecast.harness import config as C
from seizurecast.model import ModelParams, init_params
from seizurecast.seeds import derive_seed
from seizurecast.training import TrainConfig, pretrain, write_loss_trace

log = logging.getLogger(__name__)


def base_params(cfg: dict) -> ModelParams:
    """Shared starting point: Base evaluates it directly, every other
    configuration continues pretraining from it."""
    return init_params(C.model_config(cfg), derive_seed(cfg["seed"], "init"))


def expected_provenance(cfg: dict, configuration: Configuration, ratio: float) -> dict[str, str]:
    p, d = cfg["pretrain"], cfg["data"]
    counts = ",".join(f"{k}:{v}" for k, v in sorted(d["counts"].items()))
    model = ",".join(f"{k}:{v}" for k, v in sorted(C.model_config(cfg).to_dict().items()))
    return {
        "configuration": configuration.value,
        "mask_ratio": repr(float(ratio)),
        "seed": str(cfg["seed"]),
        "lr": repr(float(p["lr"])),
        "epochs": str(p["epochs"]),
        "batch_size": str(p["batch_size"]),
        "T": str(cfg["model"]["T"]),
        "rate": str(cfg["model"]["rate"]),
        "counts": counts,
        "rodent_normal_pool": str(d["rodent_normal_pool"]),
        "geometry": f"{d['frames']}x{d['height']}x{d['width']}",
        "model": model,
    }


class CheckpointCache:
    def __init__(self, cfg: dict, directory: str | Path | None = None, refresh: bool = False):
        self.cfg = cfg
        self.directory = Path(directory or cfg["cache_dir"])
        self.refresh = refresh
        self.pretrain_steps = 0
        self._base: ModelParams | None = None

    def path(self, configuration: Configuration, ratio: float) -> Path:
        return self.directory / f"{configuration.slug}_rho{float(ratio)!r}_seed{self.cfg['seed']}.ckpt"

    def base(self) -> ModelParams:
        if self._base is None:
            self._base = base_params(self.cfg)
        return self._base

    def get(self, configuration: str | Configuration, ratio: float | None = None) -> Checkpoint | ModelParams:
        configuration = Configuration.parse(configuration)
        if configuration is Configuration.BASE:
            return self.base()
        ratio = self.cfg["pretrain"]["mask_ratio"] if ratio is None else ratio
        want = expected_provenance(self.cfg, configuration, ratio)
        path = self.path(configuration, ratio)
        if path.exists() and not self.refresh:
            ckpt = load_checkpoint(path)
            got = {k: ckpt.provenance.get(k) for k in want}
            if got != want:
                diff = sorted(k for k in want if got[k] != want[k])
                raise StaleCacheError(f"{path} was trained with different settings ({', '.join(diff)}); delete it or rerun with --refresh-cache")
            log.info("cache hit %s", path.name)
            return ckpt
        return self._train(configuration, ratio, want, path)

    def _train(self, configuration: Configuration, ratio: float, provenance: dict, path: Path) -> Checkpoint:
        p = self.cfg["pretrain"]
        clips = build_pretrain_dataset(C.dataset_spec(self.cfg, configuration))
        tc = TrainConfig(
            stage="pretrain",
            lr=p["lr"],
            epochs=p["epochs"],
            batch_size=p["batch_size"],
            mask_ratio=ratio,
            seed=derive_seed(self.cfg["seed"], "pretrain", configuration.slug),
            T=self.cfg["model"]["T"],
            rate=self.cfg["model"]["rate"],
        )
        log.info("pretraining %s at mask ratio %s on %d clips", configuration.value, ratio, len(clips))
        ckpt, trace = pretrain(clips, tc, self.base(), provenance)
        self.pretrain_steps += len(trace)
        self.directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt, path)
        write_loss_trace(trace, path.with_suffix(".loss.csv"))
        return ckpt


def cache_checkpoints(cfg: dict, configs, ratio: float | None = None, directory=None) -> dict[str, Checkpoint | ModelParams]:
    cache = CheckpointCache(cfg, directory)
    return {Configuration.parse(c).value: cache.get(c, ratio) for c in configs}
