"""``seizurecast <command> --config file.json``

Exit status: 0 success, 2 usage/config error (field path printed),
3 runtime failure (reproduction seed printed).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

import seizurecast
from seizurecast.checkpoint import Checkpoint, save_checkpoint
from seizurecast.clipdata import Configuration, build_fewshot_pool, build_pretrain_dataset, write_dataset
from seizurecast.errors import ConfigError, EpisodeFailure
from seizurecast.fewshot.episodes import sample_episode
from seizurecast.fewshot.metrics import all_metrics
from seizurecast.fewshot.protocol import METRICS, ProtocolSettings, ResultsTable, run_protocol
from seizurecast.harness import config as C
from seizurecast.harness.cache import CheckpointCache
from seizurecast.model import predict_proba
from seizurecast.seeds import derive_seed
from seizurecast.training import TrainConfig, clip_tokens, finetune

log = logging.getLogger("seizurecast")

COMMANDS = ("gen-data", "pretrain", "finetune", "evaluate", "ablate", "sweep-mask")
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _outdir(cfg: dict, command: str) -> Path:
    out = Path(cfg["output_dir"]) / command
    out.mkdir(parents=True, exist_ok=True)
    resolved = {"tool_version": seizurecast.__version__, "command": command, "config": cfg}
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    return out


def _pool_tokens(cfg: dict):
    pool = build_fewshot_pool(cfg["seed"], geometry=C.geometry(cfg))
    tokens = clip_tokens(pool, C.model_config(cfg).grid, cfg["model"]["T"], cfg["model"]["rate"])
    return pool, tokens


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _settings(cfg: dict, section: dict, linear_probe=(), zeroshot=()) -> ProtocolSettings:
    return ProtocolSettings(
        shots=tuple(sorted(section["shots"])),
        n_splits=section["n_splits"],
        seed=cfg["seed"],
        epochs=cfg["finetune"]["epochs"],
        lr=cfg["finetune"]["lr"],
        linear_probe_of=tuple(linear_probe),
        zeroshot_of=tuple(zeroshot),
    )


def cmd_gen_data(cfg: dict, args) -> None:
    out = _outdir(cfg, "gen-data")
    seen, manifests = {}, {}
    for configuration in Configuration:
        clips = build_pretrain_dataset(C.dataset_spec(cfg, configuration))
        manifests[configuration] = [c.meta.id for c in clips]
        seen.update({c.meta.id: c for c in clips})
    write_dataset(list(seen.values()), out / "clips", manifest_name="all.json")
    for configuration, ids in manifests.items():
        entries = [{"id": i, "path": f"clips/{i}.clpb", "species": seen[i].meta.species, "condition": seen[i].meta.condition} for i in ids]
        (out / f"{configuration.slug}.json").write_text(json.dumps(entries, indent=1) + "\n")
    pool = build_fewshot_pool(cfg["seed"], geometry=C.geometry(cfg))
    write_dataset(pool, out / "pool")
    print(f"wrote {len(seen)} pretraining clips and {len(pool)} pool clips to {out}")


def cmd_pretrain(cfg: dict, args) -> None:
    out = _outdir(cfg, "pretrain")
    configuration = Configuration.parse(cfg["pretrain"]["configuration"])
    cache = CheckpointCache(cfg, refresh=args.refresh_cache)
    ckpt = cache.get(configuration)
    path = out / f"{configuration.slug}.ckpt"
    save_checkpoint(ckpt, path)
    print(f"{configuration.value}: {cache.pretrain_steps} pretraining steps, checkpoint {path}")


def cmd_finetune(cfg: dict, args) -> None:
    out = _outdir(cfg, "finetune")
    f = cfg["finetune"]
    configuration = Configuration.parse(f["configuration"])
    source = CheckpointCache(cfg, refresh=args.refresh_cache).get(configuration)
    pool, tokens = _pool_tokens(cfg)
    episode_seed = derive_seed(cfg["seed"], "episode", f["shot"], f["split"])
    ep = sample_episode(pool, f["shot"], episode_seed)
    try:
        index = {c.meta.id: k for k, c in enumerate(pool)}
        sup = [index[i] for i in ep.support_ids]
        qry = [index[i] for i in ep.query_ids]
        labels = np.array([c.label for c in pool], dtype=np.float64)
        tc = TrainConfig(stage="finetune", lr=f["lr"], epochs=f["epochs"], seed=derive_seed(cfg["seed"], "run", configuration.value, f["shot"], f["split"]))
        params, trace = finetune((tokens[sup], labels[sup]), source, tc)
        scores = predict_proba(tokens[qry], params)
        metrics = all_metrics(labels[qry], scores, ids=qry)
    except Exception as exc:
        raise EpisodeFailure(episode_seed, f"{configuration.value}/shot={f['shot']}/split={f['split']}", exc) from exc
    stem = f"{configuration.slug}_shot{f['shot']}_split{f['split']}"
    prov = {"stage": "finetune", "configuration": configuration.value, "shot": str(f["shot"]), "split": str(f["split"]), "episode_seed": str(episode_seed)}
    save_checkpoint(Checkpoint(params.config, params, prov), out / f"{stem}.ckpt")
    _write_rows(out / f"{stem}_predictions.csv", ("id", "label", "score"), [(i, int(labels[k]), repr(float(s))) for i, k, s in zip(ep.query_ids, qry, scores)])
    _write_rows(out / f"{stem}_metrics.csv", METRICS, [[repr(metrics[m]) for m in METRICS]])
    _write_rows(out / f"{stem}_loss.csv", ("step", "loss"), [(i, repr(v)) for i, v in enumerate(trace)])
    print(" ".join(f"{m}={metrics[m]:.4f}" for m in METRICS))


def _write_table(table: ResultsTable, out: Path, summary_name: str) -> None:
    table.write_csv(out / "results.csv")
    _write_rows(out / summary_name, ("config", "shot", "metric", "value"), [(c, s, m, repr(v)) for c, s, m, v in table.aggregate()])


def _print_summary(table: ResultsTable) -> None:
    for cfg_name in table.configs():
        print(f"{cfg_name:>28s}  " + "  ".join(f"{m}={table.mean(cfg_name, 'avg', m):.4f}" for m in METRICS))


def cmd_evaluate(cfg: dict, args) -> None:
    out = _outdir(cfg, "evaluate")
    e = cfg["evaluate"]
    cache = CheckpointCache(cfg, refresh=args.refresh_cache)
    pool, tokens = _pool_tokens(cfg)
    table = run_protocol(pool, e["configs"], cache.get, _settings(cfg, e, e["linear_probe"], e["zeroshot"]), tokens=tokens)
    _write_table(table, out, "summary.csv")
    _print_summary(table)


def cmd_ablate(cfg: dict, args) -> None:
    out = _outdir(cfg, "ablate")
    cache = CheckpointCache(cfg, refresh=args.refresh_cache)
    pool, tokens = _pool_tokens(cfg)
    table = run_protocol(pool, [c.value for c in Configuration], cache.get, _settings(cfg, cfg["ablate"]), tokens=tokens)
    _write_table(table, out, "ablation.csv")
    _print_summary(table)
    log.info("pretraining steps this run: %d", cache.pretrain_steps)


def cmd_sweep_mask(cfg: dict, args) -> None:
    out = _outdir(cfg, "sweep-mask")
    s = cfg["sweep"]
    cache = CheckpointCache(cfg, refresh=args.refresh_cache)
    pool, tokens = _pool_tokens(cfg)
    rows = []
    for ratio in s["ratios"]:
        table = run_protocol(pool, s["configs"], lambda name: cache.get(name, ratio), _settings(cfg, s), tokens=tokens)
        for name in table.configs():
            for shot in [*table.shots(), "avg"]:
                rows.append((repr(float(ratio)), name, shot, repr(table.mean(name, shot, "bacc"))))
    _write_rows(out / "sweep.csv", ("ratio", "config", "shot", "bacc"), rows)
    for ratio in s["ratios"]:
        avg = [float(r[3]) for r in rows if r[0] == repr(float(ratio)) and r[2] == "avg"]
        print(f"ratio {ratio}: mean avg-bacc {np.mean(avg):.4f}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep-mask": cmd_sweep_mask,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 as well; keep the message format uniform
        self.print_usage(sys.stderr)
        print(f"config error at <args>: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seizurecast", description="Synthetic seizure-forecasting pretraining and few-shot evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {seizurecast.__version__}")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", "-c", help="JSON experiment config (defaults used when omitted)")
    parser.add_argument("--refresh-cache", action="store_true", help="retrain instead of reusing cached checkpoints")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    seed = None
    try:
        cfg = C.load(args.config) if args.config else C.resolve({})
        seed = cfg["seed"]
        HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error at {exc.path or '<root>'}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except EpisodeFailure as exc:
        print(f"runtime failure: {exc} (reproduce with global seed={seed}, episode seed={exc.seed})", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every other failure maps to exit 3
        log.debug("traceback", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc} (reproduce with seed={seed})", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
