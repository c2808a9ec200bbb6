"""Command-line entry point.

Exit codes: 0 success, 1 I/O error, 2 usage or validation error,
3 consistency error (checkpoint/config mismatch).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock

from .cascade import ConfigError, ObservationConfig, UserIndex
from .influence import HopSampleConfig, influence_table, load_influence_cache, save_influence_cache
from .ingestion import (
    DatasetSplit,
    build_global_graph,
    dataset_statistics,
    filter_and_truncate,
    format_report,
    parse_cascade_file,
    split_dataset,
    write_cascade_file,
)
from .network import VARIANT_FLAGS, CasCIFF, ModelConfig
from .numeric.checkpoint import CheckpointError
from .snapshots import build_snapshots, write_triplets
from .synthetic import DiffusionParams, GraphParams, generate_synthetic
from .training import (
    TrainConfig,
    evaluate,
    export_embeddings,
    load_model,
    model_config_for,
    prepare,
    save_model,
    train,
    variant_tag,
)

log = logging.getLogger("casciff")

CACHE_ENV = "CASCIFF_CACHE_DIR"
CONFIG_SECTIONS = {"observation", "hop", "model", "train", "data", "cache_dir", "seed"}


class UsageError(Exception):
    pass


class ConsistencyError(Exception):
    pass


# config ----------------------------------------------------------------------


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - CONFIG_SECTIONS
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    checks = {
        "observation": ObservationConfig,
        "hop": HopSampleConfig,
        "model": ModelConfig,
        "train": TrainConfig,
    }
    for section, cls in checks.items():
        keys = set(cfg.get(section, {}))
        allowed = {f.name for f in dataclasses.fields(cls)}
        if keys - allowed:
            raise UsageError(f"unknown keys in [{section}]: {sorted(keys - allowed)}")
    if set(cfg.get("data", {})) - {"path", "time_scale"}:
        raise UsageError(f"unknown keys in [data]: {sorted(set(cfg['data']) - {'path', 'time_scale'})}")
    return cfg


def _merge(section: dict, **flags) -> dict:
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _sha_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# commands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    if not 0 <= args.prob <= 1:
        raise UsageError(f"--prob must be in [0, 1], got {args.prob}")
    if not 0 <= args.leaders <= 1:
        raise UsageError(f"--leaders must be in [0, 1], got {args.leaders}")
    if not 0 <= args.fake_followers <= 1:
        raise UsageError(f"--fake-followers must be in [0, 1], got {args.fake_followers}")
    if args.nodes < 2:
        raise UsageError("--nodes must be >= 2")
    if args.cascades < 1:
        raise UsageError("--cascades must be >= 1")
    gp = GraphParams(num_nodes=args.nodes, leader_fraction=args.leaders, fake_fraction=args.fake_followers,
                     leader_degree=min(args.leader_degree, args.nodes - 1))
    dp = DiffusionParams(prob=args.prob, delay_scale=args.delay, virality_sigma=args.virality,
                         degree_weighted_roots=not args.uniform_roots)
    corpus = generate_synthetic(gp, dp, args.cascades, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cascades.txt", "w", newline="\n") as fh:
        write_cascade_file(fh, corpus.cascades, corpus.users)
    lines = [
        f"seed = {args.seed}",
        "leaders = " + " ".join(map(str, corpus.graph.leaders.tolist())),
        "fake_followers = " + " ".join(map(str, corpus.graph.fake_followers.tolist())),
    ]
    lines += [f"horizon_size {c.cascade_id} = {c.horizon_size}" for c in corpus.cascades]
    _write(out / "truth.txt", "\n".join(lines) + "\n")
    print(f"wrote {len(corpus.cascades)} cascades to {out / 'cascades.txt'}")
    return 0


def _observation(cfg: dict, args) -> ObservationConfig:
    sec = _merge(cfg.get("observation", {}), window=args.window, horizon=args.horizon,
                 decay_interval=args.decay_interval, min_nodes=args.min_nodes, max_nodes=args.max_nodes)
    if "window" not in sec or "horizon" not in sec:
        raise UsageError("--window and --horizon are required (flag or config)")
    sec.setdefault("decay_interval", sec["window"] / 6.0)
    return ObservationConfig(**sec)


def _hop(cfg: dict, args) -> HopSampleConfig:
    return HopSampleConfig(**_merge(cfg.get("hop", {}), k=args.hop_k, max_hop=args.hop_n, s=args.hop_s))


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    data_path = args.data or cfg.get("data", {}).get("path")
    if not data_path:
        raise UsageError("--data is required")
    time_scale = args.time_scale if args.time_scale is not None else cfg.get("data", {}).get("time_scale", 1.0)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    obs = _observation(cfg, args)
    hop = _hop(cfg, args)
    out = Path(args.out_dir)

    users = UserIndex()
    with open(data_path, encoding="utf-8") as fh:
        cascades = parse_cascade_file(fh, users, time_scale=time_scale)
    labeled = filter_and_truncate(cascades, obs)
    split = split_dataset(labeled, seed)
    stats = dataset_statistics(cascades, split, obs)

    keep = {c.cascade_id for c in labeled}
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "cascades.txt", "w", newline="\n") as fh:
        write_cascade_file(fh, [c.clip(obs.horizon) for c in cascades if c.cascade_id in keep], users)
    _write(out / "users.tsv", users.dumps())
    _write(out / "manifest.tsv", split.manifest())
    _write(out / "stats.txt", format_report(stats))
    resolved = {
        "observation": dataclasses.asdict(obs),
        "hop": dataclasses.asdict(hop),
        "data": {"path": str(data_path), "time_scale": time_scale},
        "seed": seed,
    }
    _write(out / "run_config.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    # influence vectors, content-addressed by (data, observation, hop, seed)
    key_src = json.dumps({"data": _sha_file(data_path), "obs": resolved["observation"], "hop": resolved["hop"],
                          "seed": seed, "time_scale": time_scale}, sort_keys=True)
    key = hashlib.sha256(key_src.encode()).hexdigest()[:20]
    cache_dir = Path(os.environ.get(CACHE_ENV) or cfg.get("cache_dir") or out / "cache")
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache_file = cache_dir / f"influence-{key}.bin"
    with FileLock(str(cache_file) + ".lock"):
        if cache_file.exists():
            table, _ = load_influence_cache(cache_file)
        else:
            prepared = prepare(split, obs, hop, seed, num_users=len(users))
            table = prepared.hop_table
            save_influence_cache(cache_file, table, hop, seed)
    save_influence_cache(out / "influence.bin", table, hop, seed)

    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for lc in labeled:
        write_triplets(snap_dir / f"{lc.cascade_id}.txt", build_snapshots(lc, obs))

    print(format_report(stats), end="")
    return 0


def load_prepared(data_dir: str, leader_percentile: float = 95.0):
    d = Path(data_dir)
    resolved = json.loads((d / "run_config.json").read_text())
    obs = ObservationConfig(**resolved["observation"])
    hop = HopSampleConfig(**resolved["hop"])
    users = UserIndex.loads((d / "users.tsv").read_text())
    with open(d / "cascades.txt", encoding="utf-8") as fh:
        cascades = parse_cascade_file(fh, users)
    labeled = filter_and_truncate(cascades, obs)
    split = DatasetSplit.from_manifest((d / "manifest.tsv").read_text(), labeled)
    table, header = load_influence_cache(d / "influence.bin")
    return prepare(split, obs, hop, resolved["seed"], num_users=len(users),
                   leader_percentile=leader_percentile, hop_table=table), resolved


def _train_config(cfg: dict, args) -> TrainConfig:
    return TrainConfig(**_merge(cfg.get("train", {}), lr=args.lr, batch_size=args.batch_size,
                                patience=args.patience, max_epochs=args.epochs, seed=args.seed,
                                monitor=args.monitor))


def _model_overrides(cfg: dict, args) -> dict:
    over = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.get("model", {}).items()}
    if getattr(args, "l2", None) is not None:
        over["l2"] = args.l2
    return over


def _run_training(args, variant: str) -> int:
    cfg = load_config(args.config)
    tc = _train_config(cfg, args)
    prepared, resolved = load_prepared(args.data_dir, tc.leader_percentile)
    mc = model_config_for(prepared, **_model_overrides(cfg, args)).with_variant(variant)
    model = CasCIFF(mc, seed=tc.seed)
    _, report, opt = train(model, prepared, tc, variant=variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "checkpoint.bin", model, opt, report)
    _write(out / "report.txt", report.to_text())
    _write(out / "epochs.jsonl", report.epoch_log())
    print(f"variant = {report.variant}")
    print(f"MSLE = {report.test_msle!r}")
    print(f"MAPE = {report.test_mape!r}")
    print(f"baseline_MSLE = {report.baseline_msle!r}")
    print(f"best_epoch = {report.best_epoch}")
    return 0


def cmd_train(args) -> int:
    return _run_training(args, args.variant)


def cmd_ablate(args) -> int:
    return _run_training(args, args.variant)


def _checked_model(args):
    cfg = load_config(args.config)
    model, meta = load_model(args.checkpoint)
    prepared, _ = load_prepared(args.data_dir)
    variant_flags = {k: meta["model_config"][k] for k in ("local_off", "global_off", "time_off", "decay_off", "class_off")}
    expected = model_config_for(prepared, **{**{k: (tuple(v) if isinstance(v, list) else v)
                                                   for k, v in meta["model_config"].items()
                                                   if k not in ("hop_n", "hop_s", "vector_hop_weights", "hop_lambda_init",
                                                                "max_nodes", "window", "decay_interval")},
                                                **_model_overrides(cfg, args), **variant_flags})
    if expected.hash() != meta["config_hash"]:
        raise ConsistencyError(f"config hash mismatch: checkpoint {meta['config_hash']} vs data/config {expected.hash()}")
    return model, meta, prepared


def cmd_eval(args) -> int:
    model, meta, prepared = _checked_model(args)
    part = getattr(prepared.split, args.split)
    res = evaluate(model, part, prepared)
    print(f"MSLE = {res.msle!r}")
    print(f"MAPE = {res.mape!r}")
    print(f"n = {res.n}")
    print(f"mape_excluded = {res.mape_excluded}")
    return 0


def cmd_export(args) -> int:
    model, meta, prepared = _checked_model(args)
    s = prepared.split
    parts = {"train": s.train, "valid": s.valid, "test": s.test, "all": s.train + s.valid + s.test}[args.split]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        n = export_embeddings(model, parts, prepared, fh)
    print(f"wrote {n} rows to {out}")
    return 0


def cmd_grad_check(args) -> int:
    from .numeric.gradcheck import grad_check
    from .verify import randomize, toy_grad_check

    if args.toy or not args.data_dir:
        res = toy_grad_check(eps=args.eps, seed=args.seed or 0)
    else:
        prepared, _ = load_prepared(args.data_dir)
        from .training import batch_of, examples_for
        mc = model_config_for(prepared)
        model = CasCIFF(mc, seed=args.seed or 0)
        randomize(model, (args.seed or 0) + 1, scale=0.05)
        ex = examples_for(prepared.split.train[:3], prepared, mc)
        batch = batch_of(ex, prepared, mc)
        res = grad_check(lambda: model.loss(batch)[0].total, model.parameters(), eps=args.eps, max_coords=args.max_coords)
    print(f"checked = {res.checked}")
    print(f"excluded_kinks = {res.excluded_kinks}")
    print(f"max_rel_error = {res.max_rel_error!r}")
    return 0 if res.max_rel_error < 1e-4 else 1


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="casciff", description="Cascade popularity prediction pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--nodes", type=int, default=500)
    s.add_argument("--cascades", type=int, default=2000)
    s.add_argument("--prob", type=float, default=0.15)
    s.add_argument("--leaders", type=float, default=0.05)
    s.add_argument("--leader-degree", type=int, default=40)
    s.add_argument("--fake-followers", type=float, default=0.0)
    s.add_argument("--delay", type=float, default=600.0)
    s.add_argument("--virality", type=float, default=0.5)
    s.add_argument("--uniform-roots", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="filter, split and cache a corpus")
    s.add_argument("--data")
    s.add_argument("--config")
    s.add_argument("--window", type=float)
    s.add_argument("--horizon", type=float)
    s.add_argument("--decay-interval", type=float)
    s.add_argument("--min-nodes", type=int)
    s.add_argument("--max-nodes", type=int)
    s.add_argument("--time-scale", type=float)
    s.add_argument("--hop-k", type=int)
    s.add_argument("--hop-n", type=int)
    s.add_argument("--hop-s", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_preprocess)

    def training_flags(s):
        s.add_argument("--data-dir", required=True)
        s.add_argument("--out", required=True)
        s.add_argument("--config")
        s.add_argument("--lr", type=float)
        s.add_argument("--l2", type=float)
        s.add_argument("--epochs", type=int)
        s.add_argument("--batch-size", type=int)
        s.add_argument("--patience", type=int)
        s.add_argument("--monitor", choices=("reg", "total"))
        s.add_argument("--seed", type=int)

    s = sub.add_parser("train", help="train a model")
    training_flags(s)
    s.add_argument("--variant", default="full", choices=sorted(VARIANT_FLAGS))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("ablate", help="train one ablation variant")
    training_flags(s)
    s.add_argument("--variant", required=True, choices=sorted(VARIANT_FLAGS))
    s.set_defaults(func=cmd_ablate)

    for name, func, extra in (("eval", cmd_eval, False), ("export-embeddings", cmd_export, True)):
        s = sub.add_parser(name)
        s.add_argument("--data-dir", required=True)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--config")
        s.add_argument("--l2", type=float)
        if extra:
            s.add_argument("--out", required=True)
            s.add_argument("--split", default="all", choices=("train", "valid", "test", "all"))
        else:
            s.add_argument("--split", default="test", choices=("train", "valid", "test"))
        s.set_defaults(func=func)

    s = sub.add_parser("grad-check", help="finite-difference gradient check")
    s.add_argument("--toy", action="store_true")
    s.add_argument("--data-dir")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--max-coords", type=int, default=200)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, UnicodeDecodeError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConsistencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

if __name__ == "__main__":
    sys.exit(main())
