"""Training loop, early stopping, metrics, ablations and embedding export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .batching import Batch, Example, log_target, make_batch, make_example
from .cascade import LabeledCascade, ObservationConfig
from .influence import HopSampleConfig, influence_table, leader_mask
from .ingestion import DatasetSplit, GlobalGraph, build_global_graph
from .network import CasCIFF, ModelConfig, VARIANT_FLAGS
from .numeric import autograd as T
from .numeric.checkpoint import load_checkpoint, save_checkpoint
from .numeric.init import make_rng
from .numeric.optim import Adam

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    patience: int = 10
    max_epochs: int = 50
    seed: int = 0
    monitor: str = "reg"  # "reg" (validation regression loss) or "total"
    leader_percentile: float = 95.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.monitor not in ("reg", "total"):
            raise ValueError(f"monitor must be 'reg' or 'total', got {self.monitor!r}")


LR_GRID = tuple(10.0 ** -k for k in range(1, 6))
L2_GRID = tuple(10.0 ** -k for k in range(0, 9))


# metrics -------------------------------------------------------------------


def msle(y, y_hat) -> float:
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean((np.log2(y + 1.0) - np.log2(y_hat + 1.0)) ** 2))


def mape(y, y_hat) -> tuple[float, int]:
    """Relative error in log2 space; cascades with y == 0 are skipped (returned as a count)."""
    y, y_hat = np.asarray(y, dtype=np.float64), np.asarray(y_hat, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty evaluation set")
    ly, lh = np.log2(y + 1.0), np.log2(y_hat + 1.0)
    keep = ly > 0
    excluded = int((~keep).sum())
    if not keep.any():
        return 0.0, excluded
    return float(np.mean(np.abs(ly[keep] - lh[keep]) / ly[keep])), excluded


@dataclass
class EvalResult:
    msle: float
    mape: float
    n: int
    mape_excluded: int
    predictions: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a strictly lower value."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.wait = value, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


# data preparation ----------------------------------------------------------


@dataclass
class PreparedData:
    split: DatasetSplit
    obs: ObservationConfig
    hop: HopSampleConfig
    hop_seed: int
    graph: GlobalGraph
    hop_table: dict[int, np.ndarray]
    leaders: np.ndarray

    def is_leader(self, u: int) -> bool:
        return bool(u < len(self.leaders) and self.leaders[u])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name, part in (("train", self.split.train), ("valid", self.split.valid), ("test", self.split.test)):
            for lc in part:
                h.update(f"{name}|{lc.cascade_id}|{lc.target}|".encode())
                h.update(np.array([(a.user, -1 if a.parent is None else a.parent) for a in lc.observed.activations], dtype="<i8").tobytes())
                h.update(np.array([a.time for a in lc.observed.activations], dtype="<f8").tobytes())
        for u in sorted(self.hop_table):
            h.update(np.int64(u).tobytes())
            h.update(np.ascontiguousarray(self.hop_table[u], dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def observed_users(cascades: Iterable[LabeledCascade]) -> set[int]:
    return {a.user for lc in cascades for a in lc.observed.activations}


def prepare(split: DatasetSplit, obs: ObservationConfig, hop: HopSampleConfig, hop_seed: int,
            num_users: int | None = None, leader_percentile: float = 95.0,
            hop_table: dict[int, np.ndarray] | None = None) -> PreparedData:
    """Global graph and labels from the training split only; hop vectors for every observed user."""
    users = observed_users(split.train) | observed_users(split.valid) | observed_users(split.test)
    n = max(num_users or 0, max(users) + 1 if users else 0)
    graph = build_global_graph(split.train, num_nodes=n)
    if hop_table is None:
        hop_table = influence_table(graph, users, hop, hop_seed)
    return PreparedData(split, obs, hop, hop_seed, graph, hop_table, leader_mask(graph, leader_percentile))


def model_config_for(prepared: PreparedData, **overrides) -> ModelConfig:
    base = dict(
        hop_n=prepared.hop.max_hop, hop_s=prepared.hop.s, vector_hop_weights=prepared.hop.vector_weights,
        hop_lambda_init=prepared.hop.lambda_init, max_nodes=prepared.obs.max_nodes,
        window=prepared.obs.window, decay_interval=prepared.obs.decay_interval,
    )
    base.update(overrides)
    return ModelConfig(**base)


def examples_for(cascades: Sequence[LabeledCascade], prepared: PreparedData, cfg: ModelConfig) -> list[Example]:
    return [make_example(lc, prepared.obs, binary=cfg.time_off, edge_weight=cfg.edge_weight) for lc in cascades]


def batch_of(examples: list[Example], prepared: PreparedData, cfg: ModelConfig) -> Batch:
    return make_batch(examples, prepared.hop_table, prepared.is_leader, cfg.decay_interval,
                      cfg.num_decay_intervals, cfg.window, (cfg.hop_n, cfg.hop_s))


def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


# training ------------------------------------------------------------------


@dataclass
class RunReport:
    variant: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = float("inf")
    stopped_early: bool = False
    test_msle: float = float("nan")
    test_mape: float = float("nan")
    test_n: int = 0
    test_mape_excluded: int = 0
    baseline_msle: float = float("nan")
    num_parameters: int = 0
    influence_dim: int = 0
    step_dim: int = 0
    input_hash: str = ""
    config: dict = field(default_factory=dict)

    METRIC_KEYS = ("best_epoch", "best_valid", "test_msle", "test_mape", "test_n", "test_mape_excluded", "baseline_msle")

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in self.METRIC_KEYS}

    def to_text(self) -> str:
        """Structured key = value text, one field per line."""
        rows = [
            ("variant", self.variant),
            ("epochs_run", len(self.epochs)),
            ("stopped_early", self.stopped_early),
            ("best_epoch", self.best_epoch),
            ("best_valid", repr(self.best_valid)),
            ("test_msle", repr(self.test_msle)),
            ("test_mape", repr(self.test_mape)),
            ("test_n", self.test_n),
            ("test_mape_excluded", self.test_mape_excluded),
            ("baseline_msle", repr(self.baseline_msle)),
            ("num_parameters", self.num_parameters),
            ("influence_dim", self.influence_dim),
            ("step_dim", self.step_dim),
            ("input_hash", self.input_hash),
            ("mean_epoch_seconds", repr(float(np.mean([e["seconds"] for e in self.epochs])) if self.epochs else 0.0)),
            ("config", json.dumps(self.config, sort_keys=True)),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)

    def epoch_log(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.epochs)

    @staticmethod
    def parse_text(text: str) -> dict[str, str]:
        out = {}
        for line in text.splitlines():
            if " = " in line:
                k, v = line.split(" = ", 1)
                out[k] = v
        return out


def _mean_parts(parts: list[dict[str, float]], weights: list[int]) -> dict[str, float]:
    total = float(sum(weights))
    keys = parts[0].keys()
    return {k: float(sum(p[k] * w for p, w in zip(parts, weights)) / total) for k in keys}


def evaluate_loss(model: CasCIFF, examples: list[Example], prepared: PreparedData, batch_size: int) -> dict[str, float]:
    parts, weights = [], []
    for chunk in _chunks(examples, batch_size):
        lb, _ = model.loss(batch_of(chunk, prepared, model.config))
        d = dict(lb.parts)
        d["total"] = float(lb.total.data)
        parts.append(d)
        weights.append(len(chunk))
    return _mean_parts(parts, weights)


def predict(model: CasCIFF, examples: list[Example], prepared: PreparedData, batch_size: int = 64) -> np.ndarray:
    out = [model.predict(batch_of(chunk, prepared, model.config)) for chunk in _chunks(examples, batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: CasCIFF, test: Sequence[LabeledCascade], prepared: PreparedData, batch_size: int = 64) -> EvalResult:
    if not test:
        raise ValueError("empty test set")
    ex = examples_for(test, prepared, model.config)
    y = np.array([e.target for e in ex], dtype=np.float64)
    y_hat = predict(model, ex, prepared, batch_size)
    m, excluded = mape(y, y_hat)
    return EvalResult(msle(y, y_hat), m, len(y), excluded, y_hat)


def constant_baseline_msle(train: Sequence[LabeledCascade], test: Sequence[LabeledCascade]) -> float:
    """MSLE of always predicting the training mean of log2(target + 1)."""
    mu = float(np.mean(log_target([c.target for c in train])))
    y = log_target([c.target for c in test])
    return float(np.mean((y - mu) ** 2))


def train(model: CasCIFF, prepared: PreparedData, cfg: TrainConfig, variant: str = "full") -> tuple[dict[str, np.ndarray], RunReport, Adam]:
    """Mini-batch Adam with early stopping; the model is left holding the best parameters."""
    mc = model.config
    split = prepared.split
    train_ex = examples_for(split.train, prepared, mc)
    valid_ex = examples_for(split.valid, prepared, mc)
    if not train_ex or not valid_ex:
        raise ValueError("training and validation splits must be non-empty")
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = make_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience)
    report = RunReport(
        variant=variant_tag(variant),
        num_parameters=model.num_parameters(),
        influence_dim=mc.influence_dim if not mc.global_off else 0,
        step_dim=mc.step_dim,
        input_hash=prepared.content_hash(),
        config={"model": mc.to_dict(), "train": dataclasses.asdict(cfg),
                "observation": dataclasses.asdict(prepared.obs), "hop": dataclasses.asdict(prepared.hop)},
    )
    best_state = {k: v.copy() for k, v in model.state_arrays().items()}
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(train_ex))
        parts, weights = [], []
        for bi, idx in enumerate(_chunks(order.tolist(), cfg.batch_size)):
            batch = batch_of([train_ex[i] for i in idx], prepared, mc)
            opt.zero_grad()
            try:
                lb, _ = model.loss(batch)
            except T.NumericError as exc:
                raise TrainingDiverged(f"epoch {epoch} batch {bi}: {exc} (cascades {[train_ex[i].cascade_id for i in idx][:5]}...)") from exc
            T.backward(lb.total)
            opt.step()
            d = dict(lb.parts)
            d["total"] = float(lb.total.data)
            parts.append(d)
            weights.append(len(idx))
        train_parts = _mean_parts(parts, weights)
        valid_parts = evaluate_loss(model, valid_ex, prepared, cfg.batch_size)
        monitored = valid_parts[cfg.monitor]
        if stopper.update(epoch, monitored):
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        row = {"epoch": epoch, "seconds": round(time.perf_counter() - start, 3), "monitored": monitored}
        row.update({f"train_{k}": v for k, v in train_parts.items()})
        row.update({f"valid_{k}": v for k, v in valid_parts.items()})
        report.epochs.append(row)
        log.info("epoch %d train %.4f valid_%s %.4f", epoch, train_parts["total"], cfg.monitor, monitored)
        if stopper.should_stop:
            report.stopped_early = True
            break
    model.load_state_arrays(best_state)
    report.best_epoch = stopper.best_epoch
    report.best_valid = float(stopper.best)
    if split.test:
        res = evaluate(model, split.test, prepared, cfg.batch_size)
        report.test_msle, report.test_mape = res.msle, res.mape
        report.test_n, report.test_mape_excluded = res.n, res.mape_excluded
        report.baseline_msle = constant_baseline_msle(split.train, split.test)
    return best_state, report, opt


def variant_tag(variant: str) -> str:
    if variant not in VARIANT_FLAGS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANT_FLAGS)}")
    return "CasCIFF" if variant == "full" else f"CasCIFF-{variant}"


def run_ablation(variant: str, prepared: PreparedData, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 seed: int = 0) -> tuple[CasCIFF, RunReport]:
    cfg = model_cfg.with_variant(variant)
    model = CasCIFF(cfg, seed=seed)
    _, report, _ = train(model, prepared, train_cfg, variant=variant)
    return model, report


def sweep(prepared: PreparedData, model_cfg: ModelConfig, train_cfg: TrainConfig,
          lrs: Sequence[float] = LR_GRID, l2s: Sequence[float] = (1e-5,), seed: int = 0) -> list[tuple[float, float, RunReport]]:
    """Grid over learning rate and L2; results sorted by best validation loss."""
    results = []
    for lr in lrs:
        for l2 in l2s:
            model = CasCIFF(dataclasses.replace(model_cfg, l2=l2), seed=seed)
            _, report, _ = train(model, prepared, dataclasses.replace(train_cfg, lr=lr))
            results.append((lr, l2, report))
    return sorted(results, key=lambda r: r[2].best_valid)


# checkpoints ---------------------------------------------------------------


def save_model(path, model: CasCIFF, opt: Adam | None = None, report: RunReport | None = None) -> None:
    arrays = dict(model.state_arrays())
    if opt is not None:
        arrays.update(opt.state_arrays())
    meta = {"model_config": model.config.to_dict(), "config_hash": model.config.hash()}
    if report is not None:
        meta["report"] = report.metrics()
        meta["variant"] = report.variant
    save_checkpoint(path, arrays, meta)


def load_model(path) -> tuple[CasCIFF, dict]:
    arrays, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = CasCIFF(cfg)
    model.load_state_arrays(arrays)
    return model, meta


# embeddings ------------------------------------------------------------------


def cascade_features(lc: LabeledCascade, is_leader) -> dict:
    acts = lc.observed.activations
    has_child = {a.parent for a in acts if a.parent is not None}
    # delay of each non-root activation after the root post
    reactions = [a.time for a in acts if a.parent is not None]
    return {
        "popularity": lc.horizon_size,
        "node_count": len(acts),
        "leaf_count": sum(1 for a in acts if a.user not in has_child),
        "mean_reaction_time": float(np.mean(reactions)) if reactions else None,
        "leader_count": sum(1 for a in acts if is_leader(a.user)),
    }


def export_embeddings(model: CasCIFF, cascades: Sequence[LabeledCascade], prepared: PreparedData,
                      fh: TextIO, batch_size: int = 64) -> int:
    """Write one CSV row per cascade: id, decayed cascade vector, structural features."""
    ex = examples_for(cascades, prepared, model.config)
    dim = 2 * model.config.gru_hidden
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["cascade_id", *[f"e{i}" for i in range(dim)], "popularity", "node_count",
                     "leaf_count", "mean_reaction_time", "leader_count"])
    rows = 0
    for lcs, exs in zip(_chunks(list(cascades), batch_size), _chunks(ex, batch_size)):
        decayed = model.forward(batch_of(exs, prepared, model.config)).decayed.data
        for lc, vec in zip(lcs, decayed):
            f = cascade_features(lc, prepared.is_leader)
            mrt = "" if f["mean_reaction_time"] is None else repr(f["mean_reaction_time"])
            writer.writerow([lc.cascade_id, *[repr(float(v)) for v in vec], f["popularity"], f["node_count"],
                             f["leaf_count"], mrt, f["leader_count"]])
            rows += 1
    return rows
