"""Toy-scale fixtures for gradient verification of the full network."""

from __future__ import annotations

import numpy as np

from .batching import Batch
from .cascade import Activation, Cascade, ObservationConfig
from .influence import HopSampleConfig
from .ingestion import DatasetSplit, filter_and_truncate
from .network import CasCIFF, ModelConfig
from .numeric.gradcheck import GradCheckResult, grad_check
from .numeric.init import make_rng
from .training import PreparedData, batch_of, examples_for, prepare

TOY_OBS = ObservationConfig(window=100.0, horizon=1000.0, decay_interval=50.0, min_nodes=1, max_nodes=6)
TOY_HOP = HopSampleConfig(k=4, max_hop=2, s=3)


def toy_model_config(**overrides) -> ModelConfig:
    base = dict(
        hop_n=2, hop_s=3, ae1_dims=(5, 4, 3), ae1_decoder_hidden=4, max_nodes=6,
        gcn_hidden=3, gcn_out=3, fusion_dims=(4, 4, 3), fusion_decoder_hidden=4,
        gru_hidden=3, window=100.0, decay_interval=50.0, reg_hidden=4, cls_hidden=3, l2=1e-3,
    )
    base.update(overrides)
    return ModelConfig(**base)


def _cascade(cid: str, root: int, events: list[tuple[int, int, float]], extra: int) -> Cascade:
    acts = [Activation(root, None, 0.0)] + [Activation(u, p, t) for u, p, t in events]
    # ``extra`` activations after the window feed the target
    late = [Activation(100 + i, root, 500.0 + i) for i in range(extra)]
    acts += late
    return Cascade(cid, root, 0.0, tuple(acts), len(acts))


def toy_cascades() -> list[Cascade]:
    return [
        _cascade("a", 0, [(1, 0, 10.0), (2, 0, 30.0), (3, 1, 60.0), (4, 3, 90.0)], 5),
        _cascade("b", 1, [(3, 1, 5.0), (5, 3, 40.0), (6, 1, 75.0)], 2),
        _cascade("c", 0, [(2, 0, 20.0), (6, 2, 55.0), (7, 6, 70.0), (1, 0, 80.0), (5, 1, 95.0)], 9),
    ]


def toy_prepared() -> PreparedData:
    labeled = filter_and_truncate(toy_cascades(), TOY_OBS)
    split = DatasetSplit(labeled, labeled, labeled, 0)
    return prepare(split, TOY_OBS, TOY_HOP, hop_seed=1, leader_percentile=50.0)


def randomize(model: CasCIFF, seed: int = 0, scale: float = 0.5) -> None:
    """Move every parameter to a generic point (no exact zeros, no ties)."""
    rng = make_rng(seed)
    for p in model.parameters():
        p.data = p.data + rng.uniform(-scale, scale, size=p.data.shape)


def toy_batch(cfg: ModelConfig | None = None) -> tuple[Batch, PreparedData, ModelConfig]:
    cfg = cfg or toy_model_config()
    prepared = toy_prepared()
    ex = examples_for(prepared.split.train, prepared, cfg)
    return batch_of(ex, prepared, cfg), prepared, cfg


def toy_grad_check(cfg: ModelConfig | None = None, seed: int = 0, eps: float = 1e-5) -> GradCheckResult:
    batch, _, cfg = toy_batch(cfg)
    model = CasCIFF(cfg, seed=seed)
    randomize(model, seed + 1)
    return grad_check(lambda: model.loss(batch)[0].total, model.parameters(), eps=eps)
