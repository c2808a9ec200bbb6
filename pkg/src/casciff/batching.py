"""Packing labelled cascades into padded numpy arrays for the network."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cascade import LabeledCascade, ObservationConfig
from .snapshots import build_snapshots

# Upper bound on floats in one stacked snapshot chunk (steps x P x P).
CHUNK_BUDGET = 1 << 21


@dataclass(frozen=True)
class Example:
    cascade_id: str
    users: np.ndarray   # (m,) dense user ids in activation order
    parents: np.ndarray  # (m,) position of each parent, -1 for the root
    alpha: np.ndarray   # (m, m) final weighted adjacency
    tprime: np.ndarray  # (m,)
    times: np.ndarray   # (m,) seconds since publish
    target: int
    horizon_size: int

    @property
    def length(self) -> int:
        return len(self.users)


def make_example(lc: LabeledCascade, cfg: ObservationConfig, binary: bool = False, edge_weight: str = "child") -> Example:
    seq = build_snapshots(lc, cfg, edge_weight=edge_weight, binary=binary)
    acts = lc.observed.activations[: cfg.max_nodes]
    pos = {a.user: i for i, a in enumerate(acts)}
    parents = np.array([-1 if a.parent is None else pos[a.parent] for a in acts], dtype=np.int64)
    return Example(
        lc.cascade_id,
        np.array([a.user for a in acts], dtype=np.int64),
        parents,
        seq.alpha,
        np.array(lc.tprime[: cfg.max_nodes], dtype=np.float64),
        np.array([a.time for a in acts], dtype=np.float64),
        lc.target,
        lc.horizon_size,
    )


def decay_bucket(times: np.ndarray, decay_interval: float, num_intervals: int, window: float) -> np.ndarray:
    times = np.asarray(times, dtype=np.float64)
    if (times > window).any() or (times < 0).any():
        raise ValueError(f"activation time outside [0, {window}]")
    return np.minimum(np.floor(times / decay_interval).astype(np.int64), num_intervals - 1)


@dataclass
class GcnChunk:
    alpha: np.ndarray     # (S, P, P) raw snapshot matrices
    norm: np.ndarray      # (S, P, P) row-normalised
    live: np.ndarray      # (S, P) row mask


@dataclass
class Batch:
    examples: list[Example]
    lengths: np.ndarray        # (B,)
    max_len: int
    users: np.ndarray          # (U,) unique dense user ids
    hop_vectors: np.ndarray    # (U, n, s)
    leader: np.ndarray         # (U,) 0/1 labels
    step_user: np.ndarray      # (S,) index into users, canonical (cascade, step) order
    step_tprime: np.ndarray    # (S,)
    step_bucket: np.ndarray    # (S,) decay interval of each step
    pad_index: np.ndarray      # (B*T,) canonical step index, or S for padding
    rev_index: np.ndarray      # (B*T,) canonical step index of the time-reversed sequence
    unrev_index: np.ndarray    # (B*T,) maps reversed states back to forward positions
    step_mask: np.ndarray      # (B, T)
    chunks: list[GcnChunk]
    chunk_order: np.ndarray    # (S,) canonical index -> position in concatenated chunk output
    targets: np.ndarray        # (B,)

    @property
    def size(self) -> int:
        return len(self.examples)

    @property
    def num_steps(self) -> int:
        return len(self.step_user)


def row_normalize(a: np.ndarray) -> np.ndarray:
    s = a.sum(axis=-1, keepdims=True)
    return np.divide(a, s, out=np.zeros_like(a), where=s != 0)


def make_batch(
    examples: list[Example],
    hop_table: dict[int, np.ndarray],
    leader_of,
    decay_interval: float,
    num_intervals: int,
    window: float,
    hop_shape: tuple[int, int],
) -> Batch:
    """``hop_table`` maps user -> (n, s); users missing from it get zero vectors.

    ``leader_of(user) -> bool`` supplies classification labels.
    """
    lengths = np.array([e.length for e in examples], dtype=np.int64)
    B, T = len(examples), int(lengths.max())
    users = np.unique(np.concatenate([e.users for e in examples]))
    upos = {int(u): i for i, u in enumerate(users)}
    zero = np.zeros(hop_shape)
    hop = np.stack([hop_table.get(int(u), zero) for u in users])
    leader = np.array([1 if leader_of(int(u)) else 0 for u in users], dtype=np.int64)

    offsets = np.concatenate([[0], np.cumsum(lengths)])
    S = int(offsets[-1])
    step_user = np.concatenate([[upos[int(u)] for u in e.users] for e in examples]).astype(np.int64)
    step_tprime = np.concatenate([e.tprime for e in examples])
    step_bucket = np.concatenate([decay_bucket(e.times, decay_interval, num_intervals, window) for e in examples])

    pad_index = np.full((B, T), S, dtype=np.int64)
    rev_index = np.full((B, T), S, dtype=np.int64)
    unrev_index = np.zeros((B, T), dtype=np.int64)
    for b, m in enumerate(lengths.tolist()):
        base = offsets[b]
        pad_index[b, :m] = base + np.arange(m)
        rev_index[b, :m] = base + np.arange(m)[::-1]
        unrev_index[b, :m] = b * T + (m - 1 - np.arange(m))
    step_mask = (pad_index < S).astype(np.float64)

    # GCN chunks: steps grouped by snapshot size to limit padding.
    sizes = np.concatenate([np.arange(1, m + 1) for m in lengths.tolist()])
    step_cascade = np.repeat(np.arange(B), lengths)
    order = np.argsort(sizes, kind="stable")
    chunks = []
    start = 0
    while start < S:
        stop = start + 1
        while stop < S and (stop + 1 - start) * sizes[order[stop]] ** 2 <= CHUNK_BUDGET:
            stop += 1
        idx = order[start:stop]
        P = int(sizes[idx].max())
        a = np.zeros((len(idx), P, P))
        live = np.zeros((len(idx), P))
        for r, s_idx in enumerate(idx.tolist()):
            k = int(sizes[s_idx])
            a[r, :k, :k] = examples[step_cascade[s_idx]].alpha[:k, :k]
            live[r, :k] = 1.0
        chunks.append(GcnChunk(a, row_normalize(a), live))
        start = stop
    chunk_order = np.empty(S, dtype=np.int64)
    chunk_order[order] = np.arange(S)

    targets = np.array([e.target for e in examples], dtype=np.float64)
    return Batch(
        examples, lengths, T, users, hop, leader, step_user, step_tprime, step_bucket,
        pad_index.reshape(-1), rev_index.reshape(-1), unrev_index.reshape(-1), step_mask,
        chunks, chunk_order, targets,
    )


def log_target(delta) -> np.ndarray:
    return np.log2(np.asarray(delta, dtype=np.float64) + 1.0)


def num_decay_intervals(window: float, decay_interval: float) -> int:
    return math.ceil(window / decay_interval)
