"""Multi-hop user influence vectors and opinion-leader labels.

For each user, hierarchical random sampling draws ``round(k / 2**(i-1))``
nodes (without replacement) from hop ``i``.  Expansion follows the sample:
hop ``i`` candidates are out-neighbours of the hop ``i-1`` sample whose exact
BFS distance from the user is ``i``.  Each hop sample is summarised by the
top-``s`` influence scores of its members.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .cascade import ConfigError
from .ingestion import GlobalGraph
from .numeric import autograd as T
from .numeric.init import make_rng
from .numeric.autograd import Tensor


@dataclass(frozen=True)
class HopSampleConfig:
    k: int = 128
    max_hop: int = 2
    s: int = 50
    lambda_init: float = 1.0
    # one weight per hop (False) or per hop coordinate (True)
    vector_weights: bool = False
    undirected: bool = False

    def __post_init__(self):
        if self.s <= 0:
            raise ConfigError("s must be positive")
        if self.k < self.s:
            raise ConfigError(f"k ({self.k}) must be >= s ({self.s})")
        if not 1 <= self.max_hop <= 5:
            raise ConfigError(f"max_hop must be in 1..5, got {self.max_hop}")

    @property
    def input_dim(self) -> int:
        return self.max_hop * self.s


@dataclass(frozen=True)
class LeaderLabel:
    user: int
    is_leader: bool


def hop_sample_size(k: int, hop: int) -> int:
    """``k * 2**-(hop-1)`` rounded half up."""
    return int(math.floor(k * 2.0 ** (-(hop - 1)) + 0.5))


def bfs_frontiers(graph: GlobalGraph, u: int, depth: int) -> list[np.ndarray]:
    """Exact BFS layers F_0 = {u}, F_1, ..., F_depth along out-edges."""
    seen = {u}
    layers = [np.array([u], dtype=np.int64)]
    frontier = [u]
    for _ in range(depth):
        nxt = set()
        for x in frontier:
            for y in graph.out_neighbors(x).tolist():
                if y not in seen:
                    nxt.add(y)
        seen |= nxt
        frontier = sorted(nxt)
        layers.append(np.array(frontier, dtype=np.int64))
    return layers


def hrs_sample(graph: GlobalGraph, u: int, cfg: HopSampleConfig, rng: np.random.Generator) -> list[np.ndarray]:
    """Per-hop samples S_1..S_n (sorted node arrays, pairwise disjoint, never containing u)."""
    if not 0 <= u < graph.num_nodes:
        raise IndexError(f"user {u} not in graph with {graph.num_nodes} nodes")
    layers = bfs_frontiers(graph, u, cfg.max_hop - 1)
    closer: set[int] = set()
    samples = []
    prev = np.array([u], dtype=np.int64)
    for hop in range(1, cfg.max_hop + 1):
        closer.update(layers[hop - 1].tolist())
        cand = set()
        for x in prev.tolist():
            cand.update(graph.out_neighbors(x).tolist())
        cand -= closer
        pool = np.array(sorted(cand), dtype=np.int64)
        size = min(hop_sample_size(cfg.k, hop), len(pool))
        picked = np.sort(rng.choice(pool, size=size, replace=False)) if size else pool[:0]
        samples.append(picked)
        prev = picked
    return samples


def influence_scores(graph: GlobalGraph) -> np.ndarray:
    """``log(1 + out_degree) / log(1 + max out_degree)`` for every node."""
    deg = graph.out_degree.astype(np.float64)
    top = deg.max() if deg.size else 0.0
    if top <= 0:
        return np.zeros(graph.num_nodes)
    return np.log1p(deg) / np.log1p(top)


def influence_score(graph: GlobalGraph, v: int) -> float:
    if graph.num_nodes == 0:
        return 0.0
    return float(influence_scores(graph)[v])


def hop_vector(scores: np.ndarray, sample: np.ndarray, s: int) -> np.ndarray:
    """Top-``s`` scores of the sampled nodes, descending, zero padded to length ``s``."""
    vals = np.sort(np.asarray(scores)[np.asarray(sample, dtype=np.int64)])[::-1][:s]
    out = np.zeros(s)
    out[: len(vals)] = vals
    return out


def user_hop_vectors(graph: GlobalGraph, u: int, cfg: HopSampleConfig, seed: int,
                     scores: np.ndarray | None = None) -> np.ndarray:
    """(n, s) matrix of hop vectors for user ``u`` using the stream ``seed ^ u``."""
    if scores is None:
        scores = influence_scores(graph)
    samples = hrs_sample(graph, u, cfg, make_rng(seed ^ u))
    return np.stack([hop_vector(scores, smp, cfg.s) for smp in samples])


def influence_table(graph: GlobalGraph, users: Iterable[int], cfg: HopSampleConfig, seed: int) -> dict[int, np.ndarray]:
    sampling_graph = graph.undirected() if cfg.undirected else graph
    scores = influence_scores(graph)
    return {u: user_hop_vectors(sampling_graph, u, cfg, seed, scores) for u in sorted(set(users))}


def assemble_input(hop_vectors, hop_weights) -> Tensor:
    """Scale each hop block by its weight and concatenate in hop order.

    ``hop_vectors`` has shape ``(..., n, s)``; ``hop_weights`` is ``(n,)`` or
    ``(n, s)`` and may be a trainable Parameter.
    """
    hv = T.tensor(hop_vectors)
    lam = T.tensor(hop_weights)
    n, s = hv.shape[-2], hv.shape[-1]
    if lam.shape == (n,):
        lam = T.reshape(lam, (n, 1))
    elif lam.shape != (n, s):
        raise T.ShapeError(f"hop weights {lam.shape} do not fit hop vectors {hv.shape}")
    return T.reshape(T.mul(hv, lam), hv.shape[:-2] + (n * s,))


def leader_mask(graph: GlobalGraph, percentile_q: float = 95.0) -> np.ndarray:
    if not 0 <= percentile_q < 100:
        raise ConfigError(f"percentile must be in [0, 100), got {percentile_q}")
    deg = graph.out_degree
    nonzero = deg[deg > 0]
    if nonzero.size == 0:
        return np.zeros(graph.num_nodes, dtype=bool)
    threshold = np.percentile(nonzero, percentile_q)
    return (deg > 0) & (deg >= threshold)


def label_opinion_leaders(graph: GlobalGraph, percentile_q: float = 95.0) -> list[LeaderLabel]:
    """A user is a leader when its out-degree reaches the q-th percentile of non-zero out-degrees."""
    mask = leader_mask(graph, percentile_q)
    return [LeaderLabel(u, bool(m)) for u, m in enumerate(mask)]


# cache ---------------------------------------------------------------------

_MAGIC = b"CASCIFFINF"
_VERSION = 1


def save_influence_cache(path, table: dict[int, np.ndarray], cfg: HopSampleConfig, seed: int) -> None:
    users = np.array(sorted(table), dtype="<i8")
    values = np.stack([table[u] for u in users.tolist()]) if len(users) else np.zeros((0, cfg.max_hop, cfg.s))
    header = json.dumps(
        {"k": cfg.k, "n": cfg.max_hop, "s": cfg.s, "seed": seed, "undirected": cfg.undirected, "users": len(users)},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<IQ", _VERSION, len(header)) + header)
        fh.write(users.tobytes())
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_influence_cache(path) -> tuple[dict[int, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path}: not an influence cache")
    pos = len(_MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, pos)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported influence cache version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(raw[pos:pos + hlen])
    pos += hlen
    nu = header["users"]
    users = np.frombuffer(raw, dtype="<i8", count=nu, offset=pos)
    pos += 8 * nu
    vals = np.frombuffer(raw, dtype="<f8", count=nu * header["n"] * header["s"], offset=pos)
    vals = vals.reshape(nu, header["n"], header["s"]).copy()
    return {int(u): vals[i] for i, u in enumerate(users)}, header
