"""Synthetic social graphs and continuous-time independent-cascade corpora."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .cascade import Activation, Cascade, ConfigError, UserIndex
from .numeric.init import make_rng


@dataclass(frozen=True)
class GraphParams:
    num_nodes: int = 500
    exponent: float = 2.5  # power-law exponent of the out-degree distribution
    min_degree: int = 2
    leader_fraction: float = 0.05
    leader_degree: int = 40
    fake_fraction: float = 0.0

    def __post_init__(self):
        if self.num_nodes < 2:
            raise ConfigError("num_nodes must be >= 2")
        if self.exponent <= 1:
            raise ConfigError("exponent must be > 1")
        for name in ("leader_fraction", "fake_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.leader_fraction + self.fake_fraction > 1:
            raise ConfigError("leader_fraction + fake_fraction exceeds 1")


@dataclass(frozen=True)
class DiffusionParams:
    prob: float = 0.1
    delay_scale: float = 600.0  # mean of the exponential inter-activation delay (seconds)
    publish_start: float = 1464710400.0
    publish_spacing: float = 60.0
    # log-normal spread of a per-cascade multiplier on ``prob`` (0 = every cascade alike)
    virality_sigma: float = 0.0
    # draw roots proportionally to out-degree instead of uniformly
    degree_weighted_roots: bool = False

    def __post_init__(self):
        if not 0 <= self.prob <= 1:
            raise ConfigError(f"activation probability must be in [0, 1], got {self.prob}")
        if self.delay_scale <= 0:
            raise ConfigError("delay_scale must be positive")
        if self.virality_sigma < 0:
            raise ConfigError("virality_sigma must be non-negative")


@dataclass
class SocialGraph:
    """Directed follower graph: ``adj[u]`` are the users ``u`` can activate."""

    adj: list[np.ndarray]
    leaders: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    fake_followers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # optional per-edge probabilities aligned with adj
    probs: list[np.ndarray] | None = None

    @property
    def num_nodes(self) -> int:
        return len(self.adj)

    @classmethod
    def from_edges(cls, num_nodes: int, edges, **kw) -> "SocialGraph":
        lists: list[list[int]] = [[] for _ in range(num_nodes)]
        for u, v in edges:
            lists[u].append(v)
        return cls([np.array(sorted(set(x)), dtype=np.int64) for x in lists], **kw)


def random_social_graph(params: GraphParams, rng: np.random.Generator) -> SocialGraph:
    n = params.num_nodes
    perm = rng.permutation(n)
    n_lead = int(round(params.leader_fraction * n))
    n_fake = int(round(params.fake_fraction * n))
    leaders = np.sort(perm[:n_lead])
    fakes = np.sort(perm[n_lead:n_lead + n_fake])
    # Pareto-tailed out-degrees via inverse transform
    u = rng.random(n)
    deg = np.floor(params.min_degree * (1.0 - u) ** (-1.0 / (params.exponent - 1.0))).astype(np.int64)
    deg[leaders] = np.maximum(deg[leaders], params.leader_degree)
    deg[fakes] = 0
    deg = np.minimum(deg, n - 1)
    adj = []
    for v in range(n):
        others = rng.choice(n - 1, size=deg[v], replace=False)
        others = np.where(others >= v, others + 1, others)
        adj.append(np.sort(others).astype(np.int64))
    return SocialGraph(adj, leaders, fakes)


def simulate_cascade(graph: SocialGraph, root: int, diffusion: DiffusionParams,
                     rng: np.random.Generator, prob_scale: float = 1.0) -> list[Activation]:
    """Continuous-time IC: each newly active user tries every out-edge once.

    A successful attempt from ``u`` (activated at ``t``) reaches ``v`` at
    ``t + Exp(delay_scale)``; ``v`` takes the earliest arrival and its sender
    as parent.
    """
    acts = [Activation(root, None, 0.0)]
    active = {root}
    queue: list[tuple[float, int, int, int]] = []
    counter = 0

    def push(u: int, t: float) -> None:
        nonlocal counter
        nbrs = graph.adj[u]
        if not len(nbrs):
            return
        p = diffusion.prob if graph.probs is None else graph.probs[u]
        p = np.minimum(p * prob_scale, 1.0)
        hits = nbrs[rng.random(len(nbrs)) < p]
        for v in hits.tolist():
            delay = rng.exponential(diffusion.delay_scale)
            while delay <= 0.0:
                delay = rng.exponential(diffusion.delay_scale)
            heapq.heappush(queue, (t + delay, counter, v, u))
            counter += 1

    push(root, 0.0)
    while queue:
        t, _, v, u = heapq.heappop(queue)
        if v in active:
            continue
        active.add(v)
        acts.append(Activation(v, u, t))
        push(v, t)
    return acts


@dataclass
class SyntheticCorpus:
    cascades: list[Cascade]
    users: UserIndex
    graph: SocialGraph


def generate_synthetic(graph_params, diffusion: DiffusionParams, n_cascades: int, seed: int,
                       roots=None) -> SyntheticCorpus:
    """Simulate ``n_cascades`` cascades.

    ``graph_params`` is either :class:`GraphParams` (a random graph is drawn
    from the seed) or a ready :class:`SocialGraph`.  Roots are drawn uniformly
    from users with at least one out-edge unless ``roots`` is given.
    """
    rng = make_rng(seed)
    graph = graph_params if isinstance(graph_params, SocialGraph) else random_social_graph(graph_params, rng)
    if roots is None:
        deg = np.array([len(a) for a in graph.adj], dtype=np.float64)
        senders = np.flatnonzero(deg > 0)
        if not len(senders):
            senders = np.arange(graph.num_nodes)
        if diffusion.degree_weighted_roots and deg.sum() > 0:
            roots = rng.choice(senders, size=n_cascades, p=deg[senders] / deg[senders].sum())
        else:
            roots = senders[rng.integers(0, len(senders), size=n_cascades)]
    cascades = []
    width = len(str(max(n_cascades - 1, 0)))
    for i in range(n_cascades):
        root = int(roots[i])
        scale = rng.lognormal(0.0, diffusion.virality_sigma) if diffusion.virality_sigma > 0 else 1.0
        acts = simulate_cascade(graph, root, diffusion, rng, scale)
        cascades.append(Cascade(
            f"c{i:0{width}d}", root, diffusion.publish_start + i * diffusion.publish_spacing,
            tuple(acts), len(acts),
        ))
    return SyntheticCorpus(cascades, UserIndex.identity(graph.num_nodes), graph)
