import math

import numpy as np
import pytest

from casciff.cascade import ConfigError
from casciff.numeric.init import make_rng
from casciff.synthetic import DiffusionParams, GraphParams, SocialGraph, generate_synthetic, random_social_graph


def test_zero_probability_gives_root_only():
    corp = generate_synthetic(GraphParams(num_nodes=100), DiffusionParams(prob=0.0), 50, seed=1)
    assert all(len(c) == 1 for c in corp.cascades)


def test_full_probability_chain():
    g = SocialGraph.from_edges(3, [(0, 1), (1, 2)])
    (c,) = generate_synthetic(g, DiffusionParams(prob=1.0), 1, seed=0, roots=[0]).cascades
    assert [(a.user, a.parent) for a in c.activations] == [(0, None), (1, 0), (2, 1)]


def test_invalid_probability():
    with pytest.raises(ConfigError):
        DiffusionParams(prob=1.5)


def _live_edge_oracle(n, edges, root, p, runs, seed):
    """Independent IC estimate: sample live edges, count nodes reachable from the root."""
    rs = np.random.RandomState(seed)
    sizes = np.empty(runs)
    for r in range(runs):
        live = [(u, v) for (u, v) in edges if rs.rand() < p]
        adj = {}
        for u, v in live:
            adj.setdefault(u, []).append(v)
        seen, todo = {root}, [root]
        while todo:
            x = todo.pop()
            for y in adj.get(x, ()):
                if y not in seen:
                    seen.add(y)
                    todo.append(y)
        sizes[r] = len(seen)
    return sizes


def test_mean_size_matches_independent_ic_oracle():
    rs = np.random.RandomState(0)
    n = 20
    edges = sorted({(int(u), int(v)) for u, v in rs.randint(0, n, size=(70, 2)) if u != v})
    graph = SocialGraph.from_edges(n, edges)
    runs = 10000
    corp = generate_synthetic(graph, DiffusionParams(prob=0.3), runs, seed=4, roots=[0] * runs)
    ours = np.array([len(c) for c in corp.cascades], dtype=float)
    ref = _live_edge_oracle(n, edges, 0, 0.3, runs, seed=9)
    se = math.sqrt(ours.var() / runs + ref.var() / runs)
    assert abs(ours.mean() - ref.mean()) < 3 * se


def test_generator_invariants(small_corpus):
    for c in small_corpus.cascades:
        when = {}
        for i, a in enumerate(c.activations):
            if i:
                assert a.time > 0
                assert a.parent in when and when[a.parent] <= a.time
            when[a.user] = a.time
        assert len(set(when)) == len(c.activations)


def test_generator_is_deterministic():
    args = (GraphParams(num_nodes=80), DiffusionParams(prob=0.2), 30, 5)
    a, b = generate_synthetic(*args), generate_synthetic(*args)
    assert a.cascades == b.cascades


def test_planted_structure():
    g = random_social_graph(GraphParams(num_nodes=200, leader_fraction=0.1, fake_fraction=0.2), make_rng(0))
    deg = np.array([len(a) for a in g.adj])
    assert len(g.leaders) == 20 and len(g.fake_followers) == 40
    assert (deg[g.leaders] >= 40).all() and (deg[g.fake_followers] == 0).all()
    assert not set(g.leaders.tolist()) & set(g.fake_followers.tolist())
