import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casciff.cascade import ConfigError
from casciff.influence import (
    HopSampleConfig, assemble_input, bfs_frontiers, hop_sample_size, hop_vector, hrs_sample, influence_score,
    influence_scores, influence_table, label_opinion_leaders, leader_mask, load_influence_cache,
    save_influence_cache, user_hop_vectors,
)
from casciff.ingestion import GlobalGraph
from casciff.numeric.init import make_rng
from casciff.synthetic import GraphParams, random_social_graph


def graph_from(n, edges, mult=None):
    edges = list(edges)
    src = np.array([u for u, _ in edges], dtype=np.int64)
    dst = np.array([v for _, v in edges], dtype=np.int64)
    return GlobalGraph(n, src, dst, np.ones(len(edges), dtype=np.int64) if mult is None else np.array(mult))


def oracle_frontiers(n, edges, u, depth):
    """Plain BFS distances over an adjacency dict."""
    adj = {}
    for a, b in edges:
        adj.setdefault(a, set()).add(b)
    dist = {u: 0}
    queue = [u]
    while queue:
        x = queue.pop(0)
        for y in adj.get(x, ()):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return [{v for v, d in dist.items() if d == i} for i in range(depth + 1)]


def test_sample_sizes_halve_per_hop():
    assert [hop_sample_size(16, i) for i in (1, 2, 3)] == [16, 8, 4]
    assert hop_sample_size(5, 2) == 3  # 2.5 rounds half up
    # layers {0}, 1..40, 41..140, 141..340 with complete bipartite links between neighbours
    bounds = [0, 1, 41, 141, 341]
    layers = [range(bounds[i], bounds[i + 1]) for i in range(4)]
    edges = [(u, v) for a, b in zip(layers, layers[1:]) for u in a for v in b]
    g = graph_from(341, edges)
    samples = hrs_sample(g, 0, HopSampleConfig(k=16, max_hop=3, s=4), make_rng(0))
    assert [len(s) for s in samples] == [16, 8, 4]


def test_sample_capped_by_availability():
    g = graph_from(3, [(0, 1), (0, 2)])
    s1, s2 = hrs_sample(g, 0, HopSampleConfig(k=16, max_hop=2, s=2), make_rng(0))
    assert s1.tolist() == [1, 2] and s2.tolist() == []


def test_seven_node_graph_against_bfs_oracle():
    edges = [(0, 1), (0, 2), (1, 3), (2, 3), (2, 4), (3, 5), (4, 6), (5, 0), (6, 1)]
    g = graph_from(7, edges)
    cfg = HopSampleConfig(k=2, max_hop=3, s=1)
    for u in range(7):
        ref = oracle_frontiers(7, edges, u, 3)
        assert [set(x.tolist()) for x in bfs_frontiers(g, u, 3)] == ref
        for seed in range(20):
            for i, s in enumerate(hrs_sample(g, u, cfg, make_rng(seed)), start=1):
                assert set(s.tolist()) <= ref[i]


@st.composite
def random_graphs(draw):
    n = draw(st.integers(2, 30))
    pairs = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=120))
    edges = sorted({(a, b) for a, b in pairs if a != b})
    return n, edges


@settings(max_examples=200, deadline=None)
@given(random_graphs(), st.integers(2, 40), st.integers(1, 4), st.integers(0, 2**31))
def test_hrs_properties(gr, k, n_hop, seed):
    n, edges = gr
    g = graph_from(n, edges)
    u = seed % n
    cfg = HopSampleConfig(k=max(k, 1), max_hop=n_hop, s=1)
    a = hrs_sample(g, u, cfg, make_rng(seed))
    b = hrs_sample(g, u, cfg, make_rng(seed))
    c = hrs_sample(g, u, cfg, make_rng(seed + 1))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    seen = {u}
    for x in a:
        assert not seen & set(x.tolist())
        seen |= set(x.tolist())
    # set sizes do not depend on the seed when every candidate pool is fully taken or the first hop
    assert len(a[0]) == len(c[0])


def test_scores_formula():
    g = graph_from(12, [(0, 1), (2, 3), (2, 4), (2, 5)] + [(6, v) for v in range(7, 12)] + [(6, 0), (6, 1)])
    assert g.out_degree[[0, 2, 6]].tolist() == [1, 3, 7]
    # independent evaluation of log(1 + d) / log(1 + max d)
    for v, d in ((0, 1), (2, 3), (6, 7)):
        assert influence_score(g, v) == pytest.approx(math.log(1 + d) / math.log(8), abs=1e-15)
    assert influence_score(g, 6) == 1.0
    assert influence_score(g, 11) == 0.0
    assert influence_score(GlobalGraph(0, [], [], []), 0) == 0.0


def test_scores_use_multiplicity():
    g = graph_from(3, [(0, 1), (1, 2)], mult=[3, 1])
    assert g.out_degree.tolist() == [3, 1, 0]
    assert influence_scores(g)[0] == 1.0


@settings(max_examples=100, deadline=None)
@given(random_graphs())
def test_scores_monotone_in_out_degree(gr):
    g = graph_from(*gr)
    sc = influence_scores(g)
    order = np.argsort(g.out_degree, kind="stable")
    assert (np.diff(sc[order]) >= 0).all()
    assert ((sc >= 0) & (sc <= 1)).all()


def test_hop_vector_examples():
    scores = np.array([0.2, 0.9, 0.5])
    assert hop_vector(scores, np.array([], dtype=int), 5).tolist() == [0, 0, 0, 0, 0]
    assert hop_vector(scores, np.array([0, 1, 2]), 5).tolist() == [0.9, 0.5, 0.2, 0, 0]


def test_hop_vector_top_s_against_full_sort(rng):
    scores = rng.random(200)
    sample = rng.choice(200, size=80, replace=False)
    full = sorted((scores[i] for i in sample), reverse=True)
    assert hop_vector(scores, sample, 50).tolist() == full[:50]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=60), st.integers(1, 40))
def test_hop_vector_non_increasing(vals, s):
    v = hop_vector(np.array(vals), np.arange(len(vals)), s)
    assert len(v) == s and (np.diff(v) <= 0).all()


def test_assemble_input():
    hv = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert assemble_input(hv, np.ones(2)).data.tolist() == [1, 2, 3, 4, 5, 6]
    assert not assemble_input(hv, np.zeros(2)).data.any()
    expect = [2 * 1.0, 2 * 2.0, 2 * 3.0, 0.5 * 4.0, 0.5 * 5.0, 0.5 * 6.0]
    assert assemble_input(hv, np.array([2.0, 0.5])).data.tolist() == expect
    per = np.array([[1.0, 0.0, 2.0], [3.0, 1.0, 0.5]])
    assert assemble_input(hv, per).data.tolist() == (hv * per).reshape(-1).tolist()


def test_leaders_extreme_outlier():
    edges = [(0, 1), (2, 1), (3, 1), (4, 1)] + [(5, v) for v in range(6, 106)]
    g = graph_from(106, edges)
    assert np.flatnonzero(leader_mask(g, 95)).tolist() == [5]
    labels = label_opinion_leaders(g, 95)
    assert [l.user for l in labels if l.is_leader] == [5]


def test_leaders_q0_takes_all_active_users():
    g = graph_from(5, [(0, 1), (2, 3), (2, 4)])
    assert np.flatnonzero(leader_mask(g, 0)).tolist() == [0, 2]
    with pytest.raises(ConfigError):
        leader_mask(g, 100)


def test_planted_hubs_are_leaders():
    sg = random_social_graph(GraphParams(num_nodes=1000, leader_fraction=0.05, leader_degree=100), make_rng(0))
    edges = [(u, int(v)) for u, a in enumerate(sg.adj) for v in a]
    g = graph_from(1000, edges)
    assert len(sg.leaders) == 50
    assert leader_mask(g, 95)[sg.leaders].sum() >= 45


def _with_sinks(n, edges, frac, seed):
    rs = np.random.RandomState(seed)
    m = int(round(frac * n))
    sinks = list(range(n, n + m))
    extra = [(int(rs.randint(0, n)), s) for s in sinks for _ in range(3)]
    return n + m, sorted(set(edges) | set(extra)), set(sinks)


def test_sinks_contribute_exact_zeros(small_corpus):
    from casciff.ingestion import build_global_graph
    base = build_global_graph(small_corpus.cascades, num_nodes=len(small_corpus.users))
    edges = list(zip(base.src.tolist(), base.dst.tolist()))
    n2, edges2, sinks = _with_sinks(base.num_nodes, edges, 0.2, 0)
    g2 = graph_from(n2, edges2)
    cfg = HopSampleConfig(k=16, max_hop=2, s=8)
    sc1, sc2 = influence_scores(base), influence_scores(g2)
    assert (sc2[list(sinks)] == 0).all()
    touched = 0
    for u in range(base.num_nodes):
        samples = hrs_sample(g2, u, cfg, make_rng(u))
        hv = np.stack([hop_vector(sc2, s, cfg.s) for s in samples])
        # recompute with sink picks removed and original-graph scores for everybody else
        ref = np.stack([hop_vector(sc2, np.array([x for x in s.tolist() if x not in sinks], dtype=int), cfg.s)
                        for s in samples])
        assert np.array_equal(hv, ref)
        frontier = set().union(*[set(f.tolist()) for f in bfs_frontiers(g2, u, cfg.max_hop)])
        if not frontier & sinks:
            orig = hrs_sample(base, u, cfg, make_rng(u))
            assert all(np.array_equal(a, b) for a, b in zip(orig, samples))
        else:
            touched += 1
    assert touched > 0


def test_sink_edges_raise_source_scores_only():
    # the degree-based score counts every out-edge, including edges into sinks
    g1 = graph_from(4, [(0, 1), (0, 2), (1, 2), (2, 3), (0, 3)])
    g2 = graph_from(5, [(0, 1), (0, 2), (1, 2), (2, 3), (0, 3), (1, 4)])
    s1, s2 = influence_scores(g1), influence_scores(g2)
    assert s2[4] == 0
    changed = np.flatnonzero(s1 != s2[:4]).tolist()
    assert changed == [1]


def test_influence_cache_round_trip(tmp_path):
    g = graph_from(6, [(0, 1), (1, 2), (2, 3), (0, 4), (4, 5)])
    cfg = HopSampleConfig(k=4, max_hop=2, s=2)
    table = influence_table(g, [0, 1, 4], cfg, seed=3)
    save_influence_cache(tmp_path / "c.bin", table, cfg, 3)
    back, header = load_influence_cache(tmp_path / "c.bin")
    assert sorted(back) == [0, 1, 4] and header["seed"] == 3
    assert all(np.array_equal(back[u], table[u]) for u in table)
