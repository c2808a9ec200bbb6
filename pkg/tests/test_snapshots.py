import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casciff.cascade import ObservationConfig, UserIndex
from casciff.ingestion import filter_and_truncate, label_cascade, parse_cascade_file
from casciff.snapshots import build_snapshots, normalize_time, read_triplets, write_triplets

from conftest import chain, make_cascade


def test_normalize_time_examples():
    assert normalize_time(0, 3600) == 1.0
    assert normalize_time(3600, 3600) == 0.0
    assert normalize_time(900, 3600) == 0.75
    with pytest.raises(ValueError):
        normalize_time(3601, 3600)
    with pytest.raises(ValueError):
        normalize_time(1, 0)


@settings(max_examples=10000, deadline=None)
@given(st.integers(1, 10**7), st.integers(0, 10**7), st.integers(0, 10**7), st.integers(0, 2 * 10**9))
def test_normalize_time_properties(T, a, b, start):
    ta, tb = a % (T + 1), b % (T + 1)
    ya, yb = normalize_time(ta, T), normalize_time(tb, T)
    assert 0 <= ya <= 1
    if ta < tb:
        assert ya > yb
    # raw timestamps shifted together with the window start
    assert normalize_time((start + ta) - start, T) == ya


CFG = ObservationConfig(window=400.0, horizon=4000.0, decay_interval=100.0, min_nodes=1)


def test_root_only_has_no_snapshots():
    seq = build_snapshots(label_cascade(make_cascade("r", 0, []), CFG), CFG)
    assert len(seq) == 0 and list(seq) == []


def test_three_chain_weights():
    W = CFG.window
    lc = label_cascade(make_cascade("c", 0, [(1, 0, W / 2), (2, 1, 3 * W / 4)]), CFG)
    a = build_snapshots(lc, CFG).alpha
    # oracle: hand evaluation of 1 - t / W per entry
    t = {0: 0.0, 1: W / 2, 2: 3 * W / 4}
    ref = np.zeros((3, 3))
    for i in range(3):
        ref[i, i] = 1 - t[i] / W
    ref[0, 1] = 1 - t[1] / W
    ref[1, 2] = 1 - t[2] / W
    assert np.array_equal(a, ref)
    assert (a[0, 0], a[1, 1], a[2, 2], a[0, 1], a[1, 2]) == (1.0, 0.5, 0.25, 0.5, 0.25)


def test_parent_weight_and_binary_options():
    W = CFG.window
    lc = label_cascade(make_cascade("c", 0, [(1, 0, W / 2), (2, 1, 3 * W / 4)]), CFG)
    assert build_snapshots(lc, CFG, edge_weight="parent").alpha[1, 2] == 0.5
    b = build_snapshots(lc, CFG, binary=True).alpha
    assert b.tolist() == [[1, 1, 0], [0, 1, 1], [0, 0, 1]]
    with pytest.raises(ValueError):
        build_snapshots(lc, CFG, edge_weight="sibling")


def test_window_end_activation_has_zero_diagonal():
    lc = label_cascade(make_cascade("c", 0, [(1, 0, CFG.window)]), CFG)
    a = build_snapshots(lc, CFG).alpha
    assert a[1, 1] == 0.0 and a[0, 1] == 0.0


def test_containment_and_weights_on_synthetic(small_corpus):
    obs = ObservationConfig(window=1200, horizon=86400, decay_interval=200, min_nodes=2)
    labeled = filter_and_truncate(small_corpus.cascades, obs)[:100]
    assert len(labeled) == 100
    for lc in labeled:
        seq = build_snapshots(lc, obs)
        assert len(seq) == min(len(lc.observed), obs.max_nodes) - 1
        snaps = list(seq)
        for s, nxt in zip(snaps, snaps[1:]):
            j = len(s.nodes)
            assert nxt.nodes[:j] == s.nodes
            nz = set(zip(*np.nonzero(s.alpha)))
            assert nz <= set(zip(*np.nonzero(nxt.alpha)))
            assert np.array_equal(nxt.alpha[:j, :j], s.alpha)
        tp = np.array(lc.tprime[: obs.max_nodes])
        assert np.array_equal(np.diag(seq.alpha), tp)
        times = np.array(lc.times[: obs.max_nodes])
        for i in range(len(times)):
            for k in range(len(times)):
                if times[i] < times[k]:
                    assert tp[i] > tp[k]


def test_shifted_publish_time_gives_identical_alpha():
    line = "x\t1\t{p}\t4\t1:0 1/2:100 1/3:250 1/2/4:390\n"
    mats = []
    for p in (0, 1464710400, 999):
        (c,) = parse_cascade_file(io.StringIO(line.format(p=p)), UserIndex())
        mats.append(build_snapshots(label_cascade(c, CFG), CFG).alpha)
    assert all(np.array_equal(mats[0], m) for m in mats)


def test_live_rows_nonzero_and_dense_padding():
    lc = label_cascade(chain("c", 6, dt=50.0), CFG)
    seq = build_snapshots(lc, CFG)
    d = seq.final.dense(10)
    assert d.shape == (10, 10) and np.array_equal(d[:6, :6], seq.alpha)
    assert (np.abs(seq.alpha[:-1]).sum(axis=1) > 0).all()
    with pytest.raises(IndexError):
        seq.snapshot(0)


def test_triplet_cache_round_trip(tmp_path):
    lc = label_cascade(chain("c", 5, dt=33.3), CFG)
    seq = build_snapshots(lc, CFG)
    write_triplets(tmp_path / "t.txt", seq)
    back = read_triplets(tmp_path / "t.txt")
    assert back.nodes == seq.nodes and back.window == seq.window and np.array_equal(back.alpha, seq.alpha)
