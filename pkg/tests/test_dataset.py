import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unbloc.dataset import (
    DEFAULT_FILL,
    FingerprintMatrix,
    MessageRecord,
    MessageSet,
    ParseError,
    SplitError,
    anchor_split,
    average_k,
    build_fingerprints,
    dump_messages,
    load_messages,
    rank_features,
    select_features,
)
from unbloc.evaluate import CampaignConfig, build_campaign
from unbloc.geo import GeoPoint, PlanarPoint, make_partition, project, unproject

O = GeoPoint(51.0, 4.0)

CSV = """node_id,t,lat,lon,rssi_a,rssi_b,rssi_c
g1,0,51.0,4.0,-100.5,-200,
s1,0,,,-90,-95,-130.25
"""


def test_load_shape_and_missing():
    ms = load_messages(CSV)
    assert ms.n_bs == 3 and len(ms) == 2
    assert ms.bs_ids == ("a", "b", "c")
    r = ms.records[0]
    assert r.rssi[0] == -100.5 and math.isnan(r.rssi[1]) and math.isnan(r.rssi[2])
    assert ms.records[1].position is None
    assert ms.records[0].position == GeoPoint(51.0, 4.0)
    # sentinel read back as fill in the imputed matrix
    assert ms.rssi_matrix(-200.0)[0, 1] == -200.0


def test_load_accepts_bytes():
    assert len(load_messages(CSV.encode())) == 2


@pytest.mark.parametrize(
    "body,row",
    [
        ("g1,0,51.0,4.0,-100,-90\n", 2),
        ("g1,0,51.0,4.0,-100,abc,-1\n", 2),
        ("g1,0,51.0,4.0,-100,-90,-1\ng1,0,51.0,4.0,-100,-90,-1\n", 3),
        ("g1,x,51.0,4.0,-100,-90,-1\n", 2),
    ],
)
def test_load_errors_carry_row(body, row):
    with pytest.raises(ParseError) as exc:
        load_messages("node_id,t,lat,lon,rssi_a,rssi_b,rssi_c\n" + body)
    assert exc.value.row == row
    assert f"row {row}" in str(exc.value)


def test_load_bad_header():
    with pytest.raises(ParseError):
        load_messages("id,t,x\n")
    with pytest.raises(ParseError):
        load_messages("")


def test_dump_load_round_trip():
    ms = load_messages(CSV)
    assert load_messages(dump_messages(ms)).same_as(ms)


def _rec(t, node, v, pos=None):
    return MessageRecord(t, node, pos, np.asarray(v, dtype=float))


def test_build_fingerprints_keeps_latest_T():
    recs = [_rec(t, "g", [-60 - t, -70]) for t in range(8)]
    fm = build_fingerprints(MessageSet(("a", "b"), tuple(recs)), {"g": 0}, 3)[0]
    assert fm.rows[:, 0].tolist() == [-65, -66, -67]


def test_build_fingerprints_arrival_order_exact_T():
    recs = [_rec(t, "g", [-60 - t]) for t in range(4)]
    fm = build_fingerprints(MessageSet(("a",), tuple(recs)), {"g": 0}, 4)[0]
    assert fm.rows[:, 0].tolist() == [-60, -61, -62, -63]


def test_build_fingerprints_all_missing_column_filled():
    recs = [_rec(t, "g", [-60, np.nan]) for t in range(3)]
    fm = build_fingerprints(MessageSet(("a", "b"), tuple(recs)), {"g": 0}, 3)[0]
    assert np.all(fm.rows[:, 1] == DEFAULT_FILL)


def test_build_fingerprints_empty_class():
    recs = [_rec(0, "g", [-60])]
    with pytest.raises(SplitError):
        build_fingerprints(MessageSet(("a",), tuple(recs)), {"g": 0, "h": 1}, 2)


@settings(max_examples=60)
@given(st.integers(1, 6), st.integers(0, 12))
def test_ring_holds_last_T(T, j):
    fm = FingerprintMatrix(0, T, 1)
    for t in range(T + j):
        fm.insert(np.array([float(t)]))
    assert fm.rows[:, 0].tolist() == [float(t) for t in range(j, T + j)]
    assert fm.write_cursor == (T + j) % T
    assert len(fm) == T


def test_ring_overwrites_row_zero():
    fm = FingerprintMatrix(0, 3, 2)
    for t in range(4):
        fm.insert(np.array([t, t], dtype=float))
    assert fm.buffer[0].tolist() == [3.0, 3.0]
    assert fm.write_cursor == 1
    with pytest.raises(ValueError):
        fm.buffer[0, 0] = 1.0


def test_ring_rejects_wrong_width():
    with pytest.raises(ValueError):
        FingerprintMatrix(0, 2, 3).insert(np.zeros(2))
    with pytest.raises(ValueError):
        FingerprintMatrix(0, 0, 3)


def test_average_k_examples():
    fm = FingerprintMatrix.from_rows(0, np.array([[-70.0, -80.0], [-72.0, -82.0]]))
    assert average_k(fm, 2).rows.tolist() == [[-71.0, -81.0]]
    assert np.array_equal(average_k(fm, 1).rows, fm.rows)
    with pytest.raises(ValueError):
        average_k(fm, 3)


def test_average_k_drops_partial_group():
    fm = FingerprintMatrix.from_rows(0, np.arange(10, dtype=float).reshape(5, 2))
    assert len(average_k(fm, 2)) == 2


@given(st.integers(1, 4), st.integers(1, 4), st.floats(-150, -40), st.integers(1, 3))
def test_average_composes_on_constant(k, j, v, reps):
    T = k * j * reps
    fm = FingerprintMatrix.from_rows(0, np.full((T, 3), v))
    a = average_k(average_k(fm, k), j).rows
    b = average_k(fm, k * j).rows
    assert np.allclose(a, b) and np.allclose(a, v)


def _campaign(seed=0):
    return build_campaign(CampaignConfig(test_nodes_per_class=6, msgs_per_test_node=3), seed)


def test_anchor_split_balanced_and_disjoint():
    camp = _campaign()
    part = camp.partition
    sp = anchor_split(camp.messages, part, 100.0, seed=0)
    counts = np.bincount(sp.train_truth, minlength=7)
    assert len(set(counts.tolist())) == 1 and counts[0] > 0
    tcounts = np.bincount(sp.test_truth, minlength=7)
    assert len(set(tcounts.tolist())) == 1
    train_keys = {(r.time_index, r.position) for r in sp.train.records}
    test_keys = {(r.time_index, r.position) for r in sp.test.records}
    assert not train_keys & test_keys
    for r, c in zip(sp.train.records, sp.train_truth):
        assert project(part.origin, r.position).dist(part.centers[c]) <= 100.0


def test_anchor_split_gap_messages_dropped():
    part = make_partition(O, 2, 1000.0, 300.0)
    pts = [PlanarPoint(0, 0), PlanarPoint(1000, 0), PlanarPoint(500, 0), PlanarPoint(200, 0), PlanarPoint(800, 0)]
    recs = tuple(_rec(0, f"n{i}", [-80.0], unproject(O, p)) for i, p in enumerate(pts))
    sp = anchor_split(MessageSet(("a",), recs), part, 100.0)
    assert len(sp.train) == 2 and len(sp.test) == 2
    assert "n2" not in {r.node_id for r in sp.test.records}


def test_anchor_split_all_at_centres():
    part = make_partition(O, 2, 1000.0, 300.0)
    recs = tuple(_rec(0, f"n{i}", [-80.0], unproject(O, c)) for i, c in enumerate(part.centers))
    sp = anchor_split(MessageSet(("a",), recs), part, 100.0)
    assert len(sp.test) == 0


def test_anchor_split_errors():
    part = make_partition(O, 2, 1000.0, 300.0)
    recs = (_rec(0, "n0", [-80.0], unproject(O, PlanarPoint(0, 0))),)
    with pytest.raises(SplitError):
        anchor_split(MessageSet(("a",), recs), part, 100.0)
    with pytest.raises(SplitError):
        anchor_split(MessageSet(("a",), (_rec(0, "n", [-80.0]),)), part, 100.0)


def test_select_features_ranks_by_reception():
    recs = tuple(_rec(t, "g", [-80.0, np.nan if t % 2 else -90.0, np.nan]) for t in range(6))
    ms = MessageSet(("a", "b", "c"), recs)
    tr, te = select_features(ms, ms, 2)
    assert tr.bs_ids == ("a", "b")
    same, _ = select_features(ms, ms, 3)
    assert same.same_as(ms)
    assert rank_features(ms).tolist() == [0, 1, 2]


def test_select_features_keeps_nearest_bs():
    # the far base station misses most messages, so it ranks last
    camp = build_campaign(CampaignConfig(n_bs=10, bs_ring=(1500.0, 12000.0)), 3)
    bs_dist = np.array([math.hypot(b.x, b.y) for b in camp.base_stations])
    heard = (~np.isnan(camp.messages.rssi_matrix(fill=None))).sum(axis=0)
    order = rank_features(camp.messages)
    assert heard[order[0]] >= heard[order[-1]]
    assert bs_dist[order[:3]].mean() < bs_dist[order[-3:]].mean()
