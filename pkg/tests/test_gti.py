from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import argmax_first, box_iou, layer_head_mean, masked_max, ratio, track_masks
from stvg.core import BoundingBox, GroundingAttentionMap, RawAttention, TokenLayout, TrackProposal, Tube
from stvg.errors import NoSamplesError
from stvg.gti import (
    GtiSample,
    SpecialTokenAttention,
    activation_ranking,
    aggregate_attention,
    attention_ratio,
    hit_ratio_study,
    rank_accuracy_study,
    select_grounding_token,
    superior_token,
)

FRAME = (90.0, 90.0)
# on a 3x3 grid over 90x90, cell (i, j) is covered by the 30px square at (30j, 30i)


def cell_box(i, j):
    return BoundingBox(30 * j, 30 * i, 30 * j + 30, 30 * i + 30)


def sta_from(arrays):
    return SpecialTokenAttention(tuple(GroundingAttentionMap(a, i) for i, a in enumerate(arrays)),
                                 tuple(f"role{i}" for i in range(len(arrays))))


def gt_tube(t_s, t_e, b):
    return Tube(t_s, t_e, tuple(b for _ in range(t_s, t_e + 1)))


class TestAggregate:
    def test_single_layer_head_is_slice_and_reshape(self):
        rng = np.random.default_rng(0)
        lay = TokenLayout(2, 12, 3, 2, (3, 2, 2))
        raw = rng.random((1, 1, lay.total, lay.total))
        sta = aggregate_attention(raw, lay)
        for r in range(2):
            assert np.array_equal(sta.maps[r].values, raw[0, 0, lay.role_slice.start + r, 2:14].reshape(3, 2, 2))
            assert sta.maps[r].token_index == r

    def test_constant(self):
        lay = TokenLayout(1, 8, 1, 3, (2, 2, 2))
        sta = aggregate_attention(RawAttention(np.full((2, 3, 13, 13), 0.125)), lay)
        assert all(np.all(m.values == 0.125) for m in sta.maps)

    def test_matches_layer_head_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            t, h, w = (int(v) for v in rng.integers(1, 4, 3))
            lay = TokenLayout(int(rng.integers(0, 3)), t * h * w, int(rng.integers(0, 4)), 4, (t, h, w))
            raw = rng.random((2, 2, lay.total, lay.total))
            sta = aggregate_attention(raw, lay)
            want = layer_head_mean(raw.tolist(), range(lay.role_slice.start, lay.total),
                                   range(lay.visual_slice.start, lay.visual_slice.stop))
            for r in range(4):
                np.testing.assert_allclose(sta.maps[r].values.reshape(-1), want[r], rtol=1e-12, atol=0)

    def test_layout_mismatch(self):
        with pytest.raises(ValueError):
            aggregate_attention(np.zeros((1, 1, 5, 5)), TokenLayout(1, 1, 1, 1, (1, 1, 1)))


class TestRatio:
    def test_uniform_map(self):
        amap = GroundingAttentionMap(np.full((2, 3, 3), 0.3))
        assert attention_ratio(amap, gt_tube(0, 1, cell_box(1, 1)), FRAME) == 1.0

    def test_mass_inside_hits_clamp(self):
        v = np.zeros((2, 3, 3))
        v[1, 1, 1] = 0.7
        r = attention_ratio(GroundingAttentionMap(v), gt_tube(0, 1, cell_box(1, 1)), FRAME)
        assert np.isfinite(r) and r >= 0.7 / 1e-12

    def test_frames_outside_gt_span_count_as_outside(self):
        v = np.zeros((3, 3, 3))
        v[0, 1, 1] = 0.5  # same cell as the gt box, but before the gt span
        v[1, 1, 1] = 0.25
        r = attention_ratio(GroundingAttentionMap(v), gt_tube(1, 2, cell_box(1, 1)), FRAME)
        assert r == 0.5

    def test_random_matches_two_pass_loop(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            t, h, w = (int(v) for v in rng.integers(1, 8, 3))
            vals = rng.random((t, h, w)) * rng.random()
            x1, x2 = np.sort(rng.uniform(0, 90, 2))
            y1, y2 = np.sort(rng.uniform(0, 90, 2))
            t_s = int(rng.integers(0, t))
            t_e = int(rng.integers(t_s, t))
            gt = gt_tube(t_s, t_e, BoundingBox(x1, y1, x2 + 1e-3, y2 + 1e-3))
            masks = track_masks([gt.box_at(k) for k in range(t)], 90, 90, h, w)
            got = attention_ratio(GroundingAttentionMap(vals), gt, FRAME)
            assert got == pytest.approx(ratio(vals.tolist(), masks, 1e-12), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (2, 3, 3), elements=st.floats(0.01, 1.0)), st.floats(0.01, 100.0))
    def test_scale_invariant(self, vals, c):
        gt = gt_tube(0, 1, cell_box(0, 2))
        a = attention_ratio(GroundingAttentionMap(vals), gt, FRAME)
        b = attention_ratio(GroundingAttentionMap(vals * c), gt, FRAME)
        assert b == pytest.approx(a, rel=1e-12)


class TestSuperior:
    def test_single_token(self):
        sta = sta_from([np.random.default_rng(0).random((2, 3, 3))])
        assert superior_token(sta, gt_tube(0, 0, cell_box(0, 0)), FRAME) == 0

    def test_token_scaled_inside_box(self):
        rng = np.random.default_rng(3)
        base = rng.uniform(0.1, 0.2, (4, 3, 3))
        gt = gt_tube(1, 2, cell_box(2, 0))
        maps = [base.copy() for _ in range(4)]
        maps[2][1:3, 2, 0] *= 10
        ratios = [attention_ratio(GroundingAttentionMap(m), gt, FRAME) for m in maps]
        assert max(ratios) == ratios[2] and sorted(ratios)[-2] < ratios[2]
        assert superior_token(sta_from(maps), gt, FRAME) == 2

    def test_identical_maps_pick_first(self):
        m = np.random.default_rng(4).random((2, 3, 3))
        assert superior_token(sta_from([m] * 4), gt_tube(0, 1, cell_box(1, 1)), FRAME) == 0


class TestSelection:
    def test_direct_argmax(self):
        maps = [np.full((1, 2, 2), v) for v in (0.1, 0.9, 0.3, 0.3)]
        idx, amap = select_grounding_token(sta_from(maps))
        assert idx == 1 and amap.token_index == 1

    def test_ties(self):
        maps = [np.full((1, 2, 2), 0.5)] * 4
        assert select_grounding_token(sta_from(maps))[0] == 0
        assert activation_ranking(sta_from([np.full((1, 1, 1), v) for v in (0.2, 0.5, 0.2, 0.5)])) == [1, 3, 0, 2]

    def test_random_matches_max_of_max_scan(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            n = int(rng.integers(1, 7))
            t, h, w = (int(v) for v in rng.integers(1, 5, 3))
            arrs = [np.round(rng.random((t, h, w)), 2) for _ in range(n)]
            peaks = []
            for a in arrs:
                best = -1.0
                for v in a.reshape(-1).tolist():
                    best = max(best, v)
                peaks.append(best)
            assert select_grounding_token(sta_from(arrs))[0] == argmax_first(peaks)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.floats(1e-3, 1e3))
    def test_uniform_scaling_keeps_choice(self, peaks, c):
        arrs = [np.full((1, 2, 2), p) for p in peaks]
        sta = sta_from(arrs)
        assert select_grounding_token(sta.scaled([c] * len(peaks)))[0] == select_grounding_token(sta)[0]

    def test_index_always_valid(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            sta = sta_from([rng.random((2, 2, 2)) for _ in range(n)])
            assert 0 <= select_grounding_token(sta)[0] < n
            assert 0 <= superior_token(sta, gt_tube(0, 1, cell_box(0, 0)), (60, 60)) < n


def planted_hit_sample(winner, n_tok=4, rng=None, sample_id=""):
    """Only ``winner`` peaks inside the gt cell; every other token peaks outside it."""
    rng = rng or np.random.default_rng(0)
    maps = []
    for k in range(n_tok):
        m = rng.uniform(0.05, 0.1, (3, 3, 3))
        if k == winner:
            m[1, 0, 0] = 0.9
        else:
            m[1, 2, 2] = 0.9
        maps.append(m)
    return GtiSample(sta_from(maps), gt_tube(0, 2, cell_box(0, 0)), FRAME, sample_id=sample_id)


class TestHitRatio:
    def test_all_favor_first(self):
        rep = hit_ratio_study([planted_hit_sample(0) for _ in range(5)])
        assert rep.hit_ratio == (1.0, 0.0, 0.0, 0.0)

    def test_two_samples(self):
        rep = hit_ratio_study([planted_hit_sample(0), planted_hit_sample(1)])
        assert rep.hit_ratio == (0.5, 0.5, 0.0, 0.0)

    def test_planted_distribution_recovered(self):
        rng = np.random.default_rng(7)
        winners = [0] * 12 + [1] * 5 + [2] * 0 + [3] * 3
        rng.shuffle(winners)
        rep = hit_ratio_study([planted_hit_sample(w, rng=rng) for w in winners])
        assert rep.hit_ratio == (0.6, 0.25, 0.0, 0.15)
        assert sum(rep.hit_ratio) == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(NoSamplesError):
            hit_ratio_study([])

    def test_write(self, tmp_path):
        rep = hit_ratio_study([planted_hit_sample(0, sample_id="a"), planted_hit_sample(2, sample_id="b")])
        rep.write(tmp_path / "h.json", tmp_path / "h.csv")
        assert json.loads((tmp_path / "h.json").read_text())["hit_ratio"] == {
            "role0": 0.5, "role1": 0.0, "role2": 0.5, "role3": 0.0}
        assert (tmp_path / "h.csv").read_text().splitlines() == ["sample,superior_token", "a,0", "b,2"]


def two_track_proposals(t=3):
    left = TrackProposal("left", tuple(cell_box(0, 0) for _ in range(t)))
    right = TrackProposal("right", tuple(cell_box(2, 2) for _ in range(t)))
    return (left, right)


def rank_sample(peaks, points_at_gt, t=3):
    """Token k peaks at ``peaks[k]`` on the gt track if ``points_at_gt[k]`` else on the distractor."""
    maps = []
    for p, good in zip(peaks, points_at_gt):
        m = np.full((t, 3, 3), 0.01)
        if good:
            m[0, 0, 0] = p
        else:
            m[0, 2, 2] = p
        maps.append(m)
    return GtiSample(sta_from(maps), gt_tube(0, t - 1, cell_box(0, 0)), FRAME, two_track_proposals(t))


def rank_oracle(samples):
    """Independent re-implementation: loops only, no package scoring helpers."""
    n_tok = len(samples[0].attention.maps)
    hits = [0] * n_tok
    for s in samples:
        peaks = [float(m.values.max()) for m in s.attention.maps]
        order = sorted(range(n_tok), key=lambda i: (-peaks[i], i))
        for r, tok in enumerate(order):
            vals = s.attention.maps[tok].values.tolist()
            t, h, w = s.attention.shape
            scores = [masked_max(vals, track_masks(p.boxes, s.frame_size[0], s.frame_size[1], h, w)) for p in s.proposals]
            best = argmax_first(scores)
            ious = []
            for k in range(s.gt.t_s, s.gt.t_e + 1):
                b = s.proposals[best].boxes[k]
                g = s.gt.box_at(k)
                ious.append(0.0 if b is None else box_iou(b.as_tuple(), g.as_tuple()))
            hits[r] += sum(ious) / len(ious) >= 0.5
    return [h / len(samples) for h in hits]


class TestRankAccuracy:
    def test_rank0_always_right(self):
        samples = [rank_sample([0.9, 0.5, 0.4, 0.3], [True, False, False, k % 2 == 0]) for k in range(6)]
        rep = rank_accuracy_study(samples)
        assert rep.rank_accuracy == (1.0, 0.0, 0.0, 0.5)

    def test_far_proposals(self):
        far = TrackProposal("far", tuple(BoundingBox(60, 0, 90, 30) for _ in range(3)))
        s = rank_sample([0.9, 0.5, 0.4, 0.3], [True] * 4)
        s = GtiSample(s.attention, s.gt, FRAME, (far, two_track_proposals()[1]))
        assert rank_accuracy_study([s, s]).rank_accuracy == (0.0, 0.0, 0.0, 0.0)

    def test_random_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        samples = []
        for _ in range(60):
            t = int(rng.integers(2, 5))
            maps = [rng.random((t, 3, 3)) for _ in range(4)]
            props = []
            for k in range(3):
                boxes = []
                for _f in range(t):
                    if rng.random() < 0.2:
                        boxes.append(None)
                    else:
                        x1, x2 = np.sort(rng.uniform(0, 90, 2))
                        y1, y2 = np.sort(rng.uniform(0, 90, 2))
                        boxes.append(BoundingBox(x1, y1, x2 + 1, y2 + 1))
                if all(b is None for b in boxes):
                    boxes[0] = cell_box(1, 1)
                props.append(TrackProposal(f"t{k}", tuple(boxes)))
            g = props[int(rng.integers(0, 3))]
            span = [f for f in range(t) if g.boxes[f] is not None]
            jitter = rng.uniform(-5, 5)
            gt = Tube(span[0], span[0], (BoundingBox(*(max(v + jitter, 0) for v in g.boxes[span[0]].as_tuple())),))
            samples.append(GtiSample(sta_from(maps), gt, FRAME, tuple(props)))
        rep = rank_accuracy_study(samples)
        assert list(rep.rank_accuracy) == rank_oracle(samples)

    def test_csv_rows(self, tmp_path):
        rep = rank_accuracy_study([rank_sample([0.9, 0.5, 0.4, 0.3], [True, False, True, False])])
        assert rep.rows[0]["rank0_hit"] == 1 and rep.rows[0]["rank1_hit"] == 0
        rep.write(tmp_path / "r.json", tmp_path / "r.csv")
        assert json.loads((tmp_path / "r.json").read_text())["rank_accuracy"] == {
            "0": 1.0, "1": 0.0, "2": 1.0, "3": 0.0}
