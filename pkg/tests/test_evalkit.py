from __future__ import annotations

import json

import numpy as np
import pytest

from helpers import write_case, write_manifest
from oracles import box_iou, tube_viou
from stvg.core import BoundingBox, QueryRecord, TrackProposal, Tube
from stvg.errors import NoSamplesError, ParseError
from stvg.evalkit import (
    DatasetManifest,
    ManifestEntry,
    SourceTrack,
    dumps6,
    evaluate_results,
    iou,
    load_manifest,
    load_proposals,
    resample_gt,
    resample_tracks,
    save_manifest,
    save_proposals,
    summarize,
    track_iou,
    viou,
    write_results,
)

B = BoundingBox(10, 10, 20, 20)


class TestIou:
    def test_identical(self):
        assert iou(B, B) == 1.0

    def test_disjoint(self):
        assert iou(B, BoundingBox(30, 30, 40, 40)) == 0.0
        assert iou(B, BoundingBox(20, 10, 30, 20)) == 0.0  # touching edges

    def test_half_overlap(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(0.5, 0, 1.5, 1)) == pytest.approx(1 / 3, abs=1e-15)

    def test_random_matches_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            x = np.sort(rng.uniform(0, 10, 4).reshape(2, 2), axis=1)
            y = np.sort(rng.uniform(0, 10, 4).reshape(2, 2), axis=1)
            a = BoundingBox(x[0, 0], y[0, 0], x[0, 1] + 1e-3, y[0, 1] + 1e-3)
            b = BoundingBox(x[1, 0], y[1, 0], x[1, 1] + 1e-3, y[1, 1] + 1e-3)
            assert iou(a, b) == pytest.approx(box_iou(a.as_tuple(), b.as_tuple()), rel=1e-12, abs=1e-15)


class TestViou:
    def test_shifted_spans(self):
        pred = Tube(2, 4, (B, B, B))
        gt = Tube(3, 5, (B, B, B))
        assert viou(pred, gt) == 0.5

    def test_disjoint_spans(self):
        assert viou(Tube(0, 1, (B, B)), Tube(3, 4, (B, B))) == 0.0

    def test_random_matches_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            tubes = []
            for _k in range(2):
                t_s = int(rng.integers(0, 10))
                t_e = int(rng.integers(t_s, 12))
                boxes = []
                for _f in range(t_s, t_e + 1):
                    x1, y1 = rng.uniform(0, 50, 2)
                    boxes.append(BoundingBox(x1, y1, x1 + rng.uniform(1, 30), y1 + rng.uniform(1, 30)))
                tubes.append(Tube(t_s, t_e, tuple(boxes)))
            p, g = tubes
            want = tube_viou((p.t_s, p.t_e), {t: p.box_at(t).as_tuple() for t in p.frames},
                             (g.t_s, g.t_e), {t: g.box_at(t).as_tuple() for t in g.frames})
            assert viou(p, g) == pytest.approx(want, rel=1e-12, abs=1e-15)

    def test_track_iou(self):
        track = TrackProposal("t", (B, None, B, B))
        gt = Tube(1, 3, (B, B, B))
        assert track_iou(track, gt) == pytest.approx(2 / 3)


class TestSummarize:
    def test_hand_count(self):
        s = summarize([0.4, 0.6])
        assert (s.m_viou, s.viou_at[0.3], s.viou_at[0.5]) == (0.5, 1.0, 0.5)

    def test_zeros(self):
        s = summarize([0.0, 0.0, 0.0])
        assert s.m_viou == 0.0 and set(s.viou_at.values()) == {0.0}

    def test_strict_threshold(self):
        assert summarize([0.3]).viou_at[0.3] == 0.0

    def test_named_samples_and_json(self):
        s = summarize([("a", 0.2), ("b", 0.9)], thresholds=(0.1,))
        assert s.per_sample == (("a", 0.2), ("b", 0.9))
        assert s.to_json() == {"m_viou": pytest.approx(0.55), "viou_at": {"0.1": 1.0}, "n_samples": 2}

    def test_empty(self):
        with pytest.raises(NoSamplesError, match="no samples"):
            summarize([])


def minimal_manifest(tmp_path):
    entries = []
    write_case(tmp_path, "c1", 30, 320, 240, {"t0": {0: (1, 2, 30, 40), 5: (2, 3, 31, 41)}},
               "a man walks", gt=(4, 5, [(1, 1, 10, 10), (2, 2, 12, 12)]), manifest_entries=entries, query_id="q1")
    return write_manifest(tmp_path, entries)


class TestManifest:
    def test_minimal(self, tmp_path):
        m = load_manifest(minimal_manifest(tmp_path))
        want = ManifestEntry("c1", 30, 320, 240, QueryRecord("q1", "a man walks"),
                             Tube(4, 5, (BoundingBox(1, 1, 10, 10), BoundingBox(2, 2, 12, 12))),
                             (tmp_path / "proposals" / "c1.json").resolve())
        assert m.entries == (want,)
        assert m.entries[0].proposals() == [SourceTrack("t0", {0: BoundingBox(1, 2, 30, 40), 5: BoundingBox(2, 3, 31, 41)})]

    def test_reversed_coordinates_name_the_field(self, tmp_path):
        entries = []
        write_case(tmp_path, "c1", 10, 100, 100, {"t0": {0: (30, 2, 10, 40)}}, "q", manifest_entries=entries)
        m = load_manifest(write_manifest(tmp_path, entries))
        with pytest.raises(ParseError, match=r"tracks\[0\]\.boxes\['0'\]\.x_min"):
            m.entries[0].proposals()

    def test_reversed_gt_coordinates(self, tmp_path):
        entries = []
        write_case(tmp_path, "c1", 10, 100, 100, {"t0": {0: (1, 2, 10, 40)}}, "q",
                   gt=(0, 0, [(5, 50, 10, 40)]), manifest_entries=entries)
        with pytest.raises(ParseError, match=r"gt\.boxes\[0\]\.y_min"):
            load_manifest(write_manifest(tmp_path, entries))

    def test_out_of_frame_box(self, tmp_path):
        bad = tmp_path / "p.json"
        bad.write_text(json.dumps({"tracks": [{"id": "a", "boxes": {"0": [200, 0, 210, 10]}}]}))
        with pytest.raises(ParseError):
            load_proposals(bad, 100, 100)
        clip = tmp_path / "q.json"
        clip.write_text(json.dumps({"tracks": [{"id": "a", "boxes": {"0": [-5, 0, 110, 10]}}]}))
        assert load_proposals(clip, 100, 100)[0].boxes[0] == BoundingBox(0, 0, 100, 10)

    @pytest.mark.parametrize("mutate,field", [
        (lambda e: e.pop("width"), "width"),
        (lambda e: e.update(frames=0), "frames"),
        (lambda e: e.update(query="  "), "query"),
        (lambda e: e.update(proposals="nope.json"), "proposals"),
        (lambda e: e.update(gt={"t_s": 3, "t_e": 1, "boxes": []}), "t_s"),
    ])
    def test_validation(self, tmp_path, mutate, field):
        path = minimal_manifest(tmp_path)
        data = json.loads(path.read_text())
        mutate(data["entries"][0])
        path.write_text(json.dumps(data))
        with pytest.raises(ParseError, match=field):
            load_manifest(path)

    def test_duplicate_clip(self, tmp_path):
        path = minimal_manifest(tmp_path)
        data = json.loads(path.read_text())
        data["entries"].append(dict(data["entries"][0]))
        path.write_text(json.dumps(data))
        with pytest.raises(ParseError, match="duplicate"):
            load_manifest(path)

    def test_random_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        entries = []
        (tmp_path / "proposals").mkdir()
        for i in range(15):
            frames = int(rng.integers(5, 200))
            w, h = int(rng.integers(50, 2000)), int(rng.integers(50, 2000))
            tracks = []
            for k in range(int(rng.integers(1, 4))):
                keys = sorted(set(int(f) for f in rng.integers(0, frames, 5)))
                tracks.append(SourceTrack(f"t{k}", {f: BoundingBox(rng.uniform(0, w / 2), rng.uniform(0, h / 2),
                                                                    rng.uniform(w / 2 + 1, w), rng.uniform(h / 2 + 1, h))
                                                    for f in keys}))
            pp = tmp_path / "proposals" / f"c{i}.json"
            save_proposals(pp, tracks)
            assert load_proposals(pp, w, h) == tracks
            gt = None
            if i % 3:
                t_s = int(rng.integers(0, frames))
                t_e = int(rng.integers(t_s, frames))
                gt = Tube(t_s, t_e, tuple(BoundingBox(0.5, 0.25, w - 1.5, h - 0.125) for _ in range(t_s, t_e + 1)))
            entries.append(ManifestEntry(f"c{i}", frames, w, h, QueryRecord(f"q{i}", f"query {i}"), gt, pp.resolve()))
        m = DatasetManifest(tuple(entries))
        save_manifest(tmp_path / "m.json", m)
        back = load_manifest(tmp_path / "m.json")
        assert back.entries == m.entries


class TestResample:
    def test_gt_inside_span(self):
        gt = Tube(4, 9, tuple(BoundingBox(i, 0, i + 1, 1) for i in range(4, 10)))
        out = resample_gt(gt, [2, 7, 12])
        assert (out.t_s, out.t_e) == (1, 1) and out.boxes[0] == BoundingBox(7, 0, 8, 1)

    def test_gt_between_samples(self):
        gt = Tube(3, 4, (B, B))
        out = resample_gt(gt, [0, 6, 12])
        assert (out.t_s, out.t_e) == (1, 1)  # 6 is nearer the span center 3.5 than 0

    def test_tracks(self):
        tr = [SourceTrack("a", {0: B, 10: B}), SourceTrack("b", {5: B})]
        out = resample_tracks(tr, [0, 10, 20])
        assert [p.track_id for p in out] == ["a"]
        assert out[0].boxes == (B, B, None)


class TestResults:
    def test_six_decimals(self):
        text = dumps6({"a": 1.0, "b": [0.1234567, 2], "c": -0.0000001, "d": None, "e": True, "f": "x"})
        data = json.loads(text)
        assert data == {"a": 1.0, "b": [0.123457, 2], "c": 0.0, "d": None, "e": True, "f": "x"}
        assert '"a": 1.000000' in text and "0.123457, 2" in text and '"c": 0.000000' in text

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            dumps6({"x": float("nan")})

    def test_evaluate(self, tmp_path):
        gt = {"t_s": 3, "t_e": 5, "boxes": [[10, 10, 20, 20]] * 3}
        results = {"samples": [
            {"query_id": "a", "status": "ok", "tube": {"t_s": 2, "t_e": 4, "boxes": [[10, 10, 20, 20]] * 3}, "gt": gt},
            {"query_id": "b", "status": "failed"},
        ]}
        write_results(tmp_path / "r.json", results)
        s = evaluate_results(tmp_path / "r.json")
        assert s.per_sample == (("a", 0.5), ("b", 0.0))
        assert s.m_viou == 0.25

    def test_evaluate_bad_file(self, tmp_path):
        (tmp_path / "r.json").write_text("{}")
        with pytest.raises(ParseError):
            evaluate_results(tmp_path / "r.json")
