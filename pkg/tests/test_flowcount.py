"""Stop-bar counting tests: the tracked counter must be immune to dropped
frames, the naive threshold counter must demonstrably not be."""
import io

import pytest

from demandforge.flowcount import (ApproachGeometry, Detection, FlowError, Lane,
                                   count_crossings, count_threshold,
                                   load_geometry, plan_crossings, read_stream,
                                   synth_stream, write_stream)


def geom(stop_bar_y=100.0, epsilon=10.0):
    return ApproachGeometry(stop_bar_y=stop_bar_y, epsilon=epsilon,
                            lanes=[Lane(1, 0.0, 40.0), Lane(2, 50.0, 90.0)])


def det(frame, track, cy, cx=20.0, label="car"):
    return Detection(frame_index=frame, track_id=track, label=label,
                     cx=cx, cy=cy)


class TestCountCrossings:
    def test_empty_stream(self):
        counts = count_crossings([], geom())
        assert counts.per_lane == {1: 0, 2: 0}
        assert counts.total == 0

    def test_dropped_frames_do_not_matter(self):
        # track seen well above the bar, then (after a gap) well below
        stream = [det(0, 7, 50.0, cx=70.0), det(9, 7, 140.0, cx=70.0)]
        counts = count_crossings(stream, geom())
        assert counts.per_lane == {1: 0, 2: 1}

    def test_first_seen_below_bar_never_counted(self):
        stream = [det(0, 3, 120.0), det(1, 3, 140.0)]
        counts = count_crossings(stream, geom())
        assert counts.total == 0

    def test_counted_at_most_once(self):
        stream = [det(0, 5, 50.0), det(1, 5, 120.0), det(2, 5, 90.0),
                  det(3, 5, 130.0), det(4, 5, 150.0)]
        counts = count_crossings(stream, geom())
        assert counts.total == 1
        assert counts.counted_tracks == {5}

    def test_lane_from_crossing_frame(self):
        # above the bar in lane 1, below it in lane 2
        stream = [det(0, 1, 50.0, cx=20.0), det(1, 1, 120.0, cx=70.0)]
        counts = count_crossings(stream, geom())
        assert counts.per_lane == {1: 0, 2: 1}

    def test_off_lane_crossing_skipped_then_counted(self):
        stream = [det(0, 1, 50.0), det(1, 1, 120.0, cx=45.0),
                  det(2, 1, 130.0, cx=20.0)]
        counts = count_crossings(stream, geom())
        assert counts.per_lane == {1: 1, 2: 0}

    def test_class_filter(self):
        stream = [det(0, 1, 50.0, label="pedestrian"), det(1, 1, 120.0,
                                                           label="pedestrian")]
        assert count_crossings(stream, geom()).total == 0

    def test_unordered_stream_rejected(self):
        stream = [det(5, 1, 50.0), det(1, 1, 120.0)]
        with pytest.raises(FlowError, match="unordered"):
            count_crossings(stream, geom())

    def test_lane_sum_equals_counted_tracks(self):
        stream = synth_stream(plan_crossings(9, [1, 2]), 0.3, seed=4, geom=geom())
        counts = count_crossings(stream, geom())
        assert sum(counts.per_lane.values()) == len(counts.counted_tracks)


class TestCountThreshold:
    def test_frame_on_the_bar_counted_once(self):
        stream = [det(0, 1, 50.0), det(1, 1, 100.0), det(2, 1, 150.0)]
        counts = count_threshold(stream, geom())
        assert counts.total == 1

    def test_near_bar_frames_dropped_means_missed(self):
        # no frame within epsilon of the bar: jumps 50 -> 140
        stream = [det(0, 1, 50.0), det(1, 1, 140.0)]
        assert count_threshold(stream, geom()).total == 0
        assert count_crossings(stream, geom()).total == 1

    def test_two_tracks_same_lane(self):
        stream = [det(0, 1, 100.0), det(0, 2, 95.0)]
        counts = count_threshold(stream, geom())
        assert counts.per_lane[1] == 2


class TestSynthStream:
    def test_no_drops_recovers_script_exactly(self):
        scenario = plan_crossings(5, [1, 2])
        stream = synth_stream(scenario, 0.0, seed=0, geom=geom())
        assert count_crossings(stream, geom()).total == 5
        assert count_threshold(stream, geom()).total == 5

    def test_deterministic_for_fixed_seed(self):
        scenario = plan_crossings(8, [1, 2])
        a = synth_stream(scenario, 0.5, seed=42, geom=geom())
        b = synth_stream(scenario, 0.5, seed=42, geom=geom())
        assert a == b

    def test_monotone_descent_per_track(self):
        stream = synth_stream(plan_crossings(4, [1]), 0.25, seed=9, geom=geom())
        by_track = {}
        for d in stream:
            by_track.setdefault(d.track_id, []).append(d.cy)
        for cys in by_track.values():
            assert all(a < b for a, b in zip(cys, cys[1:]))

    def test_tracked_counter_immune_to_drops(self):
        scenario = plan_crossings(5, [1, 2])
        for seed in range(100):
            stream = synth_stream(scenario, 0.5, seed=seed, geom=geom())
            assert count_crossings(stream, geom()).total == 5

    def test_threshold_counter_undercounts_under_drops(self):
        scenario = plan_crossings(5, [1, 2])
        totals = []
        for seed in range(100):
            stream = synth_stream(scenario, 0.5, seed=seed, geom=geom())
            totals.append(count_threshold(stream, geom()).total)
        assert all(t <= 5 for t in totals)
        assert any(t < 5 for t in totals)

    def test_threshold_never_beats_tracked(self):
        scenario = plan_crossings(12, [1, 2])
        for seed in range(30):
            for rate in (0.0, 0.25, 0.5):
                stream = synth_stream(scenario, rate, seed=seed, geom=geom())
                assert (count_threshold(stream, geom()).total
                        <= count_crossings(stream, geom()).total)

    def test_bad_drop_rate(self):
        with pytest.raises(FlowError):
            synth_stream([], 1.0, seed=0, geom=geom())


class TestGeometryAndIo:
    def test_overlapping_lanes_rejected(self):
        with pytest.raises(FlowError, match="overlap"):
            ApproachGeometry(stop_bar_y=10, epsilon=1,
                             lanes=[Lane(1, 0, 50), Lane(2, 40, 80)])

    def test_epsilon_positive(self):
        with pytest.raises(FlowError, match="epsilon"):
            ApproachGeometry(stop_bar_y=10, epsilon=0, lanes=[Lane(1, 0, 5)])

    def test_geometry_json(self):
        doc = {"stop_bar_y": 100, "epsilon": 5,
               "lanes": [{"id": 1, "left_x": 0, "right_x": 30}]}
        g = load_geometry(doc)
        assert g.lane_at(10.0).id == 1
        assert g.lane_at(35.0) is None

    def test_stream_round_trip(self, tmp_path):
        stream = synth_stream(plan_crossings(3, [1]), 0.0, seed=1, geom=geom())
        path = tmp_path / "stream.jsonl"
        write_stream(stream, path)
        assert read_stream(path) == stream

    def test_bad_stream_line(self):
        with pytest.raises(FlowError, match="line 1"):
            read_stream(io.StringIO('{"frame": 0}\n'))
