import numpy as np
import pytest

from siglink.privacy import signature_closure, utility_metrics
from siglink.synth import generate_synthetic
from siglink.traces import AnchorSet, Trace


def _trace(object_id, anchor_ids):
    return Trace(object_id, [(a, 1_600_000_000 + i * 3600) for i, a in enumerate(anchor_ids)])


def test_unchanged_traces_score_ones():
    anchors = AnchorSet([0.0, 0.5, 1.0], [0.0, 0.5, 1.0])
    traces = [_trace("a", [0, 1, 2, 1])]
    metrics = utility_metrics(traces, traces, anchors)
    assert metrics.data_remain == 1.0
    assert metrics.mbr_overlap == 1.0
    assert metrics.grid_coverage_large == 1.0
    assert metrics.grid_coverage_small == 1.0


def test_half_deleted_points_with_no_unique_cells():
    anchors = AnchorSet([0.0, 1.0], [0.0, 1.0])
    before = [_trace("a", [0, 0, 1, 1])]
    after = [_trace("a", [0, 1])]
    metrics = utility_metrics(before, after, anchors)
    assert metrics.data_remain == 0.5
    assert metrics.grid_coverage_large == 1.0
    assert metrics.grid_coverage_small == 1.0
    assert metrics.mbr_overlap == 1.0


def test_emptied_object_scores_zero():
    anchors = AnchorSet([0.0, 1.0], [0.0, 1.0])
    before = [_trace("a", [0, 1])]
    after = [_trace("a", [])]
    metrics = utility_metrics(before, after, anchors)
    assert metrics.data_remain == 0.0
    assert metrics.mbr_overlap == 0.0
    assert metrics.grid_coverage_small == 0.0


def test_degenerate_point_mbr_scores_one_when_contained():
    anchors = AnchorSet([0.25, 0.25], [0.75, 0.75])
    before = [_trace("a", [0, 1, 0])]
    after = [_trace("a", [0])]
    metrics = utility_metrics(before, after, anchors)
    assert metrics.mbr_overlap == 1.0


def test_mismatched_object_sets_rejected():
    anchors = AnchorSet([0.0], [0.0])
    with pytest.raises(ValueError):
        utility_metrics([_trace("a", [0])], [_trace("b", [0])], anchors)


def _closure_corpus(seed, n=120):
    return generate_synthetic(
        n, 2500, 0.05, 400, seed=seed,
        personal_mass=0.10, personal_pool=15, hub_fraction=0.5,
        hub_radius_mult=6.0, hub_exponent=0.0,
    )


def test_removed_sets_disjoint_and_suppression_sound():
    traces, anchors = _closure_corpus(0)
    originals = {t.object_id: list(t.points) for t in traces}
    modified, report = signature_closure(
        traces, anchors, m=10, rounds=3, engine="wrtree"
    )
    seen: dict[str, set[int]] = {}
    for round_ in report.rounds:
        for oid, removed in round_.removed.items():
            assert not (set(removed) & seen.get(oid, set())), "anchor removed twice"
            seen.setdefault(oid, set()).update(removed)
    by_id = {t.object_id: t for t in modified}
    for oid, removed in seen.items():
        remaining = {a for a, _ in by_id[oid].points}
        assert not (remaining & removed)
    # inputs were not mutated
    assert all(originals[t.object_id] == t.points for t in traces)


def test_utility_monotone_decay_across_rounds():
    traces, anchors = _closure_corpus(1)
    _, report = signature_closure(traces, anchors, m=10, rounds=3, engine="wrtree")
    series = [report.rounds[i].utility for i in range(3)]
    for metric in ("data_remain", "mbr_overlap", "grid_coverage_large", "grid_coverage_small"):
        values = [getattr(u, metric) for u in series]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:])), metric


def test_accuracy_decreases_in_the_mean_over_seeds():
    baselines, r1, r2, r3 = [], [], [], []
    for seed in range(10):
        traces, anchors = _closure_corpus(seed, n=100)
        _, report = signature_closure(traces, anchors, m=10, rounds=3, engine="wrtree")
        baselines.append(report.baseline_accuracy[1])
        r1.append(report.rounds[0].accuracy[1])
        r2.append(report.rounds[1].accuracy[1])
        r3.append(report.rounds[2].accuracy[1])
    means = [float(np.mean(v)) for v in (baselines, r1, r2, r3)]
    assert means[0] > means[1] > means[2] or means[1] == 0.0
    assert means[3] <= means[1]
    assert means[3] < means[0]


def test_trade_off_accuracy_falls_faster_than_data():
    traces, anchors = _closure_corpus(2)
    _, report = signature_closure(traces, anchors, m=10, rounds=3, engine="wrtree")
    base = report.baseline_accuracy[1]
    final = report.rounds[-1]
    acc_drop = (base - final.accuracy[1]) / max(base, 1e-9)
    data_drop = 1.0 - final.utility.data_remain
    assert acc_drop > data_drop


def test_tiny_pool_object_can_empty_out_and_is_flagged():
    anchors = AnchorSet([0.0, 0.1, 0.5, 0.9], [0.0, 0.1, 0.5, 0.9])
    days = lambda i: 1_600_000_000 + i * 43_200
    traces = [
        Trace("tiny", [(0, days(0)), (1, days(1)), (0, days(2)), (1, days(3))]),
        Trace("other", [(2, days(0)), (3, days(1)), (2, days(2)), (3, days(3))]),
    ]
    modified, report = signature_closure(
        traces, anchors, m=10, rounds=1, engine="linear"
    )
    assert set(report.emptied) == {"tiny", "other"}
    assert all(not t.points for t in modified)


def test_parameter_validation():
    traces, anchors = _closure_corpus(3, n=10)
    with pytest.raises(ValueError):
        signature_closure(traces, anchors, m=0)
    with pytest.raises(ValueError):
        signature_closure(traces, anchors, rounds=0)
