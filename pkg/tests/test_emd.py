"""The transport solver is checked against a brute-force minimum over all
feasible integral flows, which only needs the marginals to match."""

import math

import numpy as np
import pytest

from siglink.signatures import TemporalHistogram, emd, emd_similarity, temporal_cost


def bruteforce_emd_counts(a_counts, b_counts, dt_hours):
    """Minimum transport cost between integer histograms by exhaustive
    enumeration of integral flow matrices."""
    d = len(a_counts)
    assert sum(a_counts) == sum(b_counts)
    costs = [[temporal_cost(i, j, dt_hours) for j in range(d)] for i in range(d)]
    best = math.inf

    def fill_source(i, need_b, acc):
        nonlocal best
        if acc >= best:
            return
        if i == len(a_counts):
            best = acc
            return
        supply = a_counts[i]

        def split(j, left, acc2):
            nonlocal best
            if acc2 >= best:
                return
            if j == d - 1:
                if left <= need_b[j]:
                    need_b[j] -= left
                    fill_source(i + 1, need_b, acc2 + left * costs[i][j])
                    need_b[j] += left
                return
            for amount in range(min(left, need_b[j]), -1, -1):
                need_b[j] -= amount
                split(j + 1, left - amount, acc2 + amount * costs[i][j])
                need_b[j] += amount

        split(0, supply, acc)

    fill_source(0, list(b_counts), 0.0)
    return best


def hist(counts, dt_hours):
    arr = np.asarray(counts, dtype=float)
    return TemporalHistogram(arr / arr.sum(), dt_hours, normalized=True)


def test_identical_histograms_full_similarity():
    h = hist([3, 1, 0, 2], 6)
    assert emd(h, h) == 0.0
    assert emd_similarity(h, h) == 1.0


def test_antipodal_point_masses():
    a = hist(np.eye(24)[0], 1)
    b = hist(np.eye(24)[12], 1)
    assert emd(a, b) == pytest.approx(1.0, abs=1e-12)
    assert emd_similarity(a, b) == pytest.approx(0.0, abs=1e-12)


def test_wraparound_neighbors():
    a = hist(np.eye(24)[0], 1)
    b = hist(np.eye(24)[23], 1)
    assert emd(a, b) == pytest.approx(1 / 12, abs=1e-12)
    assert emd_similarity(a, b) == pytest.approx(1 - 1 / 12, abs=1e-12)


def test_layout_mismatch_rejected():
    with pytest.raises(ValueError):
        emd(hist([1, 1], 12), hist([1, 1, 1, 1], 6))


def test_unnormalized_rejected():
    a = TemporalHistogram(np.array([2.0, 0.0]), 12, normalized=False)
    with pytest.raises(ValueError):
        emd(a, a)


def test_matches_bruteforce_oracle_small():
    rng = np.random.default_rng(42)
    dt_by_d = {2: 12, 3: 8, 4: 6, 6: 4}
    for _ in range(60):
        d = int(rng.choice([2, 3, 4, 6]))
        dt = dt_by_d[d]
        total = int(rng.integers(1, 8))
        a = rng.multinomial(total, np.ones(d) / d)
        b = rng.multinomial(total, np.ones(d) / d)
        expected = bruteforce_emd_counts(a.tolist(), b.tolist(), dt) / total
        got = emd(hist(a, dt), hist(b, dt))
        assert got == pytest.approx(expected, abs=1e-9), (a, b, dt)


def test_metric_axioms_random():
    rng = np.random.default_rng(9)
    for _ in range(120):
        d = int(rng.choice([4, 6, 12, 24]))
        dt = 24 // d
        hs = []
        for _ in range(3):
            raw = rng.uniform(0, 1, d)
            hs.append(TemporalHistogram(raw / raw.sum(), dt, normalized=True))
        a, b, c = hs
        assert emd(a, a) == pytest.approx(0.0, abs=1e-12)
        assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-12)
        assert emd(a, c) <= emd(a, b) + emd(b, c) + 1e-9
        assert 0.0 <= emd(a, b) <= 1.0


def test_cost_matrix_values():
    assert temporal_cost(5, 5, 1) == 0.0
    assert temporal_cost(0, 12, 1) == 1.0
    assert temporal_cost(0, 23, 1) == pytest.approx(1 / 12)
    assert temporal_cost(0, 1, 12) == 1.0
    with pytest.raises(ValueError):
        temporal_cost(0, 30, 1)
