import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpqkd.pairing import (UNLIMITED, expected_intra_gap, pair_adjacent, pair_first_in_window, pair_leftovers,
                           pair_positions, pairing_rate_analytic)


def _reference_pairing(clicks, l):
    """Literal round-by-round scan: front set on a click, dropped after l idle rounds."""
    out, front = [], None
    for i, c in enumerate(clicks):
        if front is not None and i - front > l:
            front = None
        if c:
            if front is None:
                front = i
            else:
                out.append((front, i))
                front = None
    return out


def test_hand_traces():
    assert pair_adjacent([1, 0, 1, 1, 0, 1], 2) == [(0, 2), (3, 5)]
    assert pair_adjacent([1, 0, 0, 1], 2) == []
    assert pair_adjacent([1, 0, 0, 1], UNLIMITED) == [(0, 3)]


def test_rejects_bad_interval():
    for bad in (0, -1, 2.5):
        with pytest.raises(ValueError):
            pair_adjacent([1, 1], bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), max_size=80), st.integers(1, 12))
def test_matches_literal_scan(clicks, l):
    assert pair_adjacent(clicks, l) == _reference_pairing(clicks, l)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), max_size=80), st.integers(1, 12))
def test_pairs_are_disjoint_and_ordered(clicks, l):
    pairs = pair_adjacent(clicks, l)
    flat = [x for p in pairs for x in p]
    assert flat == sorted(set(flat))
    assert all(clicks[a] and clicks[b] and 0 < b - a <= l for a, b in pairs)


def test_leftovers_complete_the_setting():
    pairs = np.array([[0, 2], [3, 5]])
    rest = pair_leftovers(7, pairs)
    assert rest.tolist() == [[1, 4]]


def test_first_in_window():
    pos = np.array([0, 3, 4, 10])
    got = pair_first_in_window(pos, 3, 7).tolist()
    assert got == [[0, 3], [4, 10]]  # 3 -> 10 is a gap of 7, outside [3, 7)


def test_intra_gap_values():
    assert expected_intra_gap(0.5) == 2
    assert expected_intra_gap(0.5, 1) == pytest.approx(4)
    oracle = 1 / (mpmath.mpf("0.1") * (1 - mpmath.mpf("0.9") ** 10))
    assert expected_intra_gap(0.1, 10) == pytest.approx(float(oracle), rel=1e-13)
    assert expected_intra_gap(0.1, 10) == pytest.approx(15.35, abs=0.005)


def test_rate_values():
    assert pairing_rate_analytic(0.5, 1) == pytest.approx(1 / 6, rel=1e-14)
    for p in (0.01, 0.3, 0.9):
        assert pairing_rate_analytic(p, UNLIMITED) == pytest.approx(p / 2)
    for l in (1, 7, UNLIMITED):
        assert pairing_rate_analytic(1.0, l) == pytest.approx(0.5)
    assert pairing_rate_analytic(0.0, 5) == 0.0


def test_rate_matches_simulation_small():
    rng = np.random.default_rng(11)
    clicks = rng.random(200_000) < 0.5
    got = len(pair_positions(np.flatnonzero(clicks), 1)) / clicks.size
    assert got == pytest.approx(1 / 6, abs=0.003)
