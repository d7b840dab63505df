"""Adjacent-click pairing and its analytic pairing rate.

Indices are 0-based throughout the library; the ``pair`` CLI prints
1-based positions.  An unlimited pairing interval is spelled
``UNLIMITED`` (``math.inf``), never a large integer.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

UNLIMITED = math.inf


def _check_interval(l):
    if l != UNLIMITED and (int(l) != l or l < 1):
        raise ValueError(f"pairing interval must be a positive integer or UNLIMITED, got {l!r}")


def click_positions(clicks) -> np.ndarray:
    """Indices of the successful rounds in a 0/1 (or boolean) sequence."""
    return np.flatnonzero(np.asarray(clicks, dtype=bool))


def pair_positions(positions: np.ndarray, l=UNLIMITED) -> np.ndarray:
    """Greedy pairing over sorted click positions; returns an ``(K, 2)`` array.

    A pending front at ``F`` is dropped once an unclicked round sits ``l``
    or more rounds after it, which is the same as saying the next click is
    farther than ``l`` away.  So only click positions need visiting.
    """
    _check_interval(l)
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size < 2:
        return np.empty((0, 2), dtype=np.int64)
    if l == UNLIMITED:
        k = positions.size // 2
        return positions[: 2 * k].reshape(k, 2)
    l = int(l)
    gaps = np.diff(positions)
    # fast path: every gap fits, so the greedy scan is consecutive pairing
    if gaps.max() <= l:
        k = positions.size // 2
        return positions[: 2 * k].reshape(k, 2)
    out = []
    front = -1
    for pos in positions.tolist():
        if front < 0:
            front = pos
        elif pos - front <= l:
            out.append((front, pos))
            front = -1
        else:
            front = pos
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def pair_adjacent(clicks: Sequence, l=UNLIMITED) -> list[tuple[int, int]]:
    """Pair successive clicks whose distance is at most ``l`` rounds.

    >>> pair_adjacent([1, 0, 1, 1, 0, 1], 2)
    [(0, 2), (3, 5)]
    >>> pair_adjacent([1, 0, 0, 1], 2)
    []
    """
    return [(int(a), int(b)) for a, b in pair_positions(click_positions(clicks), l)]


def pair_leftovers(n_rounds: int, pairs: np.ndarray) -> np.ndarray:
    """Pair every location not used by ``pairs`` in index order.

    Completes the pairing setting over all rounds; a trailing odd location
    stays single.
    """
    used = np.zeros(n_rounds, dtype=bool)
    used[np.asarray(pairs, dtype=np.int64).ravel()] = True
    rest = np.flatnonzero(~used)
    k = rest.size // 2
    return rest[: 2 * k].reshape(k, 2)


def pair_first_in_window(positions: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Pair each click with the first later click whose gap lies in ``[lo, hi)``.

    Clicks may appear in several pairs.  Used to score error rates against
    long pairing lengths where the greedy scan would rarely reach.
    """
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size < 2 or hi <= lo:
        return np.empty((0, 2), dtype=np.int64)
    idx = np.searchsorted(positions, positions + lo, side="left")
    ok = idx < positions.size
    front = positions[ok]
    rear = positions[idx[ok]]
    keep = rear - front < hi
    return np.column_stack([front[keep], rear[keep]])


def expected_intra_gap(p: float, l=UNLIMITED) -> float:
    """Mean distance between the front and rear rounds of a pair."""
    _check_interval(l)
    if p <= 0:
        raise ValueError("click probability must be positive")
    if l == UNLIMITED:
        return 1.0 / p
    return 1.0 / (p * -math.expm1(l * math.log1p(-p))) if p < 1 else 1.0


def pairing_rate_analytic(p: float, l=UNLIMITED) -> float:
    """Expected number of pairs per emitted round, ``r_p(p, l)``.

    >>> round(pairing_rate_analytic(0.5, 1), 6)
    0.166667
    """
    if p < 0 or p > 1:
        raise ValueError("click probability must lie in [0, 1]")
    if p == 0:
        return 0.0
    return 1.0 / (expected_intra_gap(p, l) + 1.0 / p)
