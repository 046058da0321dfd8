"""Greedy nearest-neighbor pairing of single-click events.

Two implementations of the multibranch pairing coexist: a line-by-line
pure-Python transcription of the published register algorithm, which is
the behavioral contract, and a numba-compiled version for bulk streams.
The test suite checks them for exact agreement on randomized inputs.

Semantics (shared by both):

* an anchor event opens a per-branch register;
* later events on unfilled branches within t_max of the anchor fill it,
  and the earliest such filler index is remembered (k_pairing);
* an event on an already-filled branch within the window is remembered
  as the earliest unpaired restart candidate (k_unpairing);
* when all branches fill, the pair is emitted, its events are consumed,
  and scanning restarts at min(next index, k_unpairing);
* on window expiry the scan restarts at min(k_pairing, k_unpairing), or
  at anchor+1 if the register held only the anchor;
* an incomplete register at end of stream is discarded.

Consumed events never re-enter a register, so no event appears in two
pairs. Ties in time are processed in input order; callers must sort by
(time, channel) so equal tags resolve by channel id.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .events import N_BRANCHES


class UnsortedInput(ValueError):
    """Event stream is not sorted by time tag."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"time tags decrease at event index {index}")


class EmptyInput(ValueError):
    pass


def _check_sorted(time_ps: np.ndarray):
    if time_ps.size < 2:
        return
    bad = np.nonzero(np.diff(time_ps) < 0)[0]
    if bad.size:
        raise UnsortedInput(int(bad[0]) + 1)


def pair_events_reference(time_ps, branch, t_max_ps: int, n_branches: int = N_BRANCHES):
    """Literal transcription of the register pairing algorithm.

    Returns a list of index tuples, each ordered by branch id. Quadratic
    bookkeeping is fine here; this function is the contract oracle, not
    the production path.
    """
    time_ps = np.asarray(time_ps, dtype=np.int64)
    branch = np.asarray(branch, dtype=np.int64)
    _check_sorted(time_ps)
    n = time_ps.size
    pairs = []
    consumed = np.zeros(n, dtype=bool)
    k_start = 0
    while k_start < n - 2:
        if consumed[k_start]:
            k_start += 1
            continue
        register = [-1] * n_branches
        k_pairing = n
        k_unpairing = n
        n_temp = 0
        t_start = 0
        restart = -1
        j = k_start
        while j < n:
            if consumed[j]:
                j += 1
                continue
            b = branch[j]
            if j == k_start:
                register[b] = j
                t_start = time_ps[j]
                n_temp = 1
            elif register[b] < 0:
                if time_ps[j] - t_start <= t_max_ps:
                    register[b] = j
                    k_pairing = min(k_pairing, j)
                    n_temp += 1
                    if n_temp == n_branches:
                        pairs.append(tuple(register))
                        for idx in register:
                            consumed[idx] = True
                        restart = min(j + 1, k_unpairing)
                        break
                else:
                    restart = k_start + 1 if n_temp == 1 else min(k_pairing, k_unpairing)
                    break
            else:
                if time_ps[j] - t_start <= t_max_ps:
                    k_unpairing = min(k_unpairing, j)
                else:
                    restart = k_start + 1 if n_temp == 1 else min(k_pairing, k_unpairing)
                    break
            j += 1
        if restart < 0:
            break  # stream exhausted; discard the incomplete register
        k_start = restart
    return pairs


@njit(cache=True)
def _pair_multibranch_kernel(time_ps, branch, t_max_ps, n_branches):  # pragma: no cover
    n = time_ps.size
    out = np.empty((n // n_branches + 1, n_branches), dtype=np.int64)
    n_pairs = 0
    consumed = np.zeros(n, dtype=np.bool_)
    register = np.empty(n_branches, dtype=np.int64)
    k_start = 0
    while k_start < n - 2:
        if consumed[k_start]:
            k_start += 1
            continue
        for b in range(n_branches):
            register[b] = -1
        k_pairing = n
        k_unpairing = n
        n_temp = 0
        t_start = 0
        restart = -1
        j = k_start
        while j < n:
            if consumed[j]:
                j += 1
                continue
            b = branch[j]
            if j == k_start:
                register[b] = j
                t_start = time_ps[j]
                n_temp = 1
            elif register[b] < 0:
                if time_ps[j] - t_start <= t_max_ps:
                    register[b] = j
                    if j < k_pairing:
                        k_pairing = j
                    n_temp += 1
                    if n_temp == n_branches:
                        for b2 in range(n_branches):
                            out[n_pairs, b2] = register[b2]
                            consumed[register[b2]] = True
                        n_pairs += 1
                        restart = min(j + 1, k_unpairing)
                        break
                else:
                    restart = k_start + 1 if n_temp == 1 else min(k_pairing, k_unpairing)
                    break
            else:
                if time_ps[j] - t_start <= t_max_ps:
                    if j < k_unpairing:
                        k_unpairing = j
                else:
                    restart = k_start + 1 if n_temp == 1 else min(k_pairing, k_unpairing)
                    break
            j += 1
        if restart < 0:
            break
        k_start = restart
    return out[:n_pairs]


def pair_events_multibranch(time_ps, branch, t_max_ps: int,
                            n_branches: int = N_BRANCHES) -> np.ndarray:
    """Pair a time-sorted single-click stream across all branches.

    Returns an (n_pairs, n_branches) array of event indices, each row
    ordered by branch id. t_max_ps is the maximum anchor-to-last spacing.
    """
    time_ps = np.ascontiguousarray(time_ps, dtype=np.int64)
    branch = np.ascontiguousarray(branch, dtype=np.int64)
    _check_sorted(time_ps)
    if time_ps.size < n_branches:
        return np.empty((0, n_branches), dtype=np.int64)
    return _pair_multibranch_kernel(time_ps, branch, np.int64(t_max_ps), n_branches)


@njit(cache=True)
def _pair_single_branch_kernel(time_ps, window_ps):  # pragma: no cover
    n = time_ps.size
    out = np.empty((n // 2, 2), dtype=np.int64)
    n_pairs = 0
    i = 0
    while i + 1 < n:
        if time_ps[i + 1] - time_ps[i] <= window_ps:
            out[n_pairs, 0] = i
            out[n_pairs, 1] = i + 1
            n_pairs += 1
            i += 2
        else:
            i += 1
    return out[:n_pairs]


def pair_events_single_branch(time_ps, window_ps: int) -> np.ndarray:
    """Consecutive-click greedy pairing on one branch.

    Each unpaired click pairs with the next click if it falls within the
    window; otherwise the click is skipped. Returns (n_pairs, 2) index
    rows (early, late).
    """
    time_ps = np.ascontiguousarray(time_ps, dtype=np.int64)
    _check_sorted(time_ps)
    if time_ps.size < 2:
        return np.empty((0, 2), dtype=np.int64)
    return _pair_single_branch_kernel(time_ps, np.int64(window_ps))


def interval_histogram(span_ps, bin_width_ps: int):
    """Histogram of pairing intervals plus their mean.

    Returns (counts, bin_edges_ps, mean_ps).
    """
    span_ps = np.asarray(span_ps, dtype=np.int64)
    if span_ps.size == 0:
        raise EmptyInput("no pairs to histogram")
    top = int(span_ps.max()) + bin_width_ps
    edges = np.arange(0, top + bin_width_ps, bin_width_ps, dtype=np.int64)
    counts, _ = np.histogram(span_ps, bins=edges)
    return counts, edges, float(span_ps.mean())
