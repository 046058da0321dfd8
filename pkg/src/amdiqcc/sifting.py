"""Key mapping: pairs + emission records -> bases, bits, errors, counts.

Basis rules (with-filter scheme):

* Z basis: pattern [mu,mu,mu] only. A user's bit is 0 when the signal
  pulse sits in the early role and 1 in the late role; pairwise errors
  compare bits between user pairs.
* X basis: pattern [2nu,2nu,2nu] whose compensated total phase falls in
  one of the two filter windows. The error flag is the detector-side
  parity XORed with the window parity.

The early/late role of a click is fixed per user by the branch role
table in events.py, not by raw time order; that table is the data-level
encoding of the pulse-pairing correspondence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .events import (
    N_BRANCHES,
    USER_EARLY_BRANCH,
    USER_LATE_BRANCH,
    PairSet,
)
from .params import ProtocolParams
from .patterns import (
    LEVEL_MU,
    LEVEL_O,
    TOTAL_CODE,
    TOTAL_LABELS,
    pattern_key,
)


class MissingRecord(KeyError):
    def __init__(self, slot: int, user: int):
        self.slot = slot
        self.user = user
        super().__init__(f"no pulse record for user {user} slot {slot}")


class UndefinedQber(ZeroDivisionError):
    pass


@dataclass
class CountsTable:
    """Tallies feeding the finite-key analysis.

    counts maps intensity-pattern tuples to pair counts; err_z holds the
    pairwise Z error counts keyed AB/AC/BC; n_x_sifted and err_x are the
    X-basis post-filter tallies; n_pulses is the total number of quantum
    pulses emitted per user.
    """

    counts: dict = field(default_factory=dict)
    n_x_sifted: int = 0
    err_z: dict = field(default_factory=lambda: {"AB": 0, "AC": 0, "BC": 0})
    err_x: int = 0
    n_pulses: int = 0

    def n(self, pattern) -> int:
        key = tuple(pattern)
        if key not in self.counts:
            raise KeyError(pattern_key(key))
        return self.counts[key]

    def ensure_patterns(self, patterns) -> "CountsTable":
        """Add zero rows for patterns that never occurred."""
        for pat in patterns:
            self.counts.setdefault(tuple(pat), 0)
        return self

    def total_pairs(self) -> int:
        return sum(self.counts.values())

    def validate(self):
        for pat, c in self.counts.items():
            if c < 0:
                raise ValueError(f"negative count for {pattern_key(pat)}")
        n_z = self.counts.get(("mu", "mu", "mu"), 0)
        for k, e in self.err_z.items():
            if not 0 <= e <= n_z:
                raise ValueError(f"E_Z_{k} = {e} outside [0, n_Z = {n_z}]")
        n_xxx = self.counts.get(("2nu", "2nu", "2nu"), 0)
        if not 0 <= self.n_x_sifted <= n_xxx:
            raise ValueError("X-sifted count exceeds the [2nu,2nu,2nu] count")
        if not 0 <= self.err_x <= self.n_x_sifted:
            raise ValueError("E_X exceeds the X-sifted count")
        return self

    def qber_z(self) -> tuple[float, float, float]:
        n_z = self.counts.get(("mu", "mu", "mu"), 0)
        if n_z == 0:
            raise UndefinedQber("no Z-basis pairs")
        return tuple(self.err_z[k] / n_z for k in ("AB", "AC", "BC"))

    def qber_x(self) -> float:
        if self.n_x_sifted == 0:
            raise UndefinedQber("no X-sifted pairs")
        return self.err_x / self.n_x_sifted

    def merge(self, other: "CountsTable") -> "CountsTable":
        for pat, c in other.counts.items():
            self.counts[pat] = self.counts.get(pat, 0) + c
        self.n_x_sifted += other.n_x_sifted
        for k in self.err_z:
            self.err_z[k] += other.err_z[k]
        self.err_x += other.err_x
        self.n_pulses += other.n_pulses
        return self


def qber(counts: CountsTable):
    """Exact QBER ratios (e_AB, e_AC, e_BC, e_X)."""
    return (*counts.qber_z(), counts.qber_x())


def z_bit(k_early: int, k_late: int):
    """Z-basis bit from a (early, late) level pair; None off the mu ladder."""
    if k_early == LEVEL_MU and k_late == LEVEL_O:
        return 0
    if k_early == LEVEL_O and k_late == LEVEL_MU:
        return 1
    return None


def x_error_flag(r1: int, r2: int, r3: int, theta_parity: int) -> int:
    """1 when the detector-side parity contradicts the window parity."""
    return r1 ^ r2 ^ r3 ^ theta_parity


def _circ_dist(phi, target):
    d = np.mod(phi - target, 2.0 * np.pi)
    return np.minimum(d, 2.0 * np.pi - d)


def x_phase_filter(sum_theta, theta_df, theta_min, M: int):
    """Two-window phase filter with half-slice tolerance.

    Returns (accept, parity): accept with parity 0 when the compensated
    phase lands within pi/M of theta_min, parity 1 within pi/M of
    theta_min + pi. All phase arguments may be scalars or per-pair
    arrays; parity is meaningless where accept is False.
    """
    phi = np.mod(np.asarray(sum_theta, dtype=float) + theta_df, 2.0 * np.pi)
    tol = math.pi / M
    t0 = np.asarray(theta_min, dtype=float)
    d0 = _circ_dist(phi, t0)
    d1 = _circ_dist(phi, t0 + math.pi)
    accept = (d0 <= tol) | (d1 <= tol)
    parity = (d1 < d0).astype(np.int8)
    return accept, parity


class RecordStore:
    """Per-user emission records addressable by grid slot.

    Slots may be stored sparsely (only slots that produced events); the
    lookup raises MissingRecord for unknown slots.
    """

    def __init__(self, slots, levels, slices):
        self.slots = np.asarray(slots, dtype=np.int64)
        self.levels = np.asarray(levels, dtype=np.uint8)
        self.slices = np.asarray(slices, dtype=np.uint8)
        if self.levels.shape != (3, self.slots.size) or self.slices.shape != (3, self.slots.size):
            raise ValueError("levels/slices must have shape (3, n_slots)")
        if self.slots.size and np.any(np.diff(self.slots) <= 0):
            raise ValueError("record slots must be strictly increasing")

    def __len__(self):
        return self.slots.size

    def lookup(self, slot_rows: np.ndarray) -> np.ndarray:
        """Map slot numbers to record indices; raises MissingRecord."""
        idx = np.searchsorted(self.slots, slot_rows)
        bad = (idx >= self.slots.size) | (self.slots[np.minimum(idx, self.slots.size - 1)] != slot_rows)
        if np.any(bad):
            where = np.argwhere(bad)[0]
            slot = int(np.asarray(slot_rows)[tuple(where)])
            raise MissingRecord(slot, -1)
        return idx

    def level_at(self, user: int, slot_rows) -> np.ndarray:
        return self.levels[user, self.lookup(np.asarray(slot_rows, dtype=np.int64))]

    def slice_at(self, user: int, slot_rows) -> np.ndarray:
        return self.slices[user, self.lookup(np.asarray(slot_rows, dtype=np.int64))]


def _user_roles(pairs: PairSet, records: RecordStore, user: int):
    """(early, late) level codes and slices for one user across pairs."""
    s_late = pairs.slot[:, USER_LATE_BRANCH[user]]
    s_early = pairs.slot[:, USER_EARLY_BRANCH[user]]
    lv_late = records.level_at(user, s_late)
    lv_early = records.level_at(user, s_early)
    sl_late = records.slice_at(user, s_late)
    sl_early = records.slice_at(user, s_early)
    return lv_early, lv_late, sl_early, sl_late


def pattern_codes(pairs: PairSet, records: RecordStore) -> np.ndarray:
    """Per-pair per-user k_tot label codes, shape (n_pairs, 3)."""
    n = len(pairs)
    codes = np.empty((n, 3), dtype=np.uint8)
    table = np.asarray(TOTAL_CODE, dtype=np.uint8)
    for u in range(3):
        lv_early, lv_late, _, _ = _user_roles(pairs, records, u)
        codes[:, u] = table[lv_early, lv_late]
        if np.any(codes[:, u] == 255):
            raise ValueError("unclassifiable level pair in records")
    return codes


def sum_encoded_phase(pairs: PairSet, records: RecordStore, M: int) -> np.ndarray:
    """Total encoded phase difference (late minus early role) per pair."""
    step = 2.0 * math.pi / M
    total = np.zeros(len(pairs), dtype=float)
    for u in range(3):
        _, _, sl_early, sl_late = _user_roles(pairs, records, u)
        total += step * (sl_late.astype(float) - sl_early.astype(float))
    return np.mod(total, 2.0 * math.pi)


@dataclass
class SiftedPairs:
    """Arrays describing the sifted subsets of one classify pass."""

    pattern: np.ndarray  # (n, 3) label codes
    z_mask: np.ndarray
    z_bits: np.ndarray  # (n, 3), valid where z_mask
    z_err: dict  # pair label -> bool array over z pairs
    x_mask: np.ndarray  # accepted X pairs
    x_err: np.ndarray  # bool over x pairs


def classify_and_tally(pairs: PairSet, records: RecordStore, params: ProtocolParams,
                       theta_df=0.0, theta_min=0.0,
                       n_pulses: int = 0) -> tuple[SiftedPairs, CountsTable]:
    """Classify every pair into its pattern and tally basis statistics.

    theta_df may be a scalar or a per-pair array of frequency-difference
    compensation phases; theta_min likewise (per-pair resolved drift).
    Every pair lands in exactly one pattern count.
    """
    n = len(pairs)
    codes = pattern_codes(pairs, records)
    table = CountsTable(n_pulses=n_pulses)
    if n == 0:
        empty = np.empty(0, dtype=bool)
        return SiftedPairs(codes, empty, np.empty((0, 3), np.int8), {}, empty, empty), table

    # pattern tallies over every pair
    label_idx = {lab: i for i, lab in enumerate(TOTAL_LABELS)}
    mu_code = label_idx["mu"]
    x_code = label_idx["2nu"]
    flat = (codes[:, 0].astype(np.int64) * 49 + codes[:, 1].astype(np.int64) * 7
            + codes[:, 2].astype(np.int64))
    uniq, cnt = np.unique(flat, return_counts=True)
    for f, c in zip(uniq, cnt):
        pat = (TOTAL_LABELS[f // 49], TOTAL_LABELS[(f // 7) % 7], TOTAL_LABELS[f % 7])
        table.counts[pat] = table.counts.get(pat, 0) + int(c)

    # Z basis: [mu,mu,mu]; bit = 1 when the signal pulse took the late role
    z_mask = np.all(codes == mu_code, axis=1)
    z_bits = np.zeros((n, 3), dtype=np.int8)
    for u in range(3):
        lv_early, lv_late, _, _ = _user_roles(pairs, records, u)
        z_bits[:, u] = (lv_late == LEVEL_MU).astype(np.int8)
    z_err = {}
    pairs_zm = z_bits[z_mask]
    for lab, (i, j) in (("AB", (0, 1)), ("AC", (0, 2)), ("BC", (1, 2))):
        err = pairs_zm[:, i] != pairs_zm[:, j]
        if not params.ghz_matching:
            err = ~err
        z_err[lab] = err
        table.err_z[lab] = int(err.sum())

    # X basis: [2nu,2nu,2nu] plus the phase filter
    x_candidate = np.all(codes == x_code, axis=1)
    sum_theta = sum_encoded_phase(pairs, records, params.M)
    accept, parity = x_phase_filter(sum_theta, theta_df, theta_min, params.M)
    x_mask = x_candidate & accept
    sides = pairs.side
    r = sides if params.left_detector_bit == 0 else 1 - sides
    side_parity = (r[:, 0] ^ r[:, 1] ^ r[:, 2]).astype(np.int8)
    x_err = (side_parity[x_mask] ^ parity[x_mask]) == 1
    table.n_x_sifted = int(x_mask.sum())
    table.err_x = int(x_err.sum())
    return SiftedPairs(codes, z_mask, z_bits, z_err, x_mask, x_err), table


def reference_phase_samples(pairs: PairSet, records: RecordStore,
                            params: ProtocolParams, theta_df=0.0):
    """Compensated phase and side-parity error bit for reference pairs.

    The reference stream is intensity-homogeneous, so every pair is kept
    (no pattern gate, no window): error rule is bare detector-side
    parity, giving the QBER-versus-phase curve that the drift estimator
    scans.
    """
    phi = np.mod(sum_encoded_phase(pairs, records, params.M) + theta_df, 2.0 * math.pi)
    sides = pairs.side
    r = sides if params.left_detector_bit == 0 else 1 - sides
    err = (r[:, 0] ^ r[:, 1] ^ r[:, 2]).astype(np.int8)
    return phi, err
