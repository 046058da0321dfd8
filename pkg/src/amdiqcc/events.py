"""Detection events, pulse records and pairing result containers.

Bulk processing works on columnar numpy arrays (one row per event); the
small dataclasses exist for single-event inspection and tests. Channel
numbering is branch*2 + side with branches ordered (AB, BC, CA) and side
0 = L, 1 = R.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BRANCHES = ("AB", "BC", "CA")
SIDES = ("L", "R")
N_BRANCHES = 3

# Users interfering at each branch; the first-listed user enters the
# branch phase difference with positive sign.
BRANCH_USERS = ((0, 1), (1, 2), (2, 0))  # A=0, B=1, C=2
USER_NAMES = ("A", "B", "C")

# Pairing-role table: for every user, the branch whose click slot holds
# the user's late pulse and the branch holding the early pulse. Kept as
# data so the convention can be swapped without touching the sifter.
# The cyclic assignment below makes the two click-consistent signal
# placements of a Z pattern yield identical bits for all users.
USER_LATE_BRANCH = (0, 1, 2)   # A: AB, B: BC, C: CA
USER_EARLY_BRANCH = (2, 0, 1)  # A: CA, B: AB, C: BC

CLASS_REFERENCE = 0
CLASS_QUANTUM = 1

# On-disk record layout of the timetag stream (little endian, packed).
TIMETAG_DTYPE = np.dtype(
    [("time_ps", "<u8"), ("channel", "u1"), ("pulse_class", "u1"), ("slot", "<u4")]
)


def channel_of(branch: int, side: int) -> int:
    return branch * 2 + side


def branch_of(channel) -> int:
    return channel // 2


def side_of(channel) -> int:
    return channel % 2


@dataclass(frozen=True)
class DetectionEvent:
    """A single time-tagged detector click."""

    time_ps: int
    branch: int
    side: int
    pulse_class: int
    slot: int

    def __post_init__(self):
        if self.time_ps < 0:
            raise ValueError("time tag must be non-negative")

    @property
    def channel(self) -> int:
        return channel_of(self.branch, self.side)


@dataclass(frozen=True)
class PulseRecord:
    """Per-user, per-slot emission record."""

    user: int
    slot: int
    level: int  # patterns.LEVEL_*
    phase_slice: int

    def phase(self, M: int) -> float:
        return 2.0 * np.pi * self.phase_slice / M


class EventBlock:
    """Columnar view of a time-sorted stretch of detection events."""

    __slots__ = ("time_ps", "channel", "pulse_class", "slot")

    def __init__(self, time_ps, channel, pulse_class, slot):
        self.time_ps = np.asarray(time_ps, dtype=np.int64)
        self.channel = np.asarray(channel, dtype=np.uint8)
        self.pulse_class = np.asarray(pulse_class, dtype=np.uint8)
        self.slot = np.asarray(slot, dtype=np.int64)

    def __len__(self):
        return self.time_ps.size

    @property
    def branch(self):
        return self.channel >> 1

    @property
    def side(self):
        return self.channel & 1

    def select(self, mask_or_idx) -> "EventBlock":
        return EventBlock(
            self.time_ps[mask_or_idx],
            self.channel[mask_or_idx],
            self.pulse_class[mask_or_idx],
            self.slot[mask_or_idx],
        )

    def of_class(self, pulse_class: int) -> "EventBlock":
        return self.select(self.pulse_class == pulse_class)

    @classmethod
    def concatenate(cls, blocks) -> "EventBlock":
        return cls(
            np.concatenate([b.time_ps for b in blocks]) if blocks else np.empty(0, np.int64),
            np.concatenate([b.channel for b in blocks]) if blocks else np.empty(0, np.uint8),
            np.concatenate([b.pulse_class for b in blocks]) if blocks else np.empty(0, np.uint8),
            np.concatenate([b.slot for b in blocks]) if blocks else np.empty(0, np.int64),
        )


class PairSet:
    """Multibranch pairing result: one event per branch per row.

    Columns are ordered by branch (AB, BC, CA) regardless of click order;
    anchor_time/span describe the row's temporal extent.
    """

    __slots__ = ("time_ps", "channel", "slot", "pulse_class")

    def __init__(self, time_ps, channel, slot, pulse_class):
        self.time_ps = np.asarray(time_ps, dtype=np.int64).reshape(-1, N_BRANCHES)
        self.channel = np.asarray(channel, dtype=np.uint8).reshape(-1, N_BRANCHES)
        self.slot = np.asarray(slot, dtype=np.int64).reshape(-1, N_BRANCHES)
        self.pulse_class = np.asarray(pulse_class, dtype=np.uint8).reshape(-1)

    def __len__(self):
        return self.pulse_class.size

    @property
    def anchor_time(self):
        return self.time_ps.min(axis=1)

    @property
    def span_ps(self):
        return self.time_ps.max(axis=1) - self.time_ps.min(axis=1)

    @property
    def side(self):
        return self.channel & 1

    @classmethod
    def from_events(cls, events: EventBlock, index_rows) -> "PairSet":
        """Build from pairing-index rows (n, 3) ordered by branch."""
        idx = np.asarray(index_rows, dtype=np.int64).reshape(-1, N_BRANCHES)
        if idx.size == 0:
            return cls(
                np.empty((0, N_BRANCHES), np.int64),
                np.empty((0, N_BRANCHES), np.uint8),
                np.empty((0, N_BRANCHES), np.int64),
                np.empty(0, np.uint8),
            )
        return cls(
            events.time_ps[idx],
            events.channel[idx],
            events.slot[idx],
            events.pulse_class[idx[:, 0]],
        )

    @classmethod
    def concatenate(cls, sets) -> "PairSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls(
                np.empty((0, N_BRANCHES), np.int64),
                np.empty((0, N_BRANCHES), np.uint8),
                np.empty((0, N_BRANCHES), np.int64),
                np.empty(0, np.uint8),
            )
        return cls(
            np.concatenate([s.time_ps for s in sets]),
            np.concatenate([s.channel for s in sets]),
            np.concatenate([s.slot for s in sets]),
            np.concatenate([s.pulse_class for s in sets]),
        )


@dataclass(frozen=True)
class PairEvent:
    """Scalar view of one multibranch pair (for inspection and tests)."""

    events: tuple  # one DetectionEvent per branch, branch order
    anchor_time: int
    span: int


@dataclass(frozen=True)
class TwoChannelPair:
    """Two clicks on the same branch used for frequency estimation."""

    early: DetectionEvent
    late: DetectionEvent

    def __post_init__(self):
        if self.late.time_ps <= self.early.time_ps:
            raise ValueError("late click must follow early click")

    @property
    def interval_ps(self) -> int:
        return self.late.time_ps - self.early.time_ps
