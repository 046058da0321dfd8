"""File formats: timetag stream, counts document, logs, pairs, manifest.

Timetag files are little-endian packed records of (uint64 time_ps,
uint8 channel, uint8 pulse_class, uint32 slot) behind a 16-byte header
(8-byte magic, uint32 version, uint32 reserved). Counts documents are
flat ``key = value`` text keyed like the published tallies
(n_[mu,mu,mu], n_X_[2nu,2nu,2nu], E_Z_AB, E_X, N_pulses) so they diff
cleanly against the source tables.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time as _time
import warnings
from pathlib import Path

import numpy as np

from .events import TIMETAG_DTYPE, EventBlock
from .patterns import parse_pattern_key, pattern_key
from .sifting import CountsTable

TTAG_MAGIC = b"QCC3TTAG"
TTAG_VERSION = 1
_HEADER = struct.Struct("<8sII")


class FormatError(ValueError):
    pass


class MissingPatternKey(KeyError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"counts document lacks required key {key}")


class NonIntegerCount(ValueError):
    def __init__(self, key: str, raw: str):
        self.key = key
        super().__init__(f"count {key} is not a non-negative integer: {raw!r}")


class TimetagWriter:
    """Streaming writer for the binary timetag format."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(TTAG_MAGIC, TTAG_VERSION, 0))
        self.n_records = 0

    def append(self, events: EventBlock):
        rec = np.empty(len(events), dtype=TIMETAG_DTYPE)
        rec["time_ps"] = events.time_ps
        rec["channel"] = events.channel
        rec["pulse_class"] = events.pulse_class
        if events.slot.size and events.slot.max() > np.iinfo(np.uint32).max:
            raise FormatError("slot index exceeds uint32; shorten the run")
        rec["slot"] = events.slot
        rec.tofile(self._fh)
        self.n_records += len(events)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_timetags(path, events: EventBlock):
    with TimetagWriter(path) as w:
        w.append(events)


def read_timetags(path) -> EventBlock:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, _ = _HEADER.unpack(head)
        if magic != TTAG_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != TTAG_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        rec = np.fromfile(fh, dtype=TIMETAG_DTYPE)
    return EventBlock(
        rec["time_ps"].astype(np.int64),
        rec["channel"],
        rec["pulse_class"],
        rec["slot"].astype(np.int64),
    )


def write_records(path, slots, levels, slices):
    np.savez(path, slots=np.asarray(slots, np.int64),
             levels=np.asarray(levels, np.uint8),
             slices=np.asarray(slices, np.uint8))


def read_records(path):
    from .sifting import RecordStore

    with np.load(path) as z:
        return RecordStore(z["slots"], z["levels"], z["slices"])


def write_pairs(path, pair_set):
    np.savez(
        path,
        time_ps=pair_set.time_ps,
        channel=pair_set.channel,
        slot=pair_set.slot,
        pulse_class=pair_set.pulse_class,
    )


def read_pairs(path):
    from .events import PairSet

    with np.load(path) as z:
        return PairSet(z["time_ps"], z["channel"], z["slot"], z["pulse_class"])


# ---------------------------------------------------------------------------
# counts documents

_ERR_KEYS = {"E_Z_AB": ("err_z", "AB"), "E_Z_AC": ("err_z", "AC"), "E_Z_BC": ("err_z", "BC")}
_X_SIFTED_KEY = "n_X_[2nu,2nu,2nu]"


def write_counts(path, table: CountsTable, header: str | None = None):
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for pat in sorted(table.counts):
        lines.append(f"{pattern_key(pat)} = {table.counts[pat]}")
    lines.append(f"{_X_SIFTED_KEY} = {table.n_x_sifted}")
    for lab in ("AB", "AC", "BC"):
        lines.append(f"E_Z_{lab} = {table.err_z[lab]}")
    lines.append(f"E_X = {table.err_x}")
    lines.append(f"N_pulses = {table.n_pulses}")
    Path(path).write_text("\n".join(lines) + "\n")


def ingest_counts(path, required=None) -> CountsTable:
    """Parse and validate a counts document.

    required is an iterable of pattern tuples that must be present
    (defaults to the patterns the finite-key analysis consumes); extra
    keys are ignored with a warning.
    """
    from .finitekey import REQUIRED_PATTERNS

    if required is None:
        required = REQUIRED_PATTERNS
    table = CountsTable()
    path = Path(path)
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{ln}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            count = int(val)
            if count < 0 or str(count) != val:
                raise ValueError
        except ValueError:
            raise NonIntegerCount(key, val) from None
        pat = parse_pattern_key(key)
        if pat is not None:
            table.counts[pat] = count
        elif key == _X_SIFTED_KEY:
            table.n_x_sifted = count
        elif key in _ERR_KEYS:
            table.err_z[_ERR_KEYS[key][1]] = count
        elif key == "E_X":
            table.err_x = count
        elif key == "N_pulses":
            table.n_pulses = count
        else:
            warnings.warn(f"{path}: ignoring unknown key {key!r}", stacklevel=2)
    for pat in required:
        if tuple(pat) not in table.counts:
            raise MissingPatternKey(pattern_key(pat))
    return table.validate()


# ---------------------------------------------------------------------------
# compensation log / ground truth / manifest

def write_compensation_log(path, freq_rows, drift_rows):
    """Delimited-text log: per-block frequency estimates and drift slices.

    freq_rows: (t_start_s, df_ab, df_bc, df_ca, resolution) tuples.
    drift_rows: (t_start_s, theta_min, min_qber) tuples.
    """
    lines = ["# type\tt_start_s\tvalues"]
    for t0, a, b, c, res in freq_rows:
        lines.append(f"freq\t{t0:.6f}\t{a:.3f}\t{b:.3f}\t{c:.3f}\t{res:.3f}")
    for t0, theta, q in drift_rows:
        lines.append(f"drift\t{t0:.6f}\t{theta:.9f}\t{q:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_compensation_log(path):
    freq_rows, drift_rows = [], []
    for raw in Path(path).read_text().splitlines():
        if not raw or raw.startswith("#"):
            continue
        parts = raw.split("\t")
        if parts[0] == "freq":
            freq_rows.append(tuple(float(p) for p in parts[1:6]))
        elif parts[0] == "drift":
            drift_rows.append(tuple(float(p) for p in parts[1:4]))
        else:
            raise FormatError(f"{path}: unknown row type {parts[0]!r}")
    return freq_rows, drift_rows


def write_ground_truth(path, truth):
    lines = ["# t_start_s\tdf_ab\tdf_bc\tdf_ca\tdelta_ab\tdelta_bc\tdelta_ca"]
    for t0, df, delta in truth.rows():
        lines.append(
            f"{t0:.6f}\t" + "\t".join(f"{v:.6f}" for v in df)
            + "\t" + "\t".join(f"{v:.9f}" for v in delta)
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_ground_truth(path):
    from .simulator import GroundTruthLog

    truth = GroundTruthLog()
    for raw in Path(path).read_text().splitlines():
        if not raw or raw.startswith("#"):
            continue
        v = [float(p) for p in raw.split("\t")]
        truth.append(v[0], tuple(v[1:4]), tuple(v[4:7]))
    return truth


def config_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_manifest(path, entries: dict):
    entries = dict(entries)
    entries.setdefault("written_at", _time.strftime("%Y-%m-%dT%H:%M:%S"))
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
