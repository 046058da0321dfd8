import numpy as np
import pytest

from amdiqcc import io
from amdiqcc.events import EventBlock, PairSet
from amdiqcc.finitekey import REQUIRED_PATTERNS
from amdiqcc.sifting import CountsTable
from amdiqcc.simulator import GroundTruthLog

from conftest import fixture_counts_path


def _events(rng, n=500):
    return EventBlock(
        np.sort(rng.integers(0, 10**12, size=n)),
        rng.integers(0, 6, size=n).astype(np.uint8),
        rng.integers(0, 2, size=n).astype(np.uint8),
        rng.integers(0, 2**31, size=n),
    )


def test_timetag_roundtrip(tmp_path, rng):
    events = _events(rng)
    path = tmp_path / "t.bin"
    io.write_timetags(path, events)
    back = io.read_timetags(path)
    for f in ("time_ps", "channel", "pulse_class", "slot"):
        assert np.array_equal(getattr(events, f), getattr(back, f))
    # 16-byte header + 14-byte packed records
    assert path.stat().st_size == 16 + 14 * len(events)


def test_timetag_streaming_append(tmp_path, rng):
    path = tmp_path / "t.bin"
    first, second = _events(rng, 100), _events(rng, 50)
    with io.TimetagWriter(path) as w:
        w.append(first)
        w.append(second)
        assert w.n_records == 150
    assert len(io.read_timetags(path)) == 150


def test_timetag_bad_magic(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 8)
    with pytest.raises(io.FormatError):
        io.read_timetags(path)


def test_timetag_truncated_header(tmp_path):
    path = tmp_path / "t.bin"
    path.write_bytes(b"QCC")
    with pytest.raises(io.FormatError):
        io.read_timetags(path)


def test_records_roundtrip(tmp_path, rng):
    slots = np.sort(rng.choice(10**6, size=300, replace=False))
    levels = rng.integers(0, 4, size=(3, 300)).astype(np.uint8)
    slices = rng.integers(0, 16, size=(3, 300)).astype(np.uint8)
    path = tmp_path / "r.npz"
    io.write_records(path, slots, levels, slices)
    store = io.read_records(path)
    assert np.array_equal(store.slots, slots)
    assert np.array_equal(store.levels, levels)
    assert np.array_equal(store.slices, slices)


def test_pairs_roundtrip(tmp_path, rng):
    n = 40
    pairs = PairSet(
        np.sort(rng.integers(0, 10**10, size=(n, 3)), axis=1),
        (np.arange(3, dtype=np.uint8)[None, :] * 2).repeat(n, axis=0),
        rng.integers(0, 10**6, size=(n, 3)),
        np.ones(n, dtype=np.uint8),
    )
    path = tmp_path / "p.npz"
    io.write_pairs(path, pairs)
    back = io.read_pairs(path)
    assert np.array_equal(pairs.time_ps, back.time_ps)
    assert np.array_equal(pairs.channel, back.channel)


def test_counts_roundtrip(tmp_path):
    table = io.ingest_counts(fixture_counts_path("39p3"))
    path = tmp_path / "c.counts"
    io.write_counts(path, table, header="roundtrip check")
    back = io.ingest_counts(path)
    assert back.counts == table.counts
    assert back.err_z == table.err_z
    assert back.err_x == table.err_x
    assert back.n_x_sifted == table.n_x_sifted
    assert back.n_pulses == table.n_pulses


def test_counts_fixture_values():
    table = io.ingest_counts(fixture_counts_path("39p3"))
    assert table.n(("mu", "mu", "mu")) == 4536856
    assert table.n(("2nu", "2nu", "2nu")) == 7740134
    assert table.n_x_sifted == 967876
    assert table.err_z["AB"] == 7778


def test_counts_missing_pattern(tmp_path):
    src = fixture_counts_path("39p3").read_text()
    out = "\n".join(l for l in src.splitlines() if not l.startswith("n_[o,o,o]"))
    path = tmp_path / "broken.counts"
    path.write_text(out)
    with pytest.raises(io.MissingPatternKey) as err:
        io.ingest_counts(path)
    assert "n_[o,o,o]" in str(err.value)


def test_counts_negative_rejected(tmp_path):
    path = tmp_path / "neg.counts"
    path.write_text("n_[mu,mu,mu] = -5\n")
    with pytest.raises(io.NonIntegerCount):
        io.ingest_counts(path, required=())


def test_counts_non_integer_rejected(tmp_path):
    path = tmp_path / "f.counts"
    path.write_text("n_[mu,mu,mu] = 3.5\n")
    with pytest.raises(io.NonIntegerCount):
        io.ingest_counts(path, required=())


def test_counts_unknown_key_warns(tmp_path):
    path = tmp_path / "u.counts"
    path.write_text("n_[mu,mu,mu] = 5\nmystery = 1\n")
    with pytest.warns(UserWarning, match="mystery"):
        io.ingest_counts(path, required=[("mu", "mu", "mu")])


def test_counts_inconsistent_errors_rejected(tmp_path):
    path = tmp_path / "bad.counts"
    lines = ["n_[mu,mu,mu] = 10", "E_Z_AB = 11"]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError):
        io.ingest_counts(path, required=[("mu", "mu", "mu")])


def test_compensation_log_roundtrip(tmp_path):
    path = tmp_path / "comp.tsv"
    freq = [(0.0, 1e6, -2e6, 1e6, 5e4), (0.4, 1.1e6, -2.2e6, 1.1e6, 5e4)]
    drift = [(0.0, 0.785398163, 0.41)]
    io.write_compensation_log(path, freq, drift)
    f2, d2 = io.read_compensation_log(path)
    assert len(f2) == 2 and len(d2) == 1
    assert f2[0][1] == pytest.approx(1e6)
    assert d2[0][1] == pytest.approx(0.785398163, abs=1e-9)


def test_ground_truth_roundtrip(tmp_path):
    truth = GroundTruthLog()
    truth.append(0.0, (1e6, -3e6, 2e6), (0.1, 0.2, 0.3))
    truth.append(0.4, (1e6, -3e6, 2e6), (0.15, 0.2, 0.3))
    path = tmp_path / "truth.tsv"
    io.write_ground_truth(path, truth)
    back = io.read_ground_truth(path)
    assert back.t_start == truth.t_start
    assert back.df[0] == pytest.approx(truth.df[0])


def test_manifest_roundtrip(tmp_path):
    path = tmp_path / "m.json"
    io.write_manifest(path, {"seed": 7, "stages": ["analyze"]})
    back = io.read_manifest(path)
    assert back["seed"] == 7
    assert "written_at" in back


def test_required_patterns_all_present_in_fixtures():
    for tag in ("39p3", "48p6", "59p6"):
        table = io.ingest_counts(fixture_counts_path(tag))
        for pat in REQUIRED_PATTERNS:
            assert tuple(pat) in table.counts
