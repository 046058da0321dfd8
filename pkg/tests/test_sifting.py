import itertools
import math

import numpy as np
import pytest

from amdiqcc.events import PairSet
from amdiqcc.params import ProtocolParams
from amdiqcc.patterns import LEVEL_MU, LEVEL_NU, LEVEL_O
from amdiqcc.sifting import (
    CountsTable,
    MissingRecord,
    RecordStore,
    UndefinedQber,
    classify_and_tally,
    qber,
    reference_phase_samples,
    x_error_flag,
    x_phase_filter,
    z_bit,
)


def test_z_bit_mapping():
    assert z_bit(LEVEL_MU, LEVEL_O) == 0
    assert z_bit(LEVEL_O, LEVEL_MU) == 1
    assert z_bit(LEVEL_NU, LEVEL_NU) is None
    assert z_bit(LEVEL_MU, LEVEL_MU) is None


def test_x_error_flag_truth_table():
    assert x_error_flag(0, 0, 0, 0) == 0
    assert x_error_flag(1, 0, 0, 0) == 1
    assert x_error_flag(1, 1, 1, 1) == 0
    for r1, r2, r3, p in itertools.product((0, 1), repeat=4):
        assert x_error_flag(r1, r2, r3, p) == (r1 + r2 + r3 + p) % 2


def test_x_error_flag_two_flip_invariance():
    for r1, r2, r3, p in itertools.product((0, 1), repeat=4):
        base = x_error_flag(r1, r2, r3, p)
        assert x_error_flag(1 - r1, 1 - r2, r3, p) == base
        assert x_error_flag(r1, 1 - r2, 1 - r3, p) == base
        assert x_error_flag(1 - r1, r2, 1 - r3, p) == base


def test_x_phase_filter_centers():
    theta_min = 2 * math.pi * 3 / 16
    accept, parity = x_phase_filter(theta_min, 0.0, theta_min, 16)
    assert bool(accept) and parity == 0
    accept, parity = x_phase_filter(theta_min + math.pi, 0.0, theta_min, 16)
    assert bool(accept) and parity == 1
    accept, _ = x_phase_filter(theta_min + math.pi / 2, 0.0, theta_min, 16)
    assert not bool(accept)


def test_x_phase_filter_boundary_inclusive():
    accept, _ = x_phase_filter(math.pi / 16, 0.0, 0.0, 16)
    assert bool(accept)


def test_x_phase_filter_uniform_acceptance(rng):
    # two windows of width 2 pi / M: acceptance 2/M = 1/8 for M = 16
    n = 1_000_000
    phi = rng.uniform(0, 2 * math.pi, n)
    accept, _ = x_phase_filter(phi, 0.0, 2 * math.pi * 5 / 16, 16)
    p_hat = accept.mean()
    sigma = math.sqrt(0.125 * 0.875 / n)
    assert abs(p_hat - 0.125) < 5 * sigma


# ---------------------------------------------------------------------------
# classify_and_tally on hand-built pairs

PERIOD_PS = 4000


def _build(records_spec, pair_slots, sides=None, params=None):
    """records_spec: {slot: ((lvl_a, sl_a), (lvl_b, sl_b), (lvl_c, sl_c))}."""
    slots = np.array(sorted(records_spec), dtype=np.int64)
    levels = np.zeros((3, slots.size), dtype=np.uint8)
    slices = np.zeros((3, slots.size), dtype=np.uint8)
    for k, slot in enumerate(slots):
        for u in range(3):
            levels[u, k], slices[u, k] = records_spec[slot][u]
    store = RecordStore(slots, levels, slices)
    pair_slots = np.asarray(pair_slots, dtype=np.int64)
    n = pair_slots.shape[0]
    time_ps = pair_slots * PERIOD_PS + PERIOD_PS // 2
    if sides is None:
        sides = np.zeros((n, 3), dtype=np.uint8)
    channel = (np.arange(3, dtype=np.uint8)[None, :] * 2
               + np.asarray(sides, dtype=np.uint8))
    pairs = PairSet(time_ps, channel, pair_slots, np.ones(n, dtype=np.uint8))
    return pairs, store


def test_z_pattern_and_matching_bits(params):
    # all three users place the signal pulse in the late role -> bits (1,1,1)
    spec = {
        10: ((LEVEL_MU, 0), (LEVEL_O, 0), (LEVEL_O, 0)),   # slot at branch AB
        20: ((LEVEL_O, 0), (LEVEL_MU, 0), (LEVEL_O, 0)),   # slot at branch BC
        30: ((LEVEL_O, 0), (LEVEL_O, 0), (LEVEL_MU, 0)),   # slot at branch CA
    }
    pairs, store = _build(spec, [[10, 20, 30]])
    sifted, table = classify_and_tally(pairs, store, params)
    assert table.counts == {("mu", "mu", "mu"): 1}
    assert sifted.z_mask.all()
    assert sifted.z_bits[0].tolist() == [1, 1, 1]
    assert table.err_z == {"AB": 0, "AC": 0, "BC": 0}


def test_z_bit_error_counted_pairwise(params):
    # user C holds its signal pulse in the early role -> bit 0, errors vs A and B
    spec = {
        10: ((LEVEL_MU, 0), (LEVEL_O, 0), (LEVEL_O, 0)),
        20: ((LEVEL_O, 0), (LEVEL_MU, 0), (LEVEL_MU, 0)),  # C early role is BC slot
        30: ((LEVEL_O, 0), (LEVEL_O, 0), (LEVEL_O, 0)),
    }
    pairs, store = _build(spec, [[10, 20, 30]])
    sifted, table = classify_and_tally(pairs, store, params)
    assert sifted.z_bits[0].tolist() == [1, 1, 0]
    assert table.err_z == {"AB": 0, "AC": 1, "BC": 1}


def test_ghz_sign_flag_flips_errors(params):
    spec = {
        10: ((LEVEL_MU, 0), (LEVEL_O, 0), (LEVEL_O, 0)),
        20: ((LEVEL_O, 0), (LEVEL_MU, 0), (LEVEL_MU, 0)),
        30: ((LEVEL_O, 0), (LEVEL_O, 0), (LEVEL_O, 0)),
    }
    anti = ProtocolParams(ghz_matching=False)
    pairs, store = _build(spec, [[10, 20, 30]])
    _, table = classify_and_tally(pairs, store, anti)
    assert table.err_z == {"AB": 1, "AC": 0, "BC": 0}


def test_decoy_pattern_tally_only(params):
    spec = {
        10: ((LEVEL_MU, 0), (LEVEL_NU, 0), (LEVEL_O, 0)),
        20: ((LEVEL_O, 0), (LEVEL_NU, 0), (LEVEL_NU, 0)),
        30: ((LEVEL_O, 0), (LEVEL_O, 0), (LEVEL_NU, 0)),
    }
    pairs, store = _build(spec, [[10, 20, 30]])
    sifted, table = classify_and_tally(pairs, store, params)
    # A: (early CA=o, late AB=mu) -> mu; B: (early AB=nu, late BC=nu) -> 2nu
    # C: (early BC=nu, late CA=nu) -> 2nu
    assert table.counts == {("mu", "2nu", "2nu"): 1}
    assert not sifted.z_mask.any()
    assert table.n_x_sifted == 0


def test_x_pattern_accept_and_error(params):
    # all six pulses decoy level; slices chosen so sum_theta = 0 -> parity 0
    spec = {
        10: ((LEVEL_NU, 3), (LEVEL_NU, 7), (LEVEL_NU, 2)),
        20: ((LEVEL_NU, 1), (LEVEL_NU, 7), (LEVEL_NU, 9)),
        30: ((LEVEL_NU, 3), (LEVEL_NU, 4), (LEVEL_NU, 9)),
    }
    # theta_a = sl_a[AB slot 10] - sl_a[CA slot 30] = 0
    # theta_b = sl_b[BC slot 20] - sl_b[AB slot 10] = 0
    # theta_c = sl_c[CA slot 30] - sl_c[BC slot 20] = 0
    pairs, store = _build(spec, [[10, 20, 30]], sides=[[0, 0, 0]])
    sifted, table = classify_and_tally(pairs, store, params)
    assert table.counts == {("2nu", "2nu", "2nu"): 1}
    assert table.n_x_sifted == 1
    assert table.err_x == 0  # parity 0, all sides L

    pairs, store = _build(spec, [[10, 20, 30]], sides=[[1, 0, 0]])
    _, table = classify_and_tally(pairs, store, params)
    assert table.err_x == 1  # one flipped side contradicts parity 0


def test_x_antipodal_parity_one(params):
    # shift user A's late slice by M/2: sum_theta = pi -> parity 1
    spec = {
        10: ((LEVEL_NU, 11), (LEVEL_NU, 7), (LEVEL_NU, 2)),
        20: ((LEVEL_NU, 1), (LEVEL_NU, 7), (LEVEL_NU, 9)),
        30: ((LEVEL_NU, 3), (LEVEL_NU, 4), (LEVEL_NU, 9)),
    }
    pairs, store = _build(spec, [[10, 20, 30]], sides=[[0, 0, 0]])
    _, table = classify_and_tally(pairs, store, params)
    assert table.n_x_sifted == 1
    assert table.err_x == 1  # parity 1 with side parity 0 is an error
    pairs, store = _build(spec, [[10, 20, 30]], sides=[[1, 0, 0]])
    _, table = classify_and_tally(pairs, store, params)
    assert table.err_x == 0


def test_conservation_over_patterns(params, rng):
    n_slots = 3000
    slots = np.arange(n_slots, dtype=np.int64)
    levels = rng.integers(0, 3, size=(3, n_slots)).astype(np.uint8)
    slices = rng.integers(0, 16, size=(3, n_slots)).astype(np.uint8)
    store = RecordStore(slots, levels, slices)
    pair_slots = np.sort(
        rng.choice(n_slots, size=(300, 3), replace=False).reshape(300, 3), axis=1
    )
    time_ps = pair_slots * PERIOD_PS + PERIOD_PS // 2
    channel = (np.arange(3, dtype=np.uint8)[None, :] * 2
               + rng.integers(0, 2, size=(300, 3)).astype(np.uint8))
    pairs = PairSet(time_ps, channel, pair_slots, np.ones(300, dtype=np.uint8))
    _, table = classify_and_tally(pairs, store, params, n_pulses=12345)
    assert table.total_pairs() == 300
    assert table.n_pulses == 12345
    table.validate()


def test_missing_record_raises(params):
    spec = {10: ((LEVEL_MU, 0),) * 3, 20: ((LEVEL_O, 0),) * 3, 30: ((LEVEL_O, 0),) * 3}
    pairs, store = _build(spec, [[10, 20, 40]])
    with pytest.raises(MissingRecord):
        classify_and_tally(pairs, store, params)


# ---------------------------------------------------------------------------
# QBER arithmetic

def test_qber_exact_ratios():
    table = CountsTable(
        counts={("mu", "mu", "mu"): 4536856, ("2nu", "2nu", "2nu"): 7740134},
        n_x_sifted=967876,
        err_z={"AB": 7778, "AC": 7678, "BC": 6693},
        err_x=399992,
    )
    e_ab, e_ac, e_bc, e_x = qber(table)
    assert e_ab == pytest.approx(1.714e-3, rel=5e-4)
    assert e_ab == 7778 / 4536856
    assert e_x == pytest.approx(0.4133, rel=5e-4)


def test_qber_zero_errors():
    table = CountsTable(counts={("mu", "mu", "mu"): 100}, n_x_sifted=10)
    assert table.qber_z() == (0.0, 0.0, 0.0)


def test_qber_undefined_on_zero_denominator():
    table = CountsTable(counts={("mu", "mu", "mu"): 0})
    with pytest.raises(UndefinedQber):
        table.qber_z()
    with pytest.raises(UndefinedQber):
        table.qber_x()


def test_counts_table_validation():
    with pytest.raises(ValueError):
        CountsTable(counts={("mu", "mu", "mu"): 10}, err_z={"AB": 11, "AC": 0, "BC": 0}).validate()
    with pytest.raises(ValueError):
        CountsTable(counts={("2nu", "2nu", "2nu"): 5}, n_x_sifted=6).validate()


def test_reference_samples_keep_all_pairs(params):
    from amdiqcc.patterns import LEVEL_REF

    spec = {
        10: ((LEVEL_REF, 3), (LEVEL_REF, 7), (LEVEL_REF, 2)),
        20: ((LEVEL_REF, 1), (LEVEL_REF, 7), (LEVEL_REF, 9)),
        30: ((LEVEL_REF, 3), (LEVEL_REF, 4), (LEVEL_REF, 9)),
    }
    pairs, store = _build(spec, [[10, 20, 30]], sides=[[1, 0, 0]])
    phi, err = reference_phase_samples(pairs, store, params)
    assert phi.shape == (1,)
    assert phi[0] == pytest.approx(0.0, abs=1e-12)
    assert err[0] == 1
