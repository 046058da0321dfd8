"""Laser frequency-difference and interferometer phase-drift estimation.

Frequency differences are recovered pairwise from the oscillation of the
two-user X-basis QBER of reference pulses against the pairing interval:
E_X(dt) = (1 - V2)/2 + (V2/2) [1 - cos(2 pi df dt)]. An FFT of the
series localizes |df| to one grid bin (resolution 1/span, about 50 kHz
for a 20 us span); signs are fixed by the cyclic-sum constraint plus a
QBER minimization over the reference three-branch pairs. The
interferometer drift is the phase-slice offset minimizing the reference
QBER-versus-phase curve per stability block.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .events import BRANCH_USERS
from .params import ProtocolParams
from .sifting import RecordStore, reference_phase_samples


class EmptySeries(ValueError):
    pass


class NoPeak(ValueError):
    """Spectrum has no mode above the noise floor inside the window."""


class InsufficientStatistics(ValueError):
    pass


class AmbiguousSigns(ValueError):
    """Two sign assignments tie within statistical error."""

    def __init__(self, best, runner_up):
        self.best = best
        self.runner_up = runner_up
        super().__init__(f"sign assignments {best} and {runner_up} tie")


@dataclass(frozen=True)
class FreqEstimate:
    """Signed pairwise frequency differences, Hz: df_xy = f_x - f_y."""

    df_ab: float
    df_bc: float
    df_ca: float
    block_time: float
    resolution: float

    @property
    def cyclic_residual(self) -> float:
        return abs(self.df_ab + self.df_bc + self.df_ca)


@dataclass(frozen=True)
class DriftEstimate:
    theta_min: float  # radians, slice-quantized, in [0, 2 pi)
    block_index: int
    min_qber: float


@dataclass
class QberSeries:
    """Two-user X QBER on a uniform pairing-interval grid.

    grid is in seconds, strictly increasing with constant step; count
    holds the pairs per bin (0 marks an empty bin, excluded from the
    FFT by mean-filling).
    """

    grid: np.ndarray
    e_x: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.e_x = np.asarray(self.e_x, dtype=float)
        self.count = np.asarray(self.count, dtype=np.int64)
        if self.grid.size == 0:
            raise EmptySeries("empty interval grid")
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("interval grid must be strictly increasing")
        filled = self.e_x[self.count > 0]
        if filled.size and (filled.min() < 0 or filled.max() > 1):
            raise ValueError("QBER values outside [0, 1]")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if self.grid.size > 1 else 0.0

    @property
    def span(self) -> float:
        return self.step * self.grid.size

    def empty_bins(self) -> np.ndarray:
        return np.nonzero(self.count == 0)[0]


def default_interval_grid(t_lo: float = 0.1e-6, t_hi: float = 20.1e-6,
                          step: float = 4e-9) -> np.ndarray:
    """Pairing-interval bin centers, 0.1 us to 20.1 us at the pulse period."""
    n = round((t_hi - t_lo) / step)
    return t_lo + step * np.arange(n)


def series_from_formula(v2: float, delta_f: float, grid=None) -> QberSeries:
    """Closed-form E_X(dt) oracle for synthetic series."""
    if grid is None:
        grid = default_interval_grid()
    ex = (1.0 - v2) / 2.0 + (v2 / 2.0) * (1.0 - np.cos(2.0 * math.pi * delta_f * grid))
    return QberSeries(grid, ex, np.ones(grid.size, dtype=np.int64))


def build_qber_series(interval_ps, branch: int, pair_slots, records: RecordStore,
                      sides, params: ProtocolParams, grid=None) -> QberSeries:
    """Two-user X QBER of same-branch reference pairs, binned by interval.

    pair_slots is (n, 2) early/late grid slots, sides (n, 2) detector
    side bits. A pair is sifted when the two users' encoded phase
    differences agree mod pi; the error flag compares detector-side
    parity with the phase parity.
    """
    if grid is None:
        grid = default_interval_grid()
    grid = np.asarray(grid, dtype=float)
    step_ps = (grid[1] - grid[0]) * 1e12
    u, v = BRANCH_USERS[branch]
    pair_slots = np.asarray(pair_slots)
    interval_ps = np.asarray(interval_ps, dtype=np.int64)

    d_u = (records.slice_at(u, pair_slots[:, 1]).astype(int)
           - records.slice_at(u, pair_slots[:, 0]).astype(int)) % params.M
    d_v = (records.slice_at(v, pair_slots[:, 1]).astype(int)
           - records.slice_at(v, pair_slots[:, 0]).astype(int)) % params.M
    rel = (d_u - d_v) % params.M
    half = params.M // 2
    sifted = (rel == 0) | (rel == half)
    parity = (rel == half).astype(np.int8)

    sides = np.asarray(sides)
    r = sides if params.left_detector_bit == 0 else 1 - sides
    err = (r[:, 0] ^ r[:, 1]) ^ parity

    bin_idx = np.round((interval_ps - grid[0] * 1e12) / step_ps).astype(np.int64)
    ok = sifted & (bin_idx >= 0) & (bin_idx < grid.size)
    counts = np.bincount(bin_idx[ok], minlength=grid.size)
    errors = np.bincount(bin_idx[ok], weights=err[ok].astype(float), minlength=grid.size)
    with np.errstate(invalid="ignore"):
        ex = np.where(counts > 0, errors / np.maximum(counts, 1), 0.0)
    return QberSeries(grid, ex, counts)


def estimate_freq_fft(series: QberSeries, search_window=(1e6, 125e6),
                      noise_floor_factor: float = 4.0):
    """|df| of the dominant QBER oscillation, plus the grid resolution.

    Rectangular window, no sub-bin interpolation: the estimate is the
    max-magnitude FFT bin inside the search window, so the accuracy is
    the bin width 1/span. Each bin enters weighted by its pair count
    (count * (E_X - 1/2)), which keeps sparsely populated series at
    their matched-filter sensitivity; empty bins contribute nothing.
    Raises NoPeak when the peak does not clear the in-window noise floor
    (median magnitude times noise_floor_factor).
    """
    filled = series.count > 0
    if not np.any(filled):
        raise EmptySeries("series has no populated bins")
    values = (series.e_x - 0.5) * series.count
    spectrum = np.abs(np.fft.rfft(values))
    freqs = np.fft.rfftfreq(values.size, d=series.step)
    resolution = 1.0 / series.span
    lo, hi = search_window
    window = (freqs >= lo) & (freqs <= hi)
    if not np.any(window):
        raise NoPeak(f"search window {search_window} outside spectrum range")
    mags = spectrum[window]
    peak = float(mags.max())
    floor = float(np.median(mags)) * noise_floor_factor
    if peak <= floor or peak == 0.0:
        raise NoPeak(f"peak {peak:.3g} below noise floor {floor:.3g}")
    f_peak = float(freqs[window][int(np.argmax(mags))])
    return f_peak, resolution


def theta_df(freqs: FreqEstimate, t1, t2, t3):
    """Frequency-difference phase compensation for one pair's click times.

    t1, t2, t3 are the click times (seconds) on branches AB, BC, CA;
    the value is the average of the three equivalent pairwise forms,
    reduced mod 2 pi. Invariant under a global time shift.
    """
    w_ba = -2.0 * math.pi * freqs.df_ab
    w_cb = -2.0 * math.pi * freqs.df_bc
    w_ac = -2.0 * math.pi * freqs.df_ca
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    t3 = np.asarray(t3, dtype=float)
    total = (
        (w_cb * (t1 - t2) + w_ac * (t1 - t3))
        + (w_ba * (t2 - t1) + w_ac * (t2 - t3))
        + (w_ba * (t3 - t1) + w_cb * (t3 - t2))
    ) / 3.0
    return np.mod(total, 2.0 * math.pi)


def theta_df_for_pairs(freqs: FreqEstimate, pair_times_ps) -> np.ndarray:
    t = np.asarray(pair_times_ps, dtype=float) * 1e-12
    return theta_df(freqs, t[:, 0], t[:, 1], t[:, 2])


def qber_by_slice(phi, err, M: int):
    """Per-slice QBER of (phase, error-bit) samples; returns (qber, counts)."""
    phi = np.asarray(phi, dtype=float)
    err = np.asarray(err)
    idx = np.round(phi / (2.0 * math.pi / M)).astype(np.int64) % M
    counts = np.bincount(idx, minlength=M)
    errors = np.bincount(idx, weights=err.astype(float), minlength=M)
    with np.errstate(invalid="ignore"):
        q = np.where(counts > 0, errors / np.maximum(counts, 1), np.nan)
    return q, counts


def estimate_theta_min(phi, err, M: int, block_index: int = 0,
                       min_per_slice: int = 1) -> DriftEstimate:
    """Drift estimate: the phase slice minimizing the reference QBER.

    phi/err come from reference_phase_samples on frequency-compensated
    reference pairs of one stability block.
    """
    q, counts = qber_by_slice(phi, err, M)
    if np.any(counts < min_per_slice):
        lacking = int(np.argmin(counts))
        raise InsufficientStatistics(
            f"slice {lacking} holds {int(counts[lacking])} pairs (< {min_per_slice})"
        )
    k = int(np.nanargmin(q))
    return DriftEstimate(
        theta_min=2.0 * math.pi * k / M,
        block_index=block_index,
        min_qber=float(q[k]),
    )


def resolve_freq_signs(magnitudes, ref_pairs, records: RecordStore,
                       params: ProtocolParams, resolution: float,
                       block_time: float = 0.0,
                       tie_sigma: float = 2.0) -> FreqEstimate:
    """Pick the signed (df_ab, df_bc, df_ca) consistent with the data.

    The real-valued QBER spectrum fixes only |df|; candidate sign
    triples must satisfy the cyclic-sum constraint within twice the
    grid resolution, and among those the one whose compensation
    minimizes the reference-pair QBER (minimum over phase slices) wins.
    Raises AmbiguousSigns when the top two candidates differ by less
    than tie_sigma binomial standard errors.
    """
    mags = tuple(float(abs(m)) for m in magnitudes)
    if all(m == 0.0 for m in mags):
        return FreqEstimate(0.0, 0.0, 0.0, block_time, resolution)
    # grid-quantized magnitudes can sit exactly on the consistency
    # boundary; a relative epsilon keeps them from falling off it
    tol = 2.0 * resolution * (1.0 + 1e-9)
    candidates = []
    for signs in itertools.product((1.0, -1.0), repeat=3):
        triple = tuple(s * m for s, m in zip(signs, mags))
        if abs(sum(triple)) <= tol:
            candidates.append(triple)
    # dedupe triples that coincide because some magnitude is zero
    candidates = list(dict.fromkeys(candidates))
    if not candidates:
        raise AmbiguousSigns(mags, None)

    phi_time = np.asarray(ref_pairs.time_ps, dtype=float) * 1e-12
    scores = []
    for triple in candidates:
        est = FreqEstimate(*triple, block_time=block_time, resolution=resolution)
        shift = theta_df(est, phi_time[:, 0], phi_time[:, 1], phi_time[:, 2])
        phi, err = reference_phase_samples(ref_pairs, records, params, theta_df=shift)
        q, counts = qber_by_slice(phi, err, params.M)
        good = counts > 0
        if not np.any(good):
            raise InsufficientStatistics("no reference pairs for sign resolution")
        k = int(np.nanargmin(np.where(good, q, np.nan)))
        scores.append((float(q[k]), int(counts[k]), triple))
    scores.sort()
    best_q, best_n, best_triple = scores[0]
    if len(scores) > 1:
        second_q, second_n, second_triple = scores[1]
        sigma = math.sqrt(
            best_q * (1 - best_q) / max(best_n, 1)
            + second_q * (1 - second_q) / max(second_n, 1)
        )
        if second_q - best_q < tie_sigma * sigma:
            raise AmbiguousSigns(best_triple, second_triple)
    return FreqEstimate(*best_triple, block_time=block_time, resolution=resolution)
