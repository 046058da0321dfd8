"""Synthetic pulse trains and detector click streams.

Semiclassical intensity-interference model: at each branch the two
adjacent users' attenuated pulses produce detector intensities

    I_pm = (eta_i k_i + eta_j k_j)/4
           +- (V_br/2) sqrt(eta_i k_i eta_j k_j) cos(xi)

with xi the branch phase difference (encoded slices, accumulated laser
frequency offsets, minus the branch's interferometer phase). Every
detector clicks independently with 1 - (1 - p_d) exp(-I); a slot is
emitted only when exactly one of the six detectors clicked. With
probability e_d a click's side bit is replaced by a fair coin.

Blocks of whole sequences are simulated independently on counter-based
RNG streams, so runs are reproducible and block-parallelizable; the
interferometer random walk advances per sequence on its own stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .events import BRANCH_USERS, CLASS_QUANTUM, CLASS_REFERENCE, EventBlock
from .params import ProtocolParams, SimulatorParams
from .patterns import LEVEL_MU, LEVEL_NU, LEVEL_O, LEVEL_REF

_DELTA_STREAM = 0xD417A


def _rng(seed: int, *stream) -> np.random.Generator:
    # Philox keys are 128 bit: low word = seed, high word = mixed stream ids.
    mix = 0
    for s in stream:
        mix = (mix * 0x9E3779B97F4A7C15 + s + 1) & 0xFFFFFFFFFFFFFFFF
    key = (mix << 64) | (seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class GroundTruthLog:
    """True per-block channel state, for estimator validation."""

    t_start: list = field(default_factory=list)  # seconds
    df: list = field(default_factory=list)  # (df_ab, df_bc, df_ca) at t_start
    delta: list = field(default_factory=list)  # branch phases at t_start

    def append(self, t_start: float, df: tuple, delta: tuple):
        if self.t_start and t_start <= self.t_start[-1]:
            raise ValueError("ground-truth log must stay time-ordered")
        self.t_start.append(t_start)
        self.df.append(tuple(df))
        self.delta.append(tuple(delta))

    def rows(self):
        return zip(self.t_start, self.df, self.delta)


def delta_trajectory(sim: SimulatorParams, n_sequences: int) -> np.ndarray:
    """Interferometer phase per branch and sequence, shape (3, n_seq).

    Gaussian random walk stepped once per sequence (piecewise constant
    in between), starting from sim.delta0.
    """
    out = np.empty((3, max(n_sequences, 1)))
    out[:, 0] = sim.delta0
    if n_sequences > 1:
        if sim.delta_step > 0.0:
            rng = _rng(sim.seed, _DELTA_STREAM)
            step_std = sim.delta_step * math.sqrt(sim.plan.duration)
            # sequence-major draw keeps trajectories prefix-stable in length
            steps = rng.normal(0.0, step_std, size=(n_sequences - 1, 3)).T
        else:
            steps = np.zeros((3, n_sequences - 1))
        out[:, 1:] = out[:, :1] + np.cumsum(steps, axis=1)
    return out[:, :n_sequences]


def true_df_at(sim: SimulatorParams, t: float) -> tuple[float, float, float]:
    f = [f0 + dr * t for f0, dr in zip(sim.f_offset_hz, sim.f_drift_hz_per_s)]
    return (f[0] - f[1], f[1] - f[2], f[2] - f[0])


@dataclass
class PulseTrains:
    """Per-user emission settings for a contiguous range of sequences."""

    slot: np.ndarray  # global grid slot per emitting pulse, int64
    pulse_class: np.ndarray  # uint8
    levels: np.ndarray  # (3, m) uint8
    slices: np.ndarray  # (3, m) uint8
    seq_start: int
    n_sequences: int


def generate_pulse_trains(params: ProtocolParams, sim: SimulatorParams,
                          seq_start: int, n_sequences: int) -> PulseTrains:
    """Draw intensities and phase slices for whole sequences.

    Quantum slots draw levels i.i.d. with (p_mu, p_nu, p_o); reference
    slots carry the signal intensity. Slices are uniform on [0, M).
    Deterministic given (seed, seq_start sequence block).
    """
    plan = sim.plan
    rng = _rng(sim.seed, 1, seq_start)
    m_per_seq = plan.emitting_slots
    m = n_sequences * m_per_seq

    offsets = np.arange(m_per_seq, dtype=np.int64)
    seq_idx = np.arange(seq_start, seq_start + n_sequences, dtype=np.int64)
    slot = (seq_idx[:, None] * plan.grid_slots + offsets[None, :]).reshape(-1)
    pulse_class = np.where(
        offsets < plan.n_ref, CLASS_REFERENCE, CLASS_QUANTUM
    ).astype(np.uint8)
    pulse_class = np.tile(pulse_class, n_sequences)

    u = rng.random((3, m))
    levels = np.full((3, m), LEVEL_O, dtype=np.uint8)
    levels[u < params.p_mu + params.p_nu] = LEVEL_NU
    levels[u < params.p_mu] = LEVEL_MU
    levels[:, pulse_class == CLASS_REFERENCE] = LEVEL_REF
    slices = rng.integers(0, params.M, size=(3, m), dtype=np.uint8)
    return PulseTrains(slot, pulse_class, levels, slices, seq_start, n_sequences)


def _level_values(params: ProtocolParams, sim: SimulatorParams) -> np.ndarray:
    ref = params.mu if sim.reference_intensity is None else sim.reference_intensity
    return np.array([0.0, params.nu, params.mu, ref])


@njit(cache=True, fastmath=True)
def _detection_kernel(levels, slices, slot, values, eta, f0, drift, delta,
                      seq_offset, grid_slots, period, step,
                      visibility, p_dark, uniforms, out_pos, out_det):  # pragma: no cover
    m = slot.size
    n_out = 0
    keep = 1.0 - p_dark
    two_pi = 2.0 * math.pi
    w = np.empty(3)
    ph = np.empty(3)
    for s in range(m):
        t = slot[s] * period + 0.5 * period
        seq = slot[s] // grid_slots - seq_offset
        for u in range(3):
            w[u] = eta[u] * values[levels[u, s]]
            ph[u] = two_pi * (f0[u] * t + 0.5 * drift[u] * t * t)
        count = 0
        det = 0
        for b in range(3):
            j = b + 1 if b < 2 else 0
            wi = w[b]
            wj = w[j]
            base = 0.25 * (wi + wj)
            cross = 0.5 * visibility * math.sqrt(wi * wj)
            d_slice = np.int64(slices[b, s]) - np.int64(slices[j, s])
            xi = step * d_slice + (ph[b] - ph[j]) - delta[b, seq]
            mod = cross * math.cos(xi)
            if uniforms[2 * b, s] < 1.0 - keep * math.exp(-(base + mod)):
                count += 1
                det = 2 * b
            if uniforms[2 * b + 1, s] < 1.0 - keep * math.exp(-(base - mod)):
                count += 1
                det = 2 * b + 1
        if count == 1:
            out_pos[n_out] = s
            out_det[n_out] = det
            n_out += 1
    return n_out


def simulate_detection(trains: PulseTrains, params: ProtocolParams,
                       sim: SimulatorParams,
                       delta_per_seq: np.ndarray | None = None) -> EventBlock:
    """Detector clicks for one block of pulse trains.

    Returns the time-sorted stream of single-click events. delta_per_seq
    overrides the interferometer trajectory for this block's sequences,
    columns aligned with the block (defaults to a fresh trajectory
    evaluated at the block's absolute sequence indices).
    """
    plan = sim.plan
    m = trains.slot.size
    rng = _rng(sim.seed, 2, trains.seq_start)
    if delta_per_seq is None:
        delta_per_seq = delta_trajectory(sim, trains.seq_start + trains.n_sequences)[
            :, trains.seq_start:
        ]

    uniforms = rng.random((6, m))
    out_pos = np.empty(m, dtype=np.int64)
    out_det = np.empty(m, dtype=np.uint8)
    n_out = _detection_kernel(
        trains.levels,
        trains.slices,
        trains.slot,
        _level_values(params, sim),
        np.array(sim.eta),
        np.array(sim.f_offset_hz, dtype=np.float64),
        np.array(sim.f_drift_hz_per_s, dtype=np.float64),
        np.ascontiguousarray(delta_per_seq),
        np.int64(trains.seq_start),
        np.int64(plan.grid_slots),
        plan.period,
        2.0 * math.pi / params.M,
        sim.branch_visibility,
        sim.dark_count_prob,
        uniforms,
        out_pos,
        out_det,
    )
    pos = out_pos[:n_out]
    det = out_det[:n_out].copy()

    if sim.misalignment > 0.0 and det.size:
        scramble = rng.random(det.size) < sim.misalignment
        coin = rng.integers(0, 2, size=det.size).astype(np.uint8)
        det = np.where(scramble, (det & 0b110) | coin, det)

    slot = trains.slot[pos]
    time_ps = slot * plan.period_ps + plan.period_ps // 2
    return EventBlock(time_ps, det, trains.pulse_class[pos], slot)


@dataclass
class SimBlock:
    """One simulated block: events plus records at the event slots."""

    events: EventBlock
    rec_slots: np.ndarray
    rec_levels: np.ndarray  # (3, n)
    rec_slices: np.ndarray  # (3, n)
    seq_start: int
    n_sequences: int


def simulate_blocks(params: ProtocolParams, sim: SimulatorParams, n_sequences: int,
                    seqs_per_block: int = 64, seq_start: int = 0,
                    truth: GroundTruthLog | None = None):
    """Generate n_sequences of the run blockwise, yielding SimBlock objects.

    seq_start offsets into the (conceptually unbounded) run: RNG streams
    are keyed by absolute block-start sequence, so simulating [0, a) and
    [a, b) reproduces one [0, b) run exactly whenever the segment bounds
    are multiples of seqs_per_block. Records are sparsified to the slots
    that produced events. The optional GroundTruthLog receives one row
    per block.
    """
    first = seq_start
    delta = delta_trajectory(sim, first + n_sequences)
    for seq_start in range(first, first + n_sequences, seqs_per_block):
        n_blk = min(seqs_per_block, first + n_sequences - seq_start)
        trains = generate_pulse_trains(params, sim, seq_start, n_blk)
        events = simulate_detection(
            trains, params, sim, delta_per_seq=delta[:, seq_start:seq_start + n_blk]
        )
        if truth is not None:
            t0 = seq_start * sim.plan.duration
            truth.append(t0, true_df_at(sim, t0), tuple(delta[:, seq_start]))
        idx = np.searchsorted(trains.slot, np.unique(events.slot))
        yield SimBlock(
            events=events,
            rec_slots=trains.slot[idx],
            rec_levels=trains.levels[:, idx],
            rec_slices=trains.slices[:, idx],
            seq_start=seq_start,
            n_sequences=n_blk,
        )


@dataclass(frozen=True)
class PredictedObservables:
    single_count_prob: float  # exactly one of six detectors, per slot
    branch_click_prob: float  # either detector of one branch, per slot
    x_qber_uncompensated: float
    x_qber_compensated: float
    three_photon_visibility: float


def _phase_grid(n: int):
    phi = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
    return np.meshgrid(phi, phi, indexing="ij")


def predicted_observables(params: ProtocolParams, sim: SimulatorParams,
                          reference: bool = False, n_grid: int = 96,
                          freq_residual_rms: float = 0.0) -> PredictedObservables:
    """Closed-form slot-level click statistics and sifted QBER levels.

    Marginalizes the exactly-one-click probability over intensity choices
    (enumeration) and encoded phases (two free branch phases; the third
    is constrained). The compensated X QBER assumes an ideal drift
    estimate up to slice quantization plus an optional residual
    frequency phase of given rms.
    """
    values = _level_values(params, sim)
    if reference:
        combos = [((LEVEL_REF,) * 3, 1.0)]
    else:
        lvls = (LEVEL_O, LEVEL_NU, LEVEL_MU)
        probs = (params.p_o, params.p_nu, params.p_mu)
        combos = [
            ((a, b, c), probs[ia] * probs[ib] * probs[ic])
            for ia, a in enumerate(lvls)
            for ib, b in enumerate(lvls)
            for ic, c in enumerate(lvls)
        ]
    phi1, phi2 = _phase_grid(n_grid)
    phi3 = -(phi1 + phi2)
    phases = (phi1, phi2, phi3)
    p_d = sim.dark_count_prob
    eta = sim.eta
    p_single = 0.0
    p_branch = 0.0
    for lv, weight in combos:
        w = [eta[u] * values[lv[u]] for u in range(3)]
        p_det = []
        for b, (i, j) in enumerate(BRANCH_USERS):
            base = 0.25 * (w[i] + w[j])
            cross = 0.5 * sim.branch_visibility * math.sqrt(w[i] * w[j])
            mod = cross * np.cos(phases[b])
            p_det.append(1.0 - (1.0 - p_d) * np.exp(-(base + mod)))
            p_det.append(1.0 - (1.0 - p_d) * np.exp(-(base - mod)))
        none = np.ones_like(phi1)
        for p in p_det:
            none = none * (1.0 - p)
        exactly_one = sum(
            p / np.maximum(1.0 - p, 1e-300) for p in p_det
        ) * none
        p_single += weight * float(exactly_one.mean())
        p_branch += weight * float(
            (1.0 - (1.0 - p_det[0]) * (1.0 - p_det[1])).mean()
        )

    v3 = sim.branch_visibility**3 / 4.0
    window = math.pi / params.M
    sinc = math.sin(window) / window
    cos_factor = sinc**2 * math.exp(-0.5 * freq_residual_rms**2)
    return PredictedObservables(
        single_count_prob=p_single,
        branch_click_prob=p_branch,
        x_qber_uncompensated=0.5,
        x_qber_compensated=(1.0 - v3 * cos_factor) / 2.0,
        three_photon_visibility=v3,
    )
