"""Batch orchestration: simulate -> pair -> compensate -> sift -> analyze -> report.

Each stage reads its inputs from and writes its outputs to one run
directory, so any suffix of the chain can restart from on-disk
intermediates. A manifest records config digest, seed and stage
history; identical manifests reproduce runs bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .compensation import (
    AmbiguousSigns,
    DriftEstimate,
    FreqEstimate,
    InsufficientStatistics,
    NoPeak,
    build_qber_series,
    default_interval_grid,
    estimate_freq_fft,
    estimate_theta_min,
    resolve_freq_signs,
    theta_df_for_pairs,
)
from .events import CLASS_QUANTUM, CLASS_REFERENCE, EventBlock, N_BRANCHES, PairSet
from .finitekey import key_length
from .pairing import interval_histogram, pair_events_multibranch, pair_events_single_branch
from .params import ProtocolParams, SecurityParams, SimulatorParams, load_config
from .sifting import CountsTable, RecordStore, classify_and_tally, reference_phase_samples
from .simulator import GroundTruthLog, simulate_blocks

STAGES = ("simulate", "pair", "compensate", "sift", "analyze", "report")

FILES = {
    "timetags": "timetags.bin",
    "records": "records.npz",
    "truth": "ground_truth.tsv",
    "pairs_q": "pairs_quantum.npz",
    "pairs_r": "pairs_reference.npz",
    "compensation": "compensation.tsv",
    "counts": "counts.counts",
    "analysis": "analysis.json",
    "manifest": "run_manifest.json",
}


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass(frozen=True)
class PipelineConfig:
    """Run-level knobs (config section [pipeline])."""

    n_sequences: int = 2000
    seqs_per_block: int = 64
    freq_block_s: float = 0.4
    drift_block_s: float = 20.0
    fft_window_lo_hz: float = 1e6
    fft_window_hi_hz: float = 125e6
    min_slice_pairs: int = 1
    noise_floor_factor: float = 5.0
    two_channel_window_s: float = 20.1e-6


def load_pipeline_config(path) -> PipelineConfig:
    import configparser

    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read(path)
    kwargs = {}
    if cp.has_section("pipeline"):
        fields = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}
        for key, raw in cp.items("pipeline"):
            if key not in fields:
                raise StageFailure("config", f"unknown key {key!r} in [pipeline]")
            typ = int if "int" in str(fields[key]) else float
            kwargs[key] = typ(raw)
    return PipelineConfig(**kwargs)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageFailure(stage, f"missing input file {path}")
    return path


# ---------------------------------------------------------------------------
# stages

def stage_simulate(outdir: Path, params: ProtocolParams, sim: SimulatorParams,
                   pipe: PipelineConfig, seq_start: int = 0) -> dict:
    truth = GroundTruthLog()
    slots, levels, slices = [], [], []
    n_events = 0
    with io.TimetagWriter(outdir / FILES["timetags"]) as writer:
        for block in simulate_blocks(params, sim, pipe.n_sequences,
                                     seqs_per_block=pipe.seqs_per_block,
                                     seq_start=seq_start, truth=truth):
            writer.append(block.events)
            n_events += len(block.events)
            slots.append(block.rec_slots)
            levels.append(block.rec_levels)
            slices.append(block.rec_slices)
    io.write_records(
        outdir / FILES["records"],
        np.concatenate(slots) if slots else np.empty(0, np.int64),
        np.concatenate(levels, axis=1) if levels else np.empty((3, 0), np.uint8),
        np.concatenate(slices, axis=1) if slices else np.empty((3, 0), np.uint8),
    )
    io.write_ground_truth(outdir / FILES["truth"], truth)
    return {
        "n_sequences": pipe.n_sequences,
        "seq_start": seq_start,
        "n_events": n_events,
        "n_quantum_pulses": pipe.n_sequences * sim.plan.n_quantum,
        "duration_s": pipe.n_sequences * sim.plan.duration,
    }


def stage_pair(outdir: Path, params: ProtocolParams) -> dict:
    events = io.read_timetags(_require(outdir / FILES["timetags"], "pair"))
    out = {}
    for name, cls in (("pairs_q", CLASS_QUANTUM), ("pairs_r", CLASS_REFERENCE)):
        sub = events.of_class(cls)
        rows = pair_events_multibranch(sub.time_ps, sub.branch, params.t_max_ps)
        pairs = PairSet.from_events(sub, rows)
        io.write_pairs(outdir / FILES[name], pairs)
        out[name] = len(pairs)
    return {"n_quantum_pairs": out["pairs_q"], "n_reference_pairs": out["pairs_r"]}


def _block_slices(time_ps: np.ndarray, block_ps: int):
    """Yield (block_index, slice) for consecutive equal-block runs."""
    if time_ps.size == 0:
        return
    idx = time_ps // block_ps
    bounds = np.nonzero(np.diff(idx))[0] + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [time_ps.size]))
    for s, e in zip(starts, ends):
        yield int(idx[s]), slice(int(s), int(e))


def stage_compensate(outdir: Path, params: ProtocolParams,
                     pipe: PipelineConfig) -> dict:
    events = io.read_timetags(_require(outdir / FILES["timetags"], "compensate"))
    records = io.read_records(_require(outdir / FILES["records"], "compensate"))
    ref = events.of_class(CLASS_REFERENCE)
    ref_pairs = io.read_pairs(_require(outdir / FILES["pairs_r"], "compensate"))

    grid = default_interval_grid(step=params.pulse_period)
    window_ps = round(pipe.two_channel_window_s * 1e12)
    block_ps = round(pipe.freq_block_s * 1e12)
    resolution = 1.0 / (grid.size * params.pulse_period)

    # per-branch two-channel pairs, partitioned into frequency blocks
    branch_pairs = {}
    for b in range(N_BRANCHES):
        sub = ref.select(ref.branch == b)
        rows = pair_events_single_branch(sub.time_ps, window_ps)
        branch_pairs[b] = (sub, rows)

    # block grids anchor at the first event so segmented runs never start
    # with a fractional stub block
    anchors = ref_pairs.anchor_time
    t_begin = int(events.time_ps[0]) if len(events) else 0
    t_end = int(events.time_ps[-1]) if len(events) else 0
    freq_rows = []
    freq_estimates = []
    last_mags: list | None = None
    last_est: FreqEstimate | None = None
    n_blocks = 0
    series_sample = None
    for blk in range((t_end - t_begin) // block_ps + 1):
        lo, hi = t_begin + blk * block_ps, t_begin + (blk + 1) * block_ps
        mags = []
        for b in range(N_BRANCHES):
            sub, rows = branch_pairs[b]
            if rows.size:
                t_early = sub.time_ps[rows[:, 0]]
                in_blk = (t_early >= lo) & (t_early < hi)
                rows_blk = rows[in_blk]
            else:
                rows_blk = rows
            if rows_blk.size == 0:
                mags.append(last_mags[b] if last_mags else math.nan)
                continue
            series = build_qber_series(
                sub.time_ps[rows_blk[:, 1]] - sub.time_ps[rows_blk[:, 0]],
                b,
                sub.slot[rows_blk],
                records,
                sub.side[rows_blk],
                params,
                grid=grid,
            )
            if series_sample is None:
                series_sample = (b, series)
            try:
                f_mag, _ = estimate_freq_fft(
                    series,
                    search_window=(pipe.fft_window_lo_hz, pipe.fft_window_hi_hz),
                    noise_floor_factor=pipe.noise_floor_factor,
                )
                mags.append(f_mag)
            except NoPeak:
                mags.append(last_mags[b] if last_mags else math.nan)
        est = None
        if not any(math.isnan(m) for m in mags):
            last_mags = mags
            sel = (anchors >= lo) & (anchors < hi)
            trip = ref_pairs
            trip_blk = PairSet(trip.time_ps[sel], trip.channel[sel], trip.slot[sel],
                               trip.pulse_class[sel])
            try:
                est = resolve_freq_signs(mags, trip_blk, records, params, resolution,
                                         block_time=lo * 1e-12)
            except (AmbiguousSigns, InsufficientStatistics):
                est = None
        if est is None:
            # keep the previous block's signed estimate; a dead first
            # block falls back to zero compensation for its stretch
            prev = last_est or FreqEstimate(0.0, 0.0, 0.0, 0.0, resolution)
            est = FreqEstimate(prev.df_ab, prev.df_bc, prev.df_ca,
                               lo * 1e-12, resolution)
        last_est = est
        freq_estimates.append(est)
        freq_rows.append((est.block_time, est.df_ab, est.df_bc, est.df_ca, resolution))
        n_blocks += 1

    # drift blocks: frequency-compensated reference triples, slice scan
    drift_ps = round(pipe.drift_block_s * 1e12)
    drift_rows = []
    last_theta = 0.0
    order = np.argsort(anchors, kind="stable")
    sorted_anchor = anchors[order]
    for blk_idx, sl in _block_slices(sorted_anchor - t_begin, drift_ps):
        rows = order[sl]
        sub = PairSet(ref_pairs.time_ps[rows], ref_pairs.channel[rows],
                      ref_pairs.slot[rows], ref_pairs.pulse_class[rows])
        t_block = t_begin * 1e-12 + blk_idx * pipe.drift_block_s
        est = _freq_for_estimates(freq_estimates, t_block)
        shift = theta_df_for_pairs(est, sub.time_ps)
        phi, err = reference_phase_samples(sub, records, params, theta_df=shift)
        try:
            drift = estimate_theta_min(phi, err, params.M, block_index=blk_idx,
                                       min_per_slice=pipe.min_slice_pairs)
            last_theta = drift.theta_min
        except InsufficientStatistics:
            drift = DriftEstimate(last_theta, blk_idx, math.nan)
        drift_rows.append((t_block, drift.theta_min, drift.min_qber))

    io.write_compensation_log(outdir / FILES["compensation"], freq_rows, drift_rows)
    if series_sample is not None:
        b, series = series_sample
        _write_series_csv(outdir / "ex_vs_dt.csv", series)
    return {"n_freq_blocks": n_blocks, "n_drift_blocks": len(drift_rows)}


def _freq_for_estimates(estimates, t_s: float) -> FreqEstimate:
    if not estimates:
        return FreqEstimate(0.0, 0.0, 0.0, 0.0, 0.0)
    starts = [e.block_time for e in estimates]
    idx = max(np.searchsorted(starts, t_s, side="right") - 1, 0)
    return estimates[int(idx)]


def _write_series_csv(path: Path, series):
    lines = ["dt_s,e_x,count"]
    for t, e, c in zip(series.grid, series.e_x, series.count):
        lines.append(f"{t:.9e},{e:.6f},{int(c)}")
    Path(path).write_text("\n".join(lines) + "\n")


def stage_sift(outdir: Path, params: ProtocolParams, pipe: PipelineConfig) -> dict:
    pairs = io.read_pairs(_require(outdir / FILES["pairs_q"], "sift"))
    records = io.read_records(_require(outdir / FILES["records"], "sift"))
    freq_rows, drift_rows = io.read_compensation_log(
        _require(outdir / FILES["compensation"], "sift")
    )
    manifest = io.read_manifest(_require(outdir / FILES["manifest"], "sift"))
    n_pulses = manifest.get("simulate", {}).get("n_quantum_pulses", 0)

    theta_df = np.zeros(len(pairs))
    theta_min = np.zeros(len(pairs))
    anchors_s = pairs.anchor_time * 1e-12
    if freq_rows:
        starts = np.array([r[0] for r in freq_rows])
        idx = np.clip(np.searchsorted(starts, anchors_s, side="right") - 1, 0, len(freq_rows) - 1)
        for i, row in enumerate(freq_rows):
            sel = idx == i
            if not np.any(sel):
                continue
            est = FreqEstimate(row[1], row[2], row[3], row[0], row[4])
            theta_df[sel] = theta_df_for_pairs(est, pairs.time_ps[sel])
    if drift_rows:
        starts = np.array([r[0] for r in drift_rows])
        idx = np.clip(np.searchsorted(starts, anchors_s, side="right") - 1, 0, len(drift_rows) - 1)
        theta_min = np.array([drift_rows[i][1] for i in idx])

    _, table = classify_and_tally(pairs, records, params, theta_df=theta_df,
                                  theta_min=theta_min, n_pulses=n_pulses)
    from .finitekey import REQUIRED_PATTERNS

    table.ensure_patterns(REQUIRED_PATTERNS)
    io.write_counts(outdir / FILES["counts"], table.validate(),
                    header="sifted pair tallies")
    if len(pairs):
        counts, edges, mean_ps = interval_histogram(pairs.span_ps, params.pulse_period_ps * 25)
        lines = ["span_lo_s,span_hi_s,count"]
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            lines.append(f"{lo * 1e-12:.9e},{hi * 1e-12:.9e},{int(c)}")
        (outdir / "pair_interval_histogram.csv").write_text("\n".join(lines) + "\n")
        mean_interval = mean_ps * 1e-12
    else:
        mean_interval = 0.0
    return {"n_pairs": len(pairs), "mean_interval_s": mean_interval,
            "total_tallied": table.total_pairs()}


def stage_analyze(outdir: Path, params: ProtocolParams, sec: SecurityParams,
                  counts_path=None) -> dict:
    path = Path(counts_path) if counts_path else outdir / FILES["counts"]
    table = io.ingest_counts(_require(path, "analyze"))
    result = key_length(table, params, sec)
    payload = _result_payload(result, source=str(path))
    (outdir / FILES["analysis"]).write_text(json.dumps(payload, indent=2) + "\n")
    return payload


def _result_payload(result, source: str) -> dict:
    inter = result.intermediates
    return {
        "source": source,
        "y111z_lower": result.y111z_lower,
        "e111pz_upper": result.e111pz_upper,
        "e_z": list(result.e_z),
        "e_x": result.e_x,
        "n_z": result.n_z,
        "l_min": result.l_min,
        "n_pulses": result.n_pulses,
        "rate_bpp": result.rate_bpp,
        "intermediates": {
            "y111z_expected": inter.y111z_expected,
            "t111x_expected": inter.t111x_expected,
            "t111x": inter.t111x,
            "y111x_expected": inter.y111x_expected,
            "y111x": inter.y111x,
            "e111x": inter.e111x,
            "gamma": inter.gamma,
            "exp_bounds": {
                "n_[" + ",".join(k) + "]": list(v) for k, v in inter.exp_bounds.items()
            },
        },
    }


def stage_report(outdir: Path) -> dict:
    analyses = []
    for path in sorted(outdir.glob("analysis*.json")):
        analyses.append(json.loads(path.read_text()))
    if not analyses:
        raise StageFailure("report", "no analysis results found")
    lines = ["source,n_z,y111z_lower,e111pz_upper,l_min,rate_bpp"]
    for a in analyses:
        lines.append(
            f"{a['source']},{a['n_z']},{a['y111z_lower']:.6e},"
            f"{a['e111pz_upper']:.6f},{a['l_min']:.6e},{a['rate_bpp']:.6e}"
        )
    (outdir / "key_rates.csv").write_text("\n".join(lines) + "\n")

    summary = ["analysis summary", "================"]
    for a in analyses:
        summary.append(f"source: {a['source']}")
        summary.append(f"  n_Z = {a['n_z']}, Y111Z >= {a['y111z_lower']:.4e}")
        summary.append(f"  e111PZ <= {a['e111pz_upper']:.4f}")
        ez = ", ".join(f"{v * 1e3:.3f}" for v in a["e_z"])
        summary.append(f"  e_Z (AB, AC, BC) = {ez} permil, e_X = {a['e_x']:.4f}")
        summary.append(f"  L_min = {a['l_min']:.4e} bits, rate = {a['rate_bpp']:.4e} bpp")
    comp = outdir / FILES["compensation"]
    if comp.exists():
        freq_rows, drift_rows = io.read_compensation_log(comp)
        lines = ["t_start_s,theta_min_rad,min_qber"]
        for t0, theta, q in drift_rows:
            lines.append(f"{t0:.3f},{theta:.9f},{q:.6f}")
        (outdir / "qber_vs_time.csv").write_text("\n".join(lines) + "\n")
        summary.append(f"compensation blocks: {len(freq_rows)} freq, {len(drift_rows)} drift")
    else:
        summary.append("compensation log absent; time-series files skipped")
    (outdir / "summary.txt").write_text("\n".join(summary) + "\n")
    return {"n_analyses": len(analyses)}


def run_segmented(config_path, outdir, n_segments: int,
                  overrides: dict | None = None, keep_segments: bool = False) -> dict:
    """Run simulate..sift per contiguous segment, merge tallies, analyze.

    Segments are consecutive [pipeline] n_sequences stretches of one long
    run (absolute sequence indexing keeps them bit-compatible with a
    monolithic run). Bounded memory: each segment's intermediates are
    dropped after its tallies merge, except the final segment's, which
    stay for inspection.
    """
    import shutil

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    params, sec, sim = load_config(config_path)
    pipe = load_pipeline_config(config_path)
    if overrides:
        pipe = dataclasses.replace(pipe, **{k: v for k, v in overrides.items()
                                            if k in {f.name for f in dataclasses.fields(pipe)}})
    merged = CountsTable()
    manifest = {
        "config": str(config_path),
        "config_sha256": io.config_digest(config_path),
        "seed": sim.seed,
        "stages": ["simulate", "pair", "compensate", "sift", "analyze", "report"],
        "n_segments": n_segments,
    }
    span_sum = 0.0
    pair_total = 0
    for seg in range(n_segments):
        seg_dir = outdir / f"segment_{seg:03d}"
        seg_over = dict(overrides or {})
        run_pipeline(config_path, ["simulate", "pair", "compensate", "sift"],
                     seg_dir, overrides=seg_over,
                     seq_start=seg * pipe.n_sequences)
        seg_manifest = io.read_manifest(seg_dir / FILES["manifest"])
        merged.merge(io.ingest_counts(seg_dir / FILES["counts"]))
        span_sum += seg_manifest["sift"]["mean_interval_s"] * seg_manifest["sift"]["n_pairs"]
        pair_total += seg_manifest["sift"]["n_pairs"]
        if seg < n_segments - 1 and not keep_segments:
            shutil.rmtree(seg_dir)
    io.write_counts(outdir / FILES["counts"], merged.validate(),
                    header=f"merged tallies over {n_segments} segments")
    manifest["sift"] = {
        "n_pairs": pair_total,
        "mean_interval_s": span_sum / pair_total if pair_total else 0.0,
        "total_tallied": merged.total_pairs(),
    }
    manifest["simulate"] = {
        "n_sequences": n_segments * pipe.n_sequences,
        "n_quantum_pulses": n_segments * pipe.n_sequences * sim.plan.n_quantum,
    }
    io.write_manifest(outdir / FILES["manifest"], manifest)
    manifest["analyze"] = stage_analyze(outdir, params, sec)
    manifest["report"] = stage_report(outdir)
    io.write_manifest(outdir / FILES["manifest"], manifest)
    return manifest


def run_pipeline(config_path, stages, outdir, counts_path=None,
                 overrides: dict | None = None, seq_start: int = 0) -> dict:
    """Execute the requested stages in canonical order; returns the manifest."""
    for s in stages:
        if s not in STAGES:
            raise StageFailure(s, f"unknown stage; valid stages are {', '.join(STAGES)}")
    stages = [s for s in STAGES if s in stages]
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    params, sec, sim = load_config(config_path)
    pipe = load_pipeline_config(config_path)
    if overrides:
        sim = dataclasses.replace(sim, **{k: v for k, v in overrides.items()
                                          if k in {f.name for f in dataclasses.fields(sim)}})
        pipe = dataclasses.replace(pipe, **{k: v for k, v in overrides.items()
                                            if k in {f.name for f in dataclasses.fields(pipe)}})

    manifest_path = outdir / FILES["manifest"]
    manifest = io.read_manifest(manifest_path) if manifest_path.exists() else {}
    manifest.update({
        "config": str(config_path),
        "config_sha256": io.config_digest(config_path),
        "seed": sim.seed,
        "stages": list(stages),
    })
    for stage in stages:
        try:
            if stage == "simulate":
                manifest["simulate"] = stage_simulate(outdir, params, sim, pipe,
                                                      seq_start=seq_start)
            elif stage == "pair":
                manifest["pair"] = stage_pair(outdir, params)
            elif stage == "compensate":
                manifest["compensate"] = stage_compensate(outdir, params, pipe)
            elif stage == "sift":
                io.write_manifest(manifest_path, manifest)
                manifest["sift"] = stage_sift(outdir, params, pipe)
            elif stage == "analyze":
                manifest["analyze"] = stage_analyze(outdir, params, sec, counts_path)
            elif stage == "report":
                manifest["report"] = stage_report(outdir)
        except StageFailure:
            raise
        except Exception as exc:  # wrap with stage context
            raise StageFailure(stage, repr(exc)) from exc
        io.write_manifest(manifest_path, manifest)
    return manifest
