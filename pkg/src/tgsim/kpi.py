"""KPIs over drop results: satisfaction, capacity, delay percentiles, PRB
load, broadband throughput and histograms, plus the CSV/JSON writers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import ScenarioConfig, config_to_dict
from .engine import DropResult, FrameRecord


def frame_delay_ms(fr: FrameRecord) -> float:
    """Application-layer delay; undelivered frames count as infinite."""
    if fr.completion_ms is None:
        return math.inf
    return fr.completion_ms - fr.arrival_ms


def user_satisfied(frames: Sequence[FrameRecord], pdb_ms: Optional[float] = None,
                   reliability: float = 0.99) -> bool:
    """True when the user received at least `reliability` of its frames in
    time. A frame is in time when fully delivered no later than arrival+PDB."""
    if not frames:
        raise ValueError("satisfaction needs a non-empty frame log")
    on_time = 0
    for fr in frames:
        deadline = fr.deadline_ms if pdb_ms is None else fr.arrival_ms + pdb_ms
        if fr.completion_ms is not None and fr.completion_ms <= deadline:
            on_time += 1
    return on_time / len(frames) >= reliability


def frames_by_flow(drops: Sequence[DropResult], warmup_ms: float = 0.0
                   ) -> Dict[tuple, List[FrameRecord]]:
    """Group frame records per (drop, flow), dropping warm-up arrivals."""
    out: Dict[tuple, List[FrameRecord]] = {}
    for d in drops:
        for fr in d.frames:
            if fr.arrival_ms < warmup_ms:
                continue
            out.setdefault((d.drop_index, fr.flow), []).append(fr)
    return out


def satisfied_fraction(drops: Sequence[DropResult], cfg: ScenarioConfig,
                       pdb_ms: Optional[float] = None) -> float:
    per_user = frames_by_flow(drops, cfg.warmup_ms)
    if not per_user:
        return 0.0
    good = sum(user_satisfied(frames, pdb_ms) for frames in per_user.values())
    return good / len(per_user)


@dataclass
class CapacityCurve:
    points: List[tuple]          # (users_per_cell, satisfied_fraction)
    capacity: int
    pdb_ms: float
    interpolated: Optional[float] = None

    @classmethod
    def from_points(cls, points: Dict[int, float], pdb_ms: float,
                    threshold: float = 0.9) -> "CapacityCurve":
        """Capacity: largest evaluated load keeping at least `threshold`
        of users satisfied; zero when no point qualifies."""
        items = sorted(points.items())
        qualifying = [u for u, f in items if f >= threshold]
        capacity = max(qualifying) if qualifying else 0
        interp = _interpolate_capacity(items, threshold)
        return cls(points=items, capacity=capacity, pdb_ms=pdb_ms,
                   interpolated=interp)


def _interpolate_capacity(items: List[tuple], threshold: float) -> Optional[float]:
    # Linear crossing between the last qualifying point and the next one.
    best = None
    for (u0, f0), (u1, f1) in zip(items, items[1:]):
        if f0 >= threshold > f1:
            best = u0 + (f0 - threshold) / (f0 - f1) * (u1 - u0)
    if best is None and items and items[-1][1] >= threshold:
        best = float(items[-1][0])
    return best


def xr_capacity(per_load_fractions: Dict[int, float], pdb_ms: float,
                threshold: float = 0.9) -> CapacityCurve:
    if not per_load_fractions:
        raise ValueError("capacity needs at least one evaluated load point")
    return CapacityCurve.from_points(per_load_fractions, pdb_ms, threshold)


def delay_percentile(delays_ms: Sequence[float], p: float) -> float:
    """Nearest-rank empirical percentile over the given delays."""
    if len(delays_ms) == 0:
        raise ValueError("empty delay log")
    if not 0.0 < p <= 100.0:
        raise ValueError("percentile must be in (0, 100]")
    data = np.sort(np.asarray(delays_ms, dtype=float))
    rank = max(1, math.ceil(p / 100.0 * len(data)))
    return float(data[rank - 1])


def all_frame_delays(drops: Sequence[DropResult], warmup_ms: float = 0.0
                     ) -> List[float]:
    out = []
    for d in drops:
        for fr in d.frames:
            if fr.arrival_ms >= warmup_ms:
                out.append(frame_delay_ms(fr))
    return out


def prb_load_per_cell(drops: Sequence[DropResult]) -> np.ndarray:
    """Mean occupied-PRB fraction per (drop, cell) over DL-capable slots."""
    rows = []
    for d in drops:
        if d.prb_dl_slots == 0:
            rows.append(np.zeros_like(d.prb_occupied_sum))
            continue
        rows.append(d.prb_occupied_sum / (d.prb_dl_slots * d.n_prb))
    return np.concatenate(rows) if rows else np.zeros(0)


def embb_throughput_mbps(drops: Sequence[DropResult], cfg: ScenarioConfig
                         ) -> Dict[tuple, float]:
    """Per (drop, broadband flow) delivered rate over the measured window."""
    window_s = cfg.sim_duration_s - cfg.warmup_ms / 1000.0
    out = {}
    for d in drops:
        for flow, bits in sorted(d.embb_served_bits.items()):
            out[(d.drop_index, flow)] = bits / window_s / 1e6
    return out


def scenario_histogram(drops: Sequence[DropResult]) -> dict:
    """Normalized decode-scenario and propagation-status frequencies."""
    sc = np.zeros(9, dtype=np.int64)
    ps = np.zeros(4, dtype=np.int64)
    for d in drops:
        sc += d.scenario_counts
        ps += d.propagation_counts
    return {
        "scenario_counts": sc,
        "scenario_freq": sc / sc.sum() if sc.sum() else sc.astype(float),
        "propagation_counts": ps,
        "propagation_freq": ps / ps.sum() if ps.sum() else ps.astype(float),
    }


def mcs_distribution(drops: Sequence[DropResult]) -> np.ndarray:
    total = np.sum(np.stack([d.mcs_counts for d in drops]), axis=0)
    s = total.sum()
    return total / s if s else total.astype(float)


def satisfaction_ci(n_users: int, fraction: float, confidence: float = 0.99
                    ) -> float:
    """Normal-approximation half-width of the satisfied-fraction estimate."""
    if n_users == 0:
        return math.nan
    z = {0.9: 1.6449, 0.95: 1.96, 0.99: 2.5758}.get(confidence, 2.5758)
    return z * math.sqrt(max(fraction * (1.0 - fraction), 1e-12) / n_users)


# --------------------------------------------------------------------------
# Summaries and writers
# --------------------------------------------------------------------------

@dataclass
class RunSummary:
    """Aggregated KPIs of one campaign at one (scheme, load) point."""

    scheme: str
    csi_mode: str
    users_per_cell: int
    n_users: int
    satisfied_fraction: float
    satisfied_fraction_by_pdb: Dict[float, float]
    p50_ms: float
    p99_ms: float
    prb_load_cells: np.ndarray
    embb_mbps: Dict[tuple, float]
    mcs_freq: np.ndarray
    scenario: dict
    xr_retx: int
    embb_retx: int
    tether_bits: int
    ci99: float


def summarize(drops: Sequence[DropResult], cfg: ScenarioConfig,
              scheme: str, extra_pdbs: Sequence[float] = ()) -> RunSummary:
    per_user = frames_by_flow(drops, cfg.warmup_ms)
    frac = satisfied_fraction(drops, cfg)
    by_pdb = {cfg.pdb_ms: frac}
    for pdb in extra_pdbs:
        by_pdb[pdb] = satisfied_fraction(drops, cfg, pdb_ms=pdb)
    delays = all_frame_delays(drops, cfg.warmup_ms)
    return RunSummary(
        scheme=scheme, csi_mode=cfg.csi_mode,
        users_per_cell=cfg.users_per_cell, n_users=len(per_user),
        satisfied_fraction=frac, satisfied_fraction_by_pdb=by_pdb,
        p50_ms=delay_percentile(delays, 50) if delays else math.nan,
        p99_ms=delay_percentile(delays, 99) if delays else math.nan,
        prb_load_cells=prb_load_per_cell(drops),
        embb_mbps=embb_throughput_mbps(drops, cfg),
        mcs_freq=mcs_distribution(drops),
        scenario=scenario_histogram(drops),
        xr_retx=sum(d.xr_retx_count for d in drops),
        embb_retx=sum(d.embb_retx_count for d in drops),
        tether_bits=sum(d.tether_bits for d in drops),
        ci99=satisfaction_ci(len(per_user), frac))


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_capacity_csv(path: str, rows: List[dict]) -> None:
    """Rows: scheme, csi_mode, pdb_ms, users_per_cell, satisfied_fraction,
    capacity_flag."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scheme,csi_mode,pdb_ms,users_per_cell,satisfied_fraction,capacity_flag\n")
        for r in rows:
            fh.write(f"{r['scheme']},{r['csi_mode']},{_fmt(r['pdb_ms'])},"
                     f"{r['users_per_cell']},{_fmt(r['satisfied_fraction'])},"
                     f"{int(r['capacity_flag'])}\n")


def write_delay_csv(path: str, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scheme,users_per_cell,p50_ms,p99_ms\n")
        for r in rows:
            fh.write(f"{r['scheme']},{r['users_per_cell']},"
                     f"{_fmt(r['p50_ms'])},{_fmt(r['p99_ms'])}\n")


def write_prb_csv(path: str, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scheme,cell,mean_load\n")
        for r in rows:
            fh.write(f"{r['scheme']},{r['cell']},{_fmt(r['mean_load'])}\n")


def write_embb_csv(path: str, rows: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scheme,user,mbps\n")
        for r in rows:
            fh.write(f"{r['scheme']},{r['user']},{_fmt(r['mbps'])}\n")


def write_summary_json(path: str, cfg: ScenarioConfig,
                       summaries: List[RunSummary],
                       capacity: Optional[dict] = None) -> None:
    doc = {
        "config": config_to_dict(cfg),
        "results": [_summary_dict(s) for s in summaries],
    }
    if capacity is not None:
        doc["capacity"] = capacity
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _summary_dict(s: RunSummary) -> dict:
    return {
        "scheme": s.scheme,
        "csi_mode": s.csi_mode,
        "users_per_cell": s.users_per_cell,
        "n_users": s.n_users,
        "satisfied_fraction": s.satisfied_fraction,
        "satisfied_fraction_by_pdb": {str(k): v for k, v
                                      in sorted(s.satisfied_fraction_by_pdb.items())},
        "p50_ms": None if math.isnan(s.p50_ms) else s.p50_ms,
        "p99_ms": _json_delay(s.p99_ms),
        "median_prb_load": (float(np.median(s.prb_load_cells))
                            if len(s.prb_load_cells) else None),
        "embb_mbps_median": (float(np.median(list(s.embb_mbps.values())))
                             if s.embb_mbps else None),
        "mcs_freq": [float(x) for x in s.mcs_freq],
        "scenario_freq": [float(x) for x in s.scenario["scenario_freq"]],
        "propagation_freq": [float(x) for x in s.scenario["propagation_freq"]],
        "xr_retx": s.xr_retx,
        "embb_retx": s.embb_retx,
        "tether_bits": s.tether_bits,
        "ci99_half_width": s.ci99,
    }


def _json_delay(x: float):
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf"
    return x


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")
