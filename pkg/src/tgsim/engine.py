"""Drop execution: the two-phase slot loop, per-drop state and campaigns.

Each slot: (1) resolve HARQ feedback that became actionable, admit newly
arrived frames, and let every cell schedule against the previous slot's
knowledge; (2) with the slot-wide activity snapshot fixed, evaluate all
receptions, resolve in-group cooperation, credit delivered bits and emit
feedback and CSI with their availability delays. Scheduling never sees
information before its availability slot.

All randomness is drawn from named substreams keyed by (drop seed, purpose,
entity), so matched-seed runs of different cooperation schemes share
topology, traffic and channel realizations.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import channel as chan
from . import harq, phy, scheduler, topology, traffic
from .config import ScenarioConfig
from .linkadapt import (ABSENT, ACK, NACK, CsiReport, OllaState,
                        group_sinr, joint_feedback, olla_update)
from .rng import substream

log = logging.getLogger("tgsim")


@dataclass
class TraceOptions:
    channel: bool = False      # (slot, rx, sinr_db)
    olla: bool = False         # (slot, flow, offset_db, hf_j)
    events: bool = False       # (slot, flow, scenario, hf ledger, retx, tx_count)
    arrivals: bool = False     # (flow, frame, arrival_ms, size_bits)
    allocations: bool = False  # (slot, cell, flow, prb_lo, prb_hi, mcs, kind)


@dataclass
class FrameRecord:
    flow: int
    cell: int
    fid: int
    arrival_ms: float
    size_bits: int
    deadline_ms: float
    delivered_bits: int
    completion_ms: Optional[float]


@dataclass
class DropResult:
    drop_index: int
    drop_seed: int
    n_slots: int
    frames: List[FrameRecord]
    prb_occupied_sum: np.ndarray     # per cell, PRB-slots post-warmup
    prb_dl_slots: int                # DL-capable slots post-warmup
    n_prb: int
    scenario_counts: np.ndarray      # attempts per decode scenario 1..9
    propagation_counts: np.ndarray   # group serving-link LOS classes
    mcs_counts: np.ndarray           # new transmissions per MCS index
    xr_retx_count: int
    embb_retx_count: int
    tether_bits: int
    embb_served_bits: Dict[int, int]
    generated_bits: Dict[int, int]
    delivered_bits: Dict[int, int]
    lost_bits: Dict[int, int]
    traces: Dict[str, list] = field(default_factory=dict)


class _FlowState:
    __slots__ = ("fid", "kind", "cell", "rx_x", "rx_t", "frames", "arr_ptr",
                 "queue", "queued_bits", "olla", "csi_cur", "csi_pending",
                 "proc_seq", "local_idx", "embb_queue")

    def __init__(self, fid, kind, cell, rx_x, rx_t, local_idx):
        self.fid = fid
        self.kind = kind            # "xr" | "embb"
        self.cell = cell
        self.rx_x = rx_x
        self.rx_t = rx_t
        self.frames: List[traffic.XrFrame] = []
        self.arr_ptr = 0
        self.queue: List = []       # [frame, remaining_unassigned_bits]
        self.queued_bits = 0
        self.olla: Optional[OllaState] = None
        self.csi_cur: Dict[int, CsiReport] = {}
        self.csi_pending: Dict[int, List[CsiReport]] = {}
        self.proc_seq = 0
        self.local_idx = local_idx
        self.embb_queue: Optional[traffic.EmbbQueue] = None


class _PendingResolution:
    __slots__ = ("proc", "hf_x1", "hf_t1", "hf_x2", "scenario", "delivered")

    def __init__(self, proc, hf_x1, hf_t1, hf_x2, scenario, delivered):
        self.proc = proc
        self.hf_x1 = hf_x1
        self.hf_t1 = hf_t1
        self.hf_x2 = hf_x2
        self.scenario = scenario
        self.delivered = delivered


class DropRunner:
    """Owns every piece of mutable state of one drop execution."""

    def __init__(self, cfg: ScenarioConfig, drop_index: int,
                 traces: Optional[TraceOptions] = None):
        self.cfg = cfg
        self.drop_index = drop_index
        self.drop_seed = cfg.seed + drop_index
        self.traces = traces or TraceOptions()
        self.trace_rows: Dict[str, list] = {}
        for name in ("channel", "olla", "events", "arrivals", "allocations"):
            if getattr(self.traces, name):
                self.trace_rows[name] = []

        self.topo = topology.generate_drop(cfg, self.drop_seed)
        self.model = self._build_blep_model(cfg)
        self.cqi_table = phy.CqiTable(self.model)
        self.channel = self._build_channel()
        self._credit_time_ms = 0.0
        self.flows: List[_FlowState] = []
        self.cell_flows: List[List[_FlowState]] = [[] for _ in self.topo.cells]
        self._build_flows()
        self.pf = [scheduler.PfState(len(fl), cfg.pf_window_slots,
                                     cfg.slot_ms / 1000.0)
                   for fl in self.cell_flows]
        self.retx_queue: List[List[harq.HarqProcess]] = [[] for _ in self.topo.cells]
        self.resolutions: Dict[int, List[_PendingResolution]] = {}
        self.rng_dec = [substream(self.drop_seed, "decode", rx)
                        for rx in range(self.topo.n_rx)]
        self.rng_redraw = [substream(self.drop_seed, "redraw", g.ue_x)
                           for g in self.topo.groups]
        self._redraw_by_flow = {g.flow: i for i, g in enumerate(self.topo.groups)}

        # Timing constants in slots.
        self.csi_period = max(1, int(round(cfg.csi_period_ms / cfg.slot_ms)))
        self.csi_delay = int(round(cfg.csi_delay_ms / cfg.slot_ms))
        self.warmup_slot = int(math.ceil(cfg.warmup_ms / cfg.slot_ms))
        self._next_meas = 0
        self._proc_uid = 0

        # Sizing grids per slot format (process-wide cache).
        self.grids = {k: phy.tbs_grid(scheduler.data_symbols(k), cfg.n_prb)
                      for k in ("D", "S")}
        self.rng_cb = [substream(self.drop_seed, "cb-offsets", fl)
                       for fl in range(len(self.topo.groups)
                                       + len(self.topo.embb_flows))]
        # Hot-path lookups: MCS selection thresholds and spectral
        # efficiencies as plain lists (bisect beats tiny-array searchsorted).
        self._mcs_thr = [self.model.sinr_threshold(m, cfg.target_bler)
                         for m in range(len(self.model.table))]
        self._mcs_se = [e.spectral_efficiency for e in self.model.table.entries]
        self._served_buf = [np.zeros(len(fl)) for fl in self.cell_flows]
        self._full_activity = np.full(self.topo.n_cells, cfg.n_prb,
                                      dtype=np.int64)

        # KPI accumulators
        n_cells = self.topo.n_cells
        self.prb_occupied_sum = np.zeros(n_cells)
        self.prb_dl_slots = 0
        self.scenario_counts = np.zeros(9, dtype=np.int64)
        self.mcs_counts = np.zeros(len(self.model.table), dtype=np.int64)
        self.xr_retx_count = 0
        self.embb_retx_count = 0
        self.tether_bits = 0
        self.embb_served: Dict[int, int] = {
            f["flow"]: 0 for f in self.topo.embb_flows}

    # -- construction ------------------------------------------------------

    @staticmethod
    def _build_blep_model(cfg: ScenarioConfig) -> phy.BlepModel:
        if cfg.blep_lut_path:
            return phy.BlepModel.from_lut_csv(cfg.blep_lut_path,
                                              ref_size_bits=cfg.blep_ref_size_bits)
        return phy.BlepModel(impl_loss_db=cfg.blep_impl_loss_db,
                             slope_db=cfg.blep_slope_db,
                             ref_size_bits=cfg.blep_ref_size_bits)

    def _build_channel(self) -> chan.ChannelState:
        cfg = self.cfg
        params = chan.FadingParams.from_config(cfg)
        rngs = [substream(self.drop_seed, "fading", rx)
                for rx in range(self.topo.n_rx)]
        fading = chan.FadingField(self.topo.n_rx, self.topo.n_cells, params, rngs)
        return chan.ChannelState(self.topo.static_rx_dbm, self.topo.serving,
                                 fading, chan.noise_per_prb_dbm(cfg), cfg.n_prb,
                                 cfg.interference_suppression_db)

    def _build_flows(self) -> None:
        cfg = self.cfg
        for g in self.topo.groups:
            fl = _FlowState(g.flow, "xr", g.cell, g.ue_x, g.ue_t,
                            len(self.cell_flows[g.cell]))
            fl.frames = traffic.generate_frames(
                cfg, substream(self.drop_seed, "traffic", g.flow))
            fl.olla = self._new_olla()
            if "arrivals" in self.trace_rows:
                for fr in fl.frames:
                    self.trace_rows["arrivals"].append(
                        (g.flow, fr.fid, fr.arrival_ms, fr.size_bits))
            self.flows.append(fl)
            self.cell_flows[g.cell].append(fl)
        for rec in self.topo.embb_flows:
            fl = _FlowState(rec["flow"], "embb", rec["cell"], rec["rx"], None,
                            len(self.cell_flows[rec["cell"]]))
            fl.embb_queue = traffic.EmbbQueue()
            fl.olla = self._new_olla()
            self.flows.append(fl)
            self.cell_flows[rec["cell"]].append(fl)
        self.flow_by_id = {fl.fid: fl for fl in self.flows}

    def _new_olla(self) -> OllaState:
        o = self.cfg.olla
        return OllaState(offset_db=o.init_offset_db, delta_up_db=o.delta_up_db,
                         delta_down_db=o.delta_down_db,
                         target_bler=self.cfg.target_bler,
                         min_offset_db=o.min_offset_db,
                         max_offset_db=o.max_offset_db)

    # -- helpers -----------------------------------------------------------

    def _slot_ms(self, slot: int) -> float:
        return slot * self.cfg.slot_ms

    def _scheme(self, fl: _FlowState) -> str:
        if fl.kind == "xr" and self.cfg.is_tgr():
            return self.cfg.coop_scheme
        return "none"

    def _feedback_due(self, rx_slot: int, hf_x2_pending: bool) -> int:
        """First slot at which the gNB can act on feedback for `rx_slot`.

        The feedback rides the first uplink-capable slot that ends after the
        UE processing time has elapsed; the gNB acts from the next slot on.
        """
        # Ready at (rx_slot+1) + proc_symbols/14; slot u covers it if u+1 >=
        # ready, i.e. u >= rx_slot + proc/14, so u starts at rx_slot + 1.
        pattern = self.cfg.tdd_pattern
        u = rx_slot + 1
        while not scheduler.is_uplink_capable(scheduler.slot_type(u, pattern)):
            u += 1
        due = u + 1
        if hf_x2_pending:
            due += self.cfg.hf2_timeout_slots
        return due

    def _queue_resolution(self, due: int, pend: _PendingResolution) -> None:
        self.resolutions.setdefault(due, []).append(pend)

    # -- slot phases ---------------------------------------------------------

    def _admit_frames(self, slot: int) -> None:
        t = self._slot_ms(slot)
        for fl in self.flows:
            if fl.kind != "xr":
                continue
            frames = fl.frames
            while fl.arr_ptr < len(frames) and frames[fl.arr_ptr].arrival_ms <= t:
                fr = frames[fl.arr_ptr]
                fl.queue.append([fr, fr.size_bits])
                fl.queued_bits += fr.size_bits
                fl.arr_ptr += 1

    def _process_resolutions(self, slot: int) -> None:
        pends = self.resolutions.pop(slot, None)
        if not pends:
            return
        for p in pends:
            proc = p.proc
            fl = self.flow_by_id[proc.flow]
            scheme = self._scheme(fl)
            if self.cfg.cb_mode == "CBG":
                # Offset direction follows the post-cooperation outcome so it
                # stays coupled to the CB-group retransmission decision.
                hf_j = ACK if p.delivered else NACK
                retx = (not p.delivered) and proc.retx_cbg_mask is not None \
                    and bool(proc.retx_cbg_mask.any())
            else:
                hf_j = joint_feedback(scheme, p.hf_x1, p.hf_t1, p.hf_x2)
                retx = hf_j == NACK
            olla_update(fl.olla, hf_j)
            if "olla" in self.trace_rows:
                self.trace_rows["olla"].append(
                    (slot, fl.fid, fl.olla.offset_db, hf_j))
            retx_granted = False
            if retx and proc.tx_count < self.cfg.max_retx:
                self.retx_queue[fl.cell].append(proc)
                retx_granted = True
            elif retx:
                self._retire_lost(proc)
            else:
                proc.done = True
            if "events" in self.trace_rows:
                self.trace_rows["events"].append(
                    (slot, fl.fid, p.scenario, p.hf_x1, p.hf_t1, p.hf_x2,
                     retx_granted, proc.tx_count))

    def _retire_lost(self, proc: harq.HarqProcess) -> None:
        """Retransmissions exhausted: unrecovered payload bits are lost."""
        proc.done = True
        if self.cfg.cb_mode == "CBG" and proc.delivered_cb is not None:
            undelivered = ~proc.delivered_cb
            if not undelivered.any():
                return
            tb = proc.tb
            for k in np.flatnonzero(undelivered):
                self._credit_range(proc, int(tb.cb_payload_lo[k]),
                                   int(tb.cb_payload_hi[k]), lost=True)
        else:
            for frame, bits in proc.payload:
                if frame is not None:
                    frame.lost_bits += bits

    # -- scheduling ----------------------------------------------------------

    def _build_candidates(self, cell: int, kind: str, slot: int) -> tuple:
        """Per-class candidate lists plus per-candidate build info."""
        cfg = self.cfg
        grid = self.grids[kind]
        info: Dict[int, dict] = {}
        xr_retx, xr_new, embb_retx, embb_new = [], [], [], []

        # At most one block per flow per slot: pick the first queued
        # retransmission per flow that fits this slot format.
        staying: List[harq.HarqProcess] = []
        for proc in self.retx_queue[cell]:
            fl = self.flow_by_id[proc.flow]
            if fl.local_idx in info:
                staying.append(proc)
                continue
            bits, cb_mask = harq.build_retransmission(proc, cfg.cb_mode)
            demand = grid.min_prb(bits, proc.tb.mcs)
            if demand is None:
                # Does not fit this slot format; wait for a D slot.
                staying.append(proc)
                continue
            se = self.model.table[proc.tb.mcs].spectral_efficiency
            cand = scheduler.Candidate(fl.local_idx, demand, se, False)
            info[fl.local_idx] = {"kind": "retx", "proc": proc, "flow": fl,
                                  "cb_mask": cb_mask}
            (xr_retx if fl.kind == "xr" else embb_retx).append(cand)
        self.retx_queue[cell] = staying
        offered_retx = [(li, meta["proc"]) for li, meta in info.items()
                        if meta["kind"] == "retx"]

        thr = self._mcs_thr
        for fl in self.cell_flows[cell]:
            if fl.local_idx in info:
                continue  # one transport block per flow per slot
            if fl.kind == "xr" and fl.queued_bits <= 0:
                continue
            gamma = self._flow_group_sinr(fl, slot)
            if gamma is None:
                continue
            mcs = bisect_right(thr, gamma - fl.olla.offset_db) - 1
            if mcs < 0:
                mcs = 0
            se = self._mcs_se[mcs]
            if fl.kind == "xr":
                want = min(fl.queued_bits, grid.size(mcs, cfg.n_prb))
                demand = grid.min_prb(want, mcs) or cfg.n_prb
                xr_new.append(scheduler.Candidate(fl.local_idx, demand, se, True))
            else:
                embb_new.append(scheduler.Candidate(fl.local_idx, cfg.n_prb, se, True))
            info[fl.local_idx] = {"kind": "new", "flow": fl, "mcs": mcs}
        return [xr_retx, xr_new, embb_retx, embb_new], info, offered_retx

    def _flow_group_sinr(self, fl: _FlowState, slot: int) -> Optional[float]:
        """Newest available CSI combined per the reporting mode."""
        self._promote_csi(fl, slot)
        csi_x = fl.csi_cur.get(fl.rx_x)
        if csi_x is None:
            return None
        if fl.kind == "xr" and self.cfg.is_tgr() and self.cfg.csi_mode == "Best":
            csi_t = fl.csi_cur.get(fl.rx_t)
            if csi_t is None:
                return None
            return group_sinr(csi_x, csi_t, "Best")
        return group_sinr(csi_x, None, "UEX")

    def _promote_csi(self, fl: _FlowState, slot: int) -> None:
        for rx, pend in fl.csi_pending.items():
            while pend and pend[0].available_slot <= slot:
                fl.csi_cur[rx] = pend.pop(0)

    # -- reception -----------------------------------------------------------

    def _take_payload(self, fl: _FlowState, bits: int) -> list:
        """Pop `bits` from the flow queue as (frame, bits) segments."""
        if fl.kind == "embb":
            return [(None, bits)]
        segs = []
        left = bits
        while left > 0 and fl.queue:
            head = fl.queue[0]
            take = min(left, head[1])
            segs.append((head[0], take))
            head[1] -= take
            fl.queued_bits -= take
            left -= take
            if head[1] == 0:
                fl.queue.pop(0)
        return segs

    def _new_process(self, fl: _FlowState, mcs: int, n_prb: int,
                     kind: str) -> harq.HarqProcess:
        cfg = self.cfg
        size = self.grids[kind].size(mcs, n_prb)
        tb = phy.segment_tb(size, uid=self._proc_uid, mcs=mcs)
        self._proc_uid += 1
        phy.draw_cb_sinr_offsets(tb, cfg.per_cb_sinr_std_db, self.rng_cb[fl.fid])
        self.model.prepare_tb(tb)
        payload = self._take_payload(fl, min(size, fl.queued_bits)
                                     if fl.kind == "xr" else size)
        proc = harq.HarqProcess(proc_id=fl.proc_seq, flow=fl.fid, tb=tb,
                                payload=payload, n_prb_initial=n_prb)
        fl.proc_seq += 1
        # Payload bit offsets within the block, for CB-granular crediting.
        off = 0
        segs = []
        for frame, bits in payload:
            segs.append((frame, off, off + bits))
            off += bits
        proc.payload_segs = segs
        return proc

    def _credit_range(self, proc: harq.HarqProcess, lo: int, hi: int,
                      lost: bool = False) -> None:
        slot_end_ms = self._credit_time_ms
        for frame, s, e in proc.payload_segs:
            a, b = max(lo, s), min(hi, e)
            if a >= b:
                continue
            if frame is None:
                if not lost and slot_end_ms >= self.cfg.warmup_ms:
                    self.embb_served[proc.flow] += b - a
                continue
            if lost:
                frame.lost_bits += b - a
            else:
                frame.delivered_bits += b - a
                if frame.delivered_bits >= frame.size_bits and frame.completion_ms is None:
                    frame.completion_ms = slot_end_ms

    # -- the slot loop -------------------------------------------------------

    def run(self) -> DropResult:
        cfg = self.cfg
        n_slots = cfg.n_slots
        pattern = cfg.tdd_pattern
        measuring_rx = self._measuring_receivers()
        measuring_idx = np.array([rx for _, rx in measuring_rx], dtype=int)
        old_err = np.seterr(divide="ignore")

        for slot in range(n_slots):
            kind = scheduler.slot_type(slot, pattern)
            self._process_resolutions(slot)
            self._admit_frames(slot)
            if not scheduler.is_downlink(kind):
                continue

            # Phase 1: all cells schedule against the same prior state.
            all_grants = []
            occupied = np.zeros(self.topo.n_cells, dtype=np.int64)
            for cell in range(self.topo.n_cells):
                classes, info, offered_retx = self._build_candidates(cell, kind, slot)
                grants, _ = scheduler.schedule_classes(classes, cfg.n_prb,
                                                       self.pf[cell])
                granted_flows = {g.flow for g in grants}
                missed = [proc for li, proc in offered_retx
                          if li not in granted_flows]
                if missed:
                    # Unserved retransmissions keep their place at the head.
                    self.retx_queue[cell] = missed + self.retx_queue[cell]
                all_grants.append((cell, grants, info))
                if grants:
                    occupied[cell] = max(g.prb_hi for g in grants)

            post_warmup = slot >= self.warmup_slot
            if post_warmup:
                self.prb_dl_slots += 1
                self.prb_occupied_sum += occupied

            # Phase 2: receptions under the frozen activity snapshot.
            self._credit_time_ms = self._slot_ms(slot + 1)
            for cell, grants, info in all_grants:
                served = self._served_buf[cell]
                served[:] = 0.0
                for g in grants:
                    meta = info[g.flow]
                    fl = meta["flow"]
                    if meta["kind"] == "new":
                        proc = self._new_process(fl, meta["mcs"], g.n_prb, kind)
                        cb_mask = None
                        if post_warmup:
                            self.mcs_counts[proc.tb.mcs] += 1
                    else:
                        proc = meta["proc"]
                        proc.tx_count += 1
                        cb_mask = meta["cb_mask"]
                        if post_warmup:
                            if fl.kind == "xr":
                                self.xr_retx_count += 1
                            else:
                                self.embb_retx_count += 1
                    served[g.flow] = sum(b for _, b in proc.payload)
                    if "allocations" in self.trace_rows:
                        self.trace_rows["allocations"].append(
                            (slot, cell, fl.fid, g.prb_lo, g.prb_hi,
                             proc.tb.mcs, meta["kind"]))
                    self._receive(fl, proc, g, slot, occupied, cb_mask,
                                  post_warmup)
                self.pf[cell].update(served)

            # CSI measurement. Reference symbols are transmitted regardless
            # of data load, so the measurement sees every neighbor at full
            # band; the outer loop recovers any slack versus the actual
            # load-dependent interference on data.
            if slot >= self._next_meas and len(measuring_idx):
                self._measure_csi(measuring_rx, measuring_idx, slot,
                                  self._full_activity)
                self._next_meas = slot + self.csi_period

        np.seterr(**old_err)
        return self._finalize(n_slots)

    def _measuring_receivers(self) -> list:
        out = []
        for fl in self.flows:
            out.append((fl, fl.rx_x))
            if (fl.kind == "xr" and self.cfg.is_tgr()
                    and self.cfg.csi_mode == "Best"):
                out.append((fl, fl.rx_t))
        return out

    def _measure_csi(self, measuring_rx, rx_idx: np.ndarray, slot: int,
                     occupied) -> None:
        sinrs = self.channel.sinr_wideband_many(rx_idx, slot, occupied)
        avail = slot + self.csi_delay
        trace = self.trace_rows.get("channel")
        for (fl, rx), sinr in zip(measuring_rx, sinrs):
            rep = CsiReport(reporter="UEX" if rx == fl.rx_x else "UET",
                            sinr_db=sinr,
                            cqi=self.cqi_table.cqi_from_sinr(sinr),
                            measured_slot=slot, available_slot=avail)
            fl.csi_pending.setdefault(rx, []).append(rep)
            if trace is not None:
                trace.append((slot, rx, sinr))

    def _receive(self, fl: _FlowState, proc: harq.HarqProcess,
                 grant: scheduler.Grant, slot: int, occupied, cb_mask,
                 post_warmup: bool) -> None:
        cfg = self.cfg
        cbg_mode = cfg.cb_mode == "CBG"
        is_group = fl.kind == "xr" and cfg.is_tgr()
        if is_group:
            sinr_x, sinr_t = self.channel.sinr_alloc_pair_db(
                fl.rx_x, fl.rx_t, slot, grant.prb_lo, grant.prb_hi, occupied)
        else:
            sinr_x = self.channel.sinr_alloc_db(fl.rx_x, slot, grant.prb_lo,
                                                grant.prb_hi, occupied)
        out_x = harq.attempt_decode("UEX", proc, sinr_x, self.model,
                                    self.rng_dec[fl.rx_x], cbg_mode, cb_mask,
                                    cfg.pdcch_shift_db, cfg.pdcch_payload_bits)
        if is_group:
            out_t = harq.attempt_decode("UET", proc, sinr_t, self.model,
                                        self.rng_dec[fl.rx_t], cbg_mode, cb_mask,
                                        cfg.pdcch_shift_db, cfg.pdcch_payload_bits)
            rng_redraw = self.rng_redraw[self._redraw_by_flow[fl.fid]]
            if cbg_mode:
                res = harq.cooperate_cb(cfg.coop_scheme, out_t, out_x, proc,
                                        self.model, rng_redraw,
                                        cfg.limited_cb.variant,
                                        cfg.limited_cb.fraction,
                                        cfg.combining_loss_db)
            else:
                res = harq.cooperate_tb(cfg.coop_scheme, out_t, out_x, proc,
                                        self.model, rng_redraw,
                                        cfg.combining_loss_db)
            if post_warmup:
                self.scenario_counts[res.scenario - 1] += 1
                self.tether_bits += res.tether_bits
            hf_x1, hf_t1, hf_x2 = out_x.feedback, out_t.feedback, res.hf_x2
            scenario = res.scenario
        else:
            delivered = out_x.pdsch_ok
            if cbg_mode:
                prev = (proc.delivered_cb if proc.delivered_cb is not None
                        else np.zeros(proc.tb.n_cb, dtype=bool))
                cb_now = out_x.cb_ok if out_x.cb_ok is not None else prev
                delivered_cb = prev | cb_now
                failed = ~delivered_cb
                mask = np.zeros(proc.tb.n_cbg, dtype=bool)
                if failed.any():
                    np.logical_or.at(mask, proc.tb.cbg_of_cb[failed], True)
                res = harq.CoopResult(0, bool(delivered_cb.all()), "direct",
                                      ABSENT, delivered_cb=delivered_cb,
                                      retx_cbg_mask=mask)
            else:
                res = harq.CoopResult(0, delivered, "direct", ABSENT)
            hf_x1, hf_t1, hf_x2 = out_x.feedback, NACK, ABSENT
            scenario = 0

        # Credit newly delivered payload.
        if cbg_mode:
            prev = (proc.delivered_cb if proc.delivered_cb is not None
                    else np.zeros(proc.tb.n_cb, dtype=bool))
            new_cb = res.delivered_cb & ~prev
            for k in np.flatnonzero(new_cb):
                self._credit_range(proc, int(proc.tb.cb_payload_lo[k]),
                                   int(proc.tb.cb_payload_hi[k]))
            proc.delivered_cb = res.delivered_cb
            proc.retx_cbg_mask = res.retx_cbg_mask
        elif res.delivered_to_x and not proc.tb_credited:
            self._credit_range(proc, 0, proc.tb.size_bits)
            proc.tb_credited = True

        hf_x2_pending = (self._scheme(fl) == "SSCS" and hf_x2 == ABSENT
                         and hf_x1 != ACK and hf_t1 != ACK)
        due = self._feedback_due(slot, hf_x2_pending)
        self._queue_resolution(due, _PendingResolution(
            proc, hf_x1, hf_t1, hf_x2, scenario, res.delivered_to_x))

    # -- wrap-up -------------------------------------------------------------

    def _finalize(self, n_slots: int) -> DropResult:
        frames = []
        generated, delivered, lost = {}, {}, {}
        for fl in self.flows:
            if fl.kind != "xr":
                continue
            g = d = l = 0
            for fr in fl.frames:
                frames.append(FrameRecord(
                    fl.fid, fl.cell, fr.fid, fr.arrival_ms, fr.size_bits,
                    fr.deadline_ms, fr.delivered_bits, fr.completion_ms))
                g += fr.size_bits
                d += fr.delivered_bits
                l += fr.lost_bits
            generated[fl.fid], delivered[fl.fid], lost[fl.fid] = g, d, l
            if d + l > g:
                raise RuntimeError("delivered+lost exceeds generated bits "
                                   f"for flow {fl.fid}")
        return DropResult(
            drop_index=self.drop_index, drop_seed=self.drop_seed,
            n_slots=n_slots, frames=frames,
            prb_occupied_sum=self.prb_occupied_sum,
            prb_dl_slots=self.prb_dl_slots, n_prb=self.cfg.n_prb,
            scenario_counts=self.scenario_counts,
            propagation_counts=topology.propagation_status(self.topo),
            mcs_counts=self.mcs_counts, xr_retx_count=self.xr_retx_count,
            embb_retx_count=self.embb_retx_count, tether_bits=self.tether_bits,
            embb_served_bits=dict(self.embb_served),
            generated_bits=generated, delivered_bits=delivered,
            lost_bits=lost, traces=self.trace_rows)


def run_drop(cfg: ScenarioConfig, drop_index: int,
             traces: Optional[TraceOptions] = None) -> DropResult:
    """Execute one drop; a pure function of (cfg, cfg.seed + drop_index)."""
    return DropRunner(cfg, drop_index, traces).run()


def _run_drop_star(args) -> DropResult:
    return run_drop(*args)


def run_campaign(cfg: ScenarioConfig, parallel: int = 1,
                 traces: Optional[TraceOptions] = None) -> List[DropResult]:
    """All drops of a scenario, optionally across processes.

    Results are ordered by drop index regardless of execution order, and
    each drop's randomness depends only on (seed + index), so serial and
    parallel campaigns are interchangeable.
    """
    jobs = [(cfg, i, traces) for i in range(cfg.drops)]
    if parallel and parallel > 1 and cfg.drops > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(min(parallel, cfg.drops)) as pool:
            results = pool.map(_run_drop_star, jobs, chunksize=1)
    else:
        results = []
        for job in jobs:
            log.info("drop %d/%d", job[1] + 1, cfg.drops)
            results.append(_run_drop_star(job))
    return results
