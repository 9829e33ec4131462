"""Per-group HARQ processes, decode simulation and cooperation resolution.

Cooperation between the two receivers of a tethering group is resolved
within a slot (the tether link is ideal: lossless, zero delay):

* If the tether device decodes the block, it forwards the decoded copy and
  the XR device uses it whenever its own decode failed.
* Under the soft-combining scheme, a tether device that decoded control but
  not data forwards its soft values instead; the XR device combines them
  with its own (requires its own control decode) and attempts a fresh
  decode at the accumulated cross-link SINR.
* A receiver that misses the control channel has no soft buffer, sends no
  feedback (DTX) and cannot combine.

Nine decode scenarios arise from the control/data outcomes at the two
receivers; `scenario_id` numbers them in tether-major order (tether fully
decoded -> 1-3, tether soft-only -> 4-6, tether silent -> 7-9).

Code-block-granular cooperation follows the same rules per block, with
retransmissions narrowed to the code block groups still failed after
cooperation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import phy
from .linkadapt import ABSENT, ACK, DTX, NACK, joint_feedback
from .phy import BlepModel, TransportBlock

UEX = "UEX"
UET = "UET"


@dataclass
class DecodeOutcome:
    receiver: str
    pdcch_ok: bool
    pdsch_ok: bool
    sinr_db: float
    cb_ok: Optional[np.ndarray] = None  # per-CB, only in CB-granular mode

    @property
    def feedback(self) -> str:
        if not self.pdcch_ok:
            return DTX
        return ACK if self.pdsch_ok else NACK


@dataclass
class CoopResult:
    scenario: int
    delivered_to_x: bool
    used_path: str                       # direct | relayed_tb | soft_combined | none
    hf_x2: str = ABSENT
    delivered_cb: Optional[np.ndarray] = None
    retx_cbg_mask: Optional[np.ndarray] = None
    tether_bits: int = 0


@dataclass
class HarqProcess:
    """State of one transport block in flight."""

    proc_id: int
    flow: int
    tb: TransportBlock
    payload: list                 # [(frame_or_none, bits), ...] in order
    n_prb_initial: int
    tx_count: int = 0             # retransmissions performed so far
    acc_lin: dict = field(default_factory=dict)   # receiver -> per-CB linear SINR
    acc_tb: dict = field(default_factory=dict)    # receiver -> scalar linear SINR
    cb_ok: dict = field(default_factory=dict)     # receiver -> per-CB decode state
    delivered_cb: Optional[np.ndarray] = None     # CB-granular delivery at X
    retx_cbg_mask: Optional[np.ndarray] = None
    payload_segs: list = field(default_factory=list)  # (frame, lo, hi) bit ranges
    tb_credited: bool = False
    done: bool = False

    def acc(self, receiver: str) -> np.ndarray:
        buf = self.acc_lin.get(receiver)
        if buf is None:
            buf = np.zeros(self.tb.n_cb)
            self.acc_lin[receiver] = buf
        return buf

    def acc_tb_db(self, receiver: str) -> float:
        a = self.acc_tb.get(receiver, 0.0)
        return 10.0 * math.log10(a) if a > 0.0 else -math.inf

    def cb_state(self, receiver: str) -> np.ndarray:
        state = self.cb_ok.get(receiver)
        if state is None:
            state = np.zeros(self.tb.n_cb, dtype=bool)
            self.cb_ok[receiver] = state
        return state


def scenario_id(out_t: DecodeOutcome, out_x: DecodeOutcome) -> int:
    """Scenario number 1..9 from the two receivers' decode outcomes."""
    def row(o: DecodeOutcome) -> int:
        if o.pdcch_ok and o.pdsch_ok:
            return 0
        if o.pdcch_ok:
            return 1
        return 2
    return 3 * row(out_t) + row(out_x) + 1


def attempt_decode(receiver: str, proc: HarqProcess, sinr_db: float,
                   model: BlepModel, rng: np.random.Generator,
                   cb_granular: bool, transmitted_cb: Optional[np.ndarray] = None,
                   pdcch_shift_db: float = 6.0,
                   pdcch_payload_bits: int = 40) -> DecodeOutcome:
    """Simulate one reception attempt and update the chase buffer.

    A failed control decode means the receiver did not know about the
    transmission at all: nothing is buffered and the outcome carries DTX
    semantics. Otherwise the energy of this attempt accumulates into the
    per-CB chase buffer before the data decode is drawn.
    """
    tb = proc.tb
    p_ctrl = phy.pdcch_blep(model, sinr_db, pdcch_shift_db, pdcch_payload_bits)
    if rng.random() < p_ctrl:
        cb_ok = proc.cb_state(receiver).copy() if cb_granular else None
        return DecodeOutcome(receiver, False, False, sinr_db, cb_ok=cb_ok)

    if not cb_granular:
        # Whole-block operation: every attempt covers all code blocks, so
        # the chase buffer reduces to one scalar per receiver.
        a = proc.acc_tb.get(receiver, 0.0) + 10.0 ** (sinr_db / 10.0)
        proc.acc_tb[receiver] = a
        p_tb = model.tb_fail_prob(tb, 10.0 * math.log10(a))
        ok = rng.random() >= p_tb
        return DecodeOutcome(receiver, True, bool(ok), sinr_db)

    acc = proc.acc(receiver)
    if transmitted_cb is None:
        tx_mask = np.ones(tb.n_cb, dtype=bool)
    else:
        tx_mask = transmitted_cb
    acc[tx_mask] += 10.0 ** ((sinr_db + tb.cb_sinr_offsets_db[tx_mask]) / 10.0)
    with np.errstate(divide="ignore"):
        acc_db = 10.0 * np.log10(acc)
    blep_cb = model.blep_array(acc_db, tb.mcs, tb.cb_sizes)
    state = proc.cb_state(receiver)
    draw = rng.random(tb.n_cb)
    state |= tx_mask & (draw >= blep_cb)
    return DecodeOutcome(receiver, True, bool(state.all()), sinr_db,
                         cb_ok=state.copy())


def combined_decode_tb(proc: HarqProcess, model: BlepModel,
                       rng: np.random.Generator, loss_db: float = 0.0) -> bool:
    """Fresh data decode at the cross-link accumulated SINR (whole block)."""
    derate = 10.0 ** (-loss_db / 10.0)
    a = proc.acc_tb.get(UEX, 0.0) + proc.acc_tb.get(UET, 0.0) * derate
    acc_db = 10.0 * math.log10(a) if a > 0.0 else -math.inf
    p_tb = model.tb_fail_prob(proc.tb, acc_db)
    return bool(rng.random() >= p_tb)


def _combined_acc(proc: HarqProcess, loss_db: float) -> np.ndarray:
    derate = 10.0 ** (-loss_db / 10.0)
    return proc.acc(UEX) + proc.acc(UET) * derate


def cooperate_tb(scheme: str, out_t: DecodeOutcome, out_x: DecodeOutcome,
                 proc: HarqProcess, model: BlepModel,
                 rng: np.random.Generator, loss_db: float = 0.0) -> CoopResult:
    """Resolve block-granular cooperation for one attempt."""
    sc = scenario_id(out_t, out_x)
    tb_bits = proc.tb.size_bits

    if out_t.pdcch_ok and out_t.pdsch_ok:
        # Tether decoded: the block is always forwarded (scenarios 1-3).
        delivered = True
        used = "direct" if out_x.pdsch_ok else "relayed_tb"
        return CoopResult(sc, delivered, used, ABSENT, tether_bits=tb_bits)

    if out_t.pdcch_ok and scheme == "SSCS":
        # Tether has soft values only (scenarios 4-6).
        soft_bits = _soft_volume_bits(proc, model)
        if out_x.pdsch_ok:
            return CoopResult(sc, True, "direct", ABSENT, tether_bits=soft_bits)
        if out_x.pdcch_ok:
            ok = combined_decode_tb(proc, model, rng, loss_db)
            return CoopResult(sc, ok, "soft_combined" if ok else "none",
                              ACK if ok else NACK, tether_bits=soft_bits)
        # No control at the XR device: soft values are discarded unseen.
        return CoopResult(sc, False, "none", ABSENT, tether_bits=soft_bits)

    # Selection-only scheme in 4-6, or tether silent (7-9): no assistance.
    delivered = out_x.pdsch_ok
    return CoopResult(sc, delivered, "direct" if delivered else "none", ABSENT)


def cooperate_cb(scheme: str, out_t: DecodeOutcome, out_x: DecodeOutcome,
                 proc: HarqProcess, model: BlepModel, rng: np.random.Generator,
                 limited_variant: str = "none", limited_fraction: float = 1.0,
                 loss_db: float = 0.0) -> CoopResult:
    """Resolve code-block-granular cooperation for one attempt.

    Per block: the XR device keeps its own decode, else uses the tether's
    decoded copy, else (soft-combining scheme) combines soft values at the
    accumulated cross-link SINR. Blocks still failed afterwards define the
    retransmission mask at code-block-group granularity.
    """
    tb = proc.tb
    sc = scenario_id(out_t, out_x)
    x_ok = out_x.cb_ok if out_x.cb_ok is not None else np.zeros(tb.n_cb, dtype=bool)
    t_ok = out_t.cb_ok if out_t.cb_ok is not None else np.zeros(tb.n_cb, dtype=bool)

    prev = (proc.delivered_cb if proc.delivered_cb is not None
            else np.zeros(tb.n_cb, dtype=bool))
    delivered = prev | x_ok
    tether_bits = 0
    if out_t.pdcch_ok:
        # Decoded blocks are forwarded with their index list (selection);
        # only blocks new to the XR device count toward link volume.
        relayed = t_ok & ~delivered
        delivered = delivered | t_ok
        tether_bits += int(np.sum(tb.cb_sizes[relayed])) + 16 * int(relayed.sum())

    hf_x2 = ABSENT
    if scheme == "SSCS" and out_t.pdcch_ok and out_x.pdcch_ok:
        soft_available = ~t_ok  # tether forwards soft values of its failures
        candidates = soft_available & ~delivered
        if limited_variant == "none":
            selected = candidates
            soft_sent = soft_available
        else:
            if limited_variant == "CBsUEX":
                pool = np.flatnonzero(~x_ok)
                ranking_sinr = _acc_db(proc, UEX)
            elif limited_variant == "CBsUET":
                pool = np.flatnonzero(~t_ok)
                ranking_sinr = _acc_db(proc, UET)
            else:
                raise ValueError(f"unknown limited_cb variant {limited_variant!r}")
            chosen = limited_cb_select(limited_fraction, pool, ranking_sinr[pool])
            sel_mask = np.zeros(tb.n_cb, dtype=bool)
            sel_mask[chosen] = True
            selected = candidates & sel_mask
            soft_sent = soft_available & sel_mask
        if selected.any():
            acc = _combined_acc(proc, loss_db)
            with np.errstate(divide="ignore"):
                acc_db = 10.0 * np.log10(acc[selected])
            blep_cb = model.blep_array(acc_db, tb.mcs, tb.cb_sizes[selected])
            ok = rng.random(selected.sum()) >= blep_cb
            idx = np.flatnonzero(selected)
            delivered[idx[ok]] = True
            hf_x2 = ACK if bool(delivered.all()) else NACK
        soft_cb_volume = _soft_volume_bits(proc, model, mask=soft_sent)
        tether_bits += soft_cb_volume + 16 * int(soft_sent.sum())

    failed = ~delivered
    cbg_mask = np.zeros(tb.n_cbg, dtype=bool)
    if failed.any():
        np.logical_or.at(cbg_mask, tb.cbg_of_cb[failed], True)
    used = "direct"
    if not bool(delivered.all()):
        used = "none"
    elif not bool(x_ok.all()):
        used = "soft_combined" if hf_x2 == ACK else "relayed_tb"
    return CoopResult(sc, bool(delivered.all()), used, hf_x2,
                      delivered_cb=delivered, retx_cbg_mask=cbg_mask,
                      tether_bits=tether_bits)


def _acc_db(proc: HarqProcess, receiver: str) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(proc.acc(receiver))


def _soft_volume_bits(proc: HarqProcess, model: BlepModel,
                      mask: Optional[np.ndarray] = None,
                      llr_width: int = 6) -> int:
    """Tether-link volume of forwarded soft values (coded bits x LLR width)."""
    rate = model.table[proc.tb.mcs].code_rate
    sizes = proc.tb.cb_sizes if mask is None else proc.tb.cb_sizes[mask]
    return int(np.sum(sizes) / rate * llr_width)


def limited_cb_select(fraction: float, failed_idx: np.ndarray,
                      failed_sinr_db: np.ndarray) -> np.ndarray:
    """Indices of the lowest-SINR share of failed code blocks."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(failed_idx)
    if n == 0:
        return np.array([], dtype=int)
    take = math.ceil(fraction * n)
    order = np.lexsort((failed_idx, failed_sinr_db))
    return np.sort(failed_idx[order[:take]])


def needs_retransmission(scheme: str, hf_x1: str, hf_t1: str,
                         hf_x2: str = ABSENT) -> tuple:
    """(retransmit, offset direction) from a complete feedback ledger.

    The retransmit decision and the outer-loop direction always move
    together: a joint ACK suppresses the retransmission and steps the
    offset down; a joint NACK triggers it and steps the offset up.
    """
    hf_j = joint_feedback(scheme, hf_x1, hf_t1, hf_x2)
    return hf_j == NACK, ("up" if hf_j == NACK else "down")


def build_retransmission(proc: HarqProcess, cb_mode: str) -> tuple:
    """(bits to carry, transmitted-CB mask) for the next attempt.

    Full-block mode resends everything at the original MCS; CB-group mode
    resends only the groups still containing failed blocks, shrinking the
    resource demand accordingly.
    """
    tb = proc.tb
    if cb_mode == "TB":
        return tb.size_bits, np.ones(tb.n_cb, dtype=bool)
    if proc.retx_cbg_mask is None or not proc.retx_cbg_mask.any():
        raise ValueError("no failed code block groups to retransmit")
    cb_mask = tb.cbs_of_cbg_mask(proc.retx_cbg_mask)
    bits = int(np.sum(tb.cb_sizes[cb_mask]))
    return bits, cb_mask
