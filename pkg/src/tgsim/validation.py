"""Exhaustive validation of the cooperation and joint-feedback decision
tables.

All nine decode scenarios are enumerated for both cooperation schemes (the
soft-combining scheme branches on the post-combining outcome in scenario 5)
and driven through the real cooperation resolver and feedback pipeline.
Actual relay action, retransmission decision and offset direction are
compared against the expected decision matrix row by row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from . import harq, phy
from .linkadapt import ABSENT, ACK, NACK, joint_feedback

# Decode flags (pdcch, pdsch) per receiver for each scenario 1..9.
_SCENARIO_FLAGS = {
    1: ((True, True), (True, True)),
    2: ((True, True), (True, False)),
    3: ((True, True), (False, False)),
    4: ((True, False), (True, True)),
    5: ((True, False), (True, False)),
    6: ((True, False), (False, False)),
    7: ((False, False), (True, True)),
    8: ((False, False), (True, False)),
    9: ((False, False), (False, False)),
}

# Expected cooperation action per (scheme, scenario): what the tether
# forwards and what the XR device does with it.
_EXPECTED_ACTION = {
    ("SCS", 1): ("decoded_block", "discard"),
    ("SCS", 2): ("decoded_block", "use"),
    ("SCS", 3): ("decoded_block", "use"),
    ("SCS", 4): ("nothing", "-"),
    ("SCS", 5): ("nothing", "-"),
    ("SCS", 6): ("nothing", "-"),
    ("SCS", 7): ("nothing", "-"),
    ("SCS", 8): ("nothing", "-"),
    ("SCS", 9): ("nothing", "-"),
    ("SSCS", 1): ("decoded_block", "discard"),
    ("SSCS", 2): ("decoded_block", "use"),
    ("SSCS", 3): ("decoded_block", "use"),
    ("SSCS", 4): ("soft_values", "discard"),
    ("SSCS", 5): ("soft_values", "combine"),
    ("SSCS", 6): ("soft_values", "discard"),
    ("SSCS", 7): ("nothing", "-"),
    ("SSCS", 8): ("nothing", "-"),
    ("SSCS", 9): ("nothing", "-"),
}

# Expected (retransmit, offset direction) per (scheme, scenario[, branch]).
# Scenario 5 under the soft-combining scheme depends on the second feedback.
_EXPECTED_DECISION = {
    ("SCS", 1): (False, "down"),
    ("SCS", 2): (False, "down"),
    ("SCS", 3): (False, "down"),
    ("SCS", 4): (False, "down"),
    ("SCS", 5): (True, "up"),
    ("SCS", 6): (True, "up"),
    ("SCS", 7): (False, "down"),
    ("SCS", 8): (True, "up"),
    ("SCS", 9): (True, "up"),
    ("SSCS", 1): (False, "down"),
    ("SSCS", 2): (False, "down"),
    ("SSCS", 3): (False, "down"),
    ("SSCS", 4): (False, "down"),
    ("SSCS", 5, ACK): (False, "down"),
    ("SSCS", 5, NACK): (True, "up"),
    ("SSCS", 6): (True, "up"),
    ("SSCS", 7): (False, "down"),
    ("SSCS", 8): (True, "up"),
    ("SSCS", 9): (True, "up"),
}


@dataclass
class TableRow:
    scheme: str
    scenario: int
    branch: str              # "", "softc-ack" or "softc-nack"
    expected_action: tuple
    actual_action: tuple
    expected_retx: bool
    actual_retx: bool
    expected_offset: str
    actual_offset: str

    @property
    def ok(self) -> bool:
        return (self.expected_action == self.actual_action
                and self.expected_retx == self.actual_retx
                and self.expected_offset == self.actual_offset)


class _ForcedRng:
    """Stand-in generator that forces the combining redraw outcome."""

    def __init__(self, success: bool):
        self._success = success

    def random(self, n: Optional[int] = None):
        val = 1.0 - 1e-12 if self._success else 0.0
        if n is None:
            return val
        return np.full(n, val)


def _make_process() -> harq.HarqProcess:
    tb = phy.segment_tb(8000, uid=0, mcs=5)
    tb.cb_sinr_offsets_db = np.zeros(tb.n_cb)
    proc = harq.HarqProcess(proc_id=0, flow=0, tb=tb, payload=[(None, 8000)],
                            n_prb_initial=10)
    # Both receivers hold soft energy from the attempt under test.
    proc.acc_tb[harq.UEX] = 1.0
    proc.acc_tb[harq.UET] = 1.0
    return proc


def _outcome(receiver: str, flags: tuple) -> harq.DecodeOutcome:
    pdcch, pdsch = flags
    return harq.DecodeOutcome(receiver, pdcch, pdsch, sinr_db=0.0)


def _actual_action(scheme: str, scenario: int, res: harq.CoopResult,
                   out_x: harq.DecodeOutcome) -> tuple:
    t_flags = _SCENARIO_FLAGS[scenario][0]
    if t_flags[0] and t_flags[1]:
        forwarded = "decoded_block"
    elif t_flags[0] and scheme == "SSCS":
        forwarded = "soft_values"
    else:
        forwarded = "nothing"
    if forwarded == "nothing":
        return forwarded, "-"
    if forwarded == "decoded_block":
        return forwarded, "discard" if out_x.pdsch_ok else "use"
    if res.used_path == "soft_combined" or res.hf_x2 != ABSENT:
        return forwarded, "combine"
    return forwarded, "discard"


def validate_tables(feedback_fn: Callable = joint_feedback) -> List[TableRow]:
    """Run every (scheme, scenario, branch) through the cooperation
    resolver and decision pipeline; `feedback_fn` is injectable so the
    harness itself can be shown to catch a broken implementation."""
    model = phy.BlepModel()
    rows: List[TableRow] = []
    for scheme in ("SCS", "SSCS"):
        for scenario in range(1, 10):
            branches = [None]
            if scheme == "SSCS" and scenario == 5:
                branches = [True, False]  # combining succeeds / fails
            for branch in branches:
                proc = _make_process()
                out_t = _outcome(harq.UET, _SCENARIO_FLAGS[scenario][0])
                out_x = _outcome(harq.UEX, _SCENARIO_FLAGS[scenario][1])
                rng = _ForcedRng(bool(branch))
                res = harq.cooperate_tb(scheme, out_t, out_x, proc, model, rng)
                hf_j = feedback_fn(scheme, out_x.feedback, out_t.feedback,
                                   res.hf_x2)
                actual_retx = hf_j == NACK
                actual_dir = "up" if hf_j == NACK else "down"
                if branch is None:
                    key = (scheme, scenario)
                    branch_name = ""
                else:
                    key = (scheme, scenario, ACK if branch else NACK)
                    branch_name = "softc-ack" if branch else "softc-nack"
                exp_retx, exp_dir = _EXPECTED_DECISION[key]
                rows.append(TableRow(
                    scheme=scheme, scenario=scenario, branch=branch_name,
                    expected_action=_EXPECTED_ACTION[(scheme, scenario)],
                    actual_action=_actual_action(scheme, scenario, res, out_x),
                    expected_retx=exp_retx, actual_retx=actual_retx,
                    expected_offset=exp_dir, actual_offset=actual_dir))
    return rows


def format_report(rows: List[TableRow]) -> str:
    lines = ["scheme scenario branch      action(exp/act)              "
             "retx(exp/act) offset(exp/act) verdict"]
    for r in rows:
        lines.append(
            f"{r.scheme:<6} {r.scenario:<8} {r.branch or '-':<11} "
            f"{'/'.join(r.expected_action):<14}{'/'.join(r.actual_action):<15}"
            f"{str(r.expected_retx):<5}/{str(r.actual_retx):<7} "
            f"{r.expected_offset}/{r.actual_offset:<11} "
            f"{'ok' if r.ok else 'MISMATCH'}")
    n_bad = sum(not r.ok for r in rows)
    lines.append(f"{len(rows) - n_bad}/{len(rows)} rows match")
    return "\n".join(lines)
