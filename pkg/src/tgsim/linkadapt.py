"""Link adaptation for multicast to a tethering group.

Inner loop: pick the highest-rate MCS whose modeled error probability at
the offset-corrected group SINR stays within the target. Outer loop: walk
a per-group SINR offset on joint HARQ feedback so the post-cooperation
error rate converges to the target. The joint feedback rule:

* selection-only cooperation, or any positive first feedback: the group
  feedback is the OR of the two first feedbacks;
* otherwise (soft-combining scheme, both first feedbacks negative): the
  group feedback is the second, post-combining feedback from the XR
  device, with a missing second feedback counting as negative.

A missing first feedback (control channel lost, nothing transmitted) is
treated as negative in the OR.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .phy import BlepModel

# HARQ feedback values. ABSENT is only meaningful for the second feedback.
ACK = "ACK"
NACK = "NACK"
DTX = "DTX"
ABSENT = "ABSENT"


@dataclass
class CsiReport:
    reporter: str       # "UEX" or "UET"
    sinr_db: float
    cqi: int
    measured_slot: int
    available_slot: int


@dataclass
class OllaState:
    offset_db: float
    delta_up_db: float
    delta_down_db: float
    target_bler: float
    min_offset_db: float = -10.0
    max_offset_db: float = 10.0


def group_sinr(csi_x: Optional[CsiReport], csi_t: Optional[CsiReport],
               csi_mode: str) -> float:
    """Group SINR per the configured reporting mode."""
    if csi_x is None:
        raise ValueError("the XR device's CSI report is mandatory")
    if csi_mode == "Best":
        if csi_t is None:
            raise ValueError("CSI mode Best requires the tether report")
        return max(csi_x.sinr_db, csi_t.sinr_db)
    if csi_mode == "UEX":
        return csi_x.sinr_db
    raise ValueError(f"unknown csi_mode {csi_mode!r}")


def effective_sinr(group_sinr_db: float, olla: OllaState) -> float:
    return group_sinr_db - olla.offset_db


def select_mcs(gamma_eff_db: float, model: BlepModel, target_bler: float,
               tb_size_bits: Optional[float] = None) -> int:
    """Highest-rate MCS whose BLEP at `gamma_eff_db` is within target.

    Falls back to the most robust entry when nothing qualifies, so a
    transmission is always possible.
    """
    thresholds = _thresholds(model, target_bler, tb_size_bits)
    idx = int(np.searchsorted(thresholds, gamma_eff_db, side="right")) - 1
    return max(idx, 0)


_THRESHOLD_CACHE: dict = {}


def _thresholds(model: BlepModel, target: float,
                size: Optional[float]) -> np.ndarray:
    key = (id(model), target, size)
    cached = _THRESHOLD_CACHE.get(key)
    if cached is None:
        cached = np.array([model.sinr_threshold(m, target, size)
                           for m in range(len(model.table))])
        _THRESHOLD_CACHE[key] = cached
    return cached


def joint_feedback(scheme: str, hf_x1: str, hf_t1: str,
                   hf_x2: str = ABSENT) -> str:
    """Group HARQ feedback from the individual feedbacks (see module doc)."""
    first_ack = hf_x1 == ACK or hf_t1 == ACK
    if scheme != "SSCS" or first_ack:
        return ACK if first_ack else NACK
    return ACK if hf_x2 == ACK else NACK


def olla_update(state: OllaState, hf_j: str) -> OllaState:
    """Step the offset on one joint feedback event (in place)."""
    if hf_j == ACK:
        state.offset_db -= state.delta_down_db
    else:
        state.offset_db += state.delta_up_db
    state.offset_db = min(max(state.offset_db, state.min_offset_db),
                          state.max_offset_db)
    return state
