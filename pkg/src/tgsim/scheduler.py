"""TDD slot typing and priority-ordered proportional-fair PRB allocation.

Scheduling order is strict: XR retransmissions, then fresh XR traffic, then
broadband retransmissions, then fresh broadband traffic. A lower class is
only reached when every item of the classes above fits in the slot. Within
a class, flows are ranked by the proportional-fair metric (achievable rate
over smoothed served rate), ties broken by flow id. PRBs fill bottom-up so
the per-cell occupancy is a single contiguous range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

DOWNLINK_DATA_SYMBOLS = {"D": 13, "S": 10}


def slot_type(slot: int, pattern: str = "DDDSU") -> str:
    return pattern[slot % len(pattern)]


def data_symbols(kind: str) -> int:
    return DOWNLINK_DATA_SYMBOLS[kind]


def is_downlink(kind: str) -> bool:
    return kind in DOWNLINK_DATA_SYMBOLS


def is_uplink_capable(kind: str) -> bool:
    # The special slot carries the UL control region as well.
    return kind in ("S", "U")


@dataclass
class Candidate:
    """One schedulable item: a retransmission (indivisible) or new data."""

    flow: int
    demand_prb: int         # PRBs wanted this slot (full demand)
    rate_metric: float      # achievable-rate proxy for the PF numerator
    divisible: bool         # new transmissions shrink to the remaining PRBs


@dataclass
class Grant:
    flow: int
    prb_lo: int
    prb_hi: int

    @property
    def n_prb(self) -> int:
        return self.prb_hi - self.prb_lo


class PfState:
    """Exponentially smoothed served rate per flow of one cell."""

    EPS = 1.0  # bits/s floor so the metric stays finite before first service

    def __init__(self, n_flows: int, window_slots: int, slot_seconds: float):
        self.avg = np.full(n_flows, self.EPS)
        self.w = float(window_slots)
        self.slot_s = slot_seconds

    def metric(self, flow: int, rate: float) -> float:
        return rate / self.avg[flow]

    def update(self, served_bits: np.ndarray) -> None:
        """Fold one slot of per-flow served bits into the averages."""
        self.avg += (served_bits / self.slot_s - self.avg) / self.w
        np.maximum(self.avg, self.EPS, out=self.avg)


def schedule_classes(classes: List[List[Candidate]], n_prb: int,
                     pf: PfState) -> tuple:
    """Allocate the slot's PRBs across priority classes.

    Returns (grants, blocked): `blocked` is True when an indivisible item of
    some class did not fit, which bars all lower classes from the slot.
    """
    grants: List[Grant] = []
    next_prb = 0
    for items in classes:
        if not items:
            continue
        order = sorted(items, key=lambda c: (-pf.metric(c.flow, c.rate_metric),
                                             c.flow))
        for cand in order:
            free = n_prb - next_prb
            if free <= 0:
                return grants, True
            if cand.divisible:
                take = min(cand.demand_prb, free)
            else:
                if cand.demand_prb > free:
                    # An unserved retransmission blocks lower classes.
                    return grants, True
                take = cand.demand_prb
            if take <= 0:
                continue
            grants.append(Grant(cand.flow, next_prb, next_prb + take))
            next_prb += take
    return grants, False
