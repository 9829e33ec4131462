"""Network drops: cell layouts and reproducible user placement.

Indoor hotspot: 12 ceiling-mounted single-sector cells in two rows of six.
Dense urban: 7 three-sector sites on a hexagonal grid (21 cells), users
dropped over the bounding box with a configurable indoor fraction and
uniform floor assignment.

Placement keeps the per-cell load uniform: each user position is redrawn
until the strongest cell (static link budget including the LOS and
shadowing realization) equals the cell the user is being placed for. The
tether device of a group sits at a fixed radius from the XR device, with
its LOS states and shadowing correlated to the XR device's draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import channel
from .config import ScenarioConfig
from .rng import substream

_SQRT1_2 = 1.0 / math.sqrt(2.0)


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z * _SQRT1_2))


@dataclass(frozen=True)
class Cell:
    cell_id: int
    site_xy: tuple
    bearing_deg: Optional[float]  # None for omni cells


@dataclass
class UeRecord:
    uid: int
    xy: tuple
    height_m: float
    indoor: bool
    floor: int


@dataclass
class TetheringGroup:
    flow: int
    cell: int
    ue_x: int           # receiver uid
    ue_t: Optional[int]  # None in legacy mode


@dataclass
class Topology:
    cells: List[Cell]
    groups: List[TetheringGroup]
    embb_flows: List[dict]       # {"flow", "cell", "rx"}
    ues: List[UeRecord]
    los: np.ndarray              # (n_rx, n_cells) bool
    shadow_db: np.ndarray        # (n_rx, n_cells)
    serving: np.ndarray          # (n_rx,) int
    static_rx_dbm: np.ndarray    # (n_rx, n_cells) link budget w/o fading

    @property
    def n_rx(self) -> int:
        return len(self.ues)

    @property
    def n_cells(self) -> int:
        return len(self.cells)


def cell_layout(cfg: ScenarioConfig) -> List[Cell]:
    if cfg.deployment == "InH":
        w, h = cfg.area_m
        isd = cfg.inter_site_distance_m
        n_per_row = math.ceil(cfg.cells / 2)
        cells = []
        x0 = (w - (n_per_row - 1) * isd) / 2.0
        rows = (h / 2.0 - isd / 2.0, h / 2.0 + isd / 2.0)
        for i in range(cfg.cells):
            row, col = divmod(i, n_per_row)
            cells.append(Cell(i, (x0 + col * isd, rows[row % 2]), None))
        return cells
    # Hexagonal ring of sites, three sectors each, centered in the area.
    w, h = cfg.area_m
    cx, cy = w / 2.0, h / 2.0
    isd = cfg.inter_site_distance_m
    sites = [(cx, cy)]
    for k in range(6):
        ang = math.radians(60.0 * k)
        sites.append((cx + isd * math.cos(ang), cy + isd * math.sin(ang)))
    n_sites = math.ceil(cfg.cells / 3)
    cells = []
    for s in range(n_sites):
        for j in range(3):
            cid = 3 * s + j
            if cid >= cfg.cells:
                break
            cells.append(Cell(cid, sites[s % len(sites)], 30.0 + 120.0 * j))
    return cells


def _static_link_budget(cfg: ScenarioConfig, cells: List[Cell], xy, h_ut,
                        los_flags, shadow, indoor: bool) -> np.ndarray:
    """Per-cell static received power (dBm) for one receiver."""
    out = np.empty(len(cells))
    for c, cell in enumerate(cells):
        dx = xy[0] - cell.site_xy[0]
        dy = xy[1] - cell.site_xy[1]
        d2d = math.hypot(dx, dy)
        pl = channel.pathloss_db(cfg.deployment, d2d, cfg.gnb_height_m, h_ut,
                                 cfg.carrier_hz, bool(los_flags[c]))
        gain = cfg.link_gain_db
        if cell.bearing_deg is not None:
            ang = math.degrees(math.atan2(dy, dx))
            gain += channel.sector_gain_db(cell.bearing_deg, ang)
        o2i = cfg.o2i_loss_db if (indoor and cfg.deployment == "DU") else 0.0
        out[c] = cfg.gnb_power_dbm + gain - pl - shadow[c] - o2i
    return out


class _UeDraw:
    """One candidate receiver: position-independent normals are drawn per
    attempt so rejection keeps all draws aligned to the substreams."""

    def __init__(self, xy, h_ut, indoor, floor, z_los, w_shadow):
        self.xy = xy
        self.h_ut = h_ut
        self.indoor = indoor
        self.floor = floor
        self.z_los = z_los        # standard normals, one per cell
        self.w_shadow = w_shadow  # standard normals, one per cell


def _realize(cfg: ScenarioConfig, cells: List[Cell], draw: _UeDraw):
    """LOS flags, shadowing and static budget for one candidate draw."""
    n = len(cells)
    los_flags = np.empty(n, dtype=bool)
    shadow = np.empty(n)
    for c, cell in enumerate(cells):
        d2d = math.hypot(draw.xy[0] - cell.site_xy[0], draw.xy[1] - cell.site_xy[1])
        p = channel.los_probability(cfg.deployment, d2d, draw.h_ut)
        los_flags[c] = _phi(draw.z_los[c]) < p
        shadow[c] = draw.w_shadow[c] * channel.shadow_std_db(cfg.deployment, los_flags[c])
    static = _static_link_budget(cfg, cells, draw.xy, draw.h_ut, los_flags,
                                 shadow, draw.indoor)
    return los_flags, shadow, static


def _draw_candidate(cfg: ScenarioConfig, rng: np.random.Generator,
                    n_cells: int) -> _UeDraw:
    w, h = cfg.area_m
    xy = (rng.uniform(0.0, w), rng.uniform(0.0, h))
    indoor = bool(rng.uniform() < cfg.indoor_prob)
    if cfg.deployment == "DU" and indoor and cfg.building_floors > 1:
        floor = int(rng.integers(1, cfg.building_floors + 1))
    else:
        floor = 1
    h_ut = cfg.ue_height_m + 3.0 * (floor - 1)
    return _UeDraw(xy, h_ut, indoor, floor,
                   rng.standard_normal(n_cells), rng.standard_normal(n_cells))


def _tether_candidate(cfg: ScenarioConfig, rng: np.random.Generator,
                      anchor: _UeDraw, n_cells: int) -> Optional[_UeDraw]:
    w, h = cfg.area_m
    ang = rng.uniform(0.0, 2.0 * math.pi)
    x = anchor.xy[0] + cfg.intra_tgr_distance_m * math.cos(ang)
    y = anchor.xy[1] + cfg.intra_tgr_distance_m * math.sin(ang)
    if not (0.0 <= x <= w and 0.0 <= y <= h):
        return None
    rho_l, rho_s = cfg.los_correlation, cfg.shadow_correlation
    z = rho_l * anchor.z_los + math.sqrt(1.0 - rho_l ** 2) * rng.standard_normal(n_cells)
    ws = rho_s * anchor.w_shadow + math.sqrt(1.0 - rho_s ** 2) * rng.standard_normal(n_cells)
    return _UeDraw((x, y), anchor.h_ut, anchor.indoor, anchor.floor, z, ws)


def generate_drop(cfg: ScenarioConfig, drop_seed: int) -> Topology:
    """Deterministic topology for one drop: pure function of (cfg, seed)."""
    cells = cell_layout(cfg)
    n_cells = len(cells)
    tgr = cfg.is_tgr()

    ues: List[UeRecord] = []
    groups: List[TetheringGroup] = []
    embb_flows: List[dict] = []
    los_rows, shadow_rows, static_rows, serving_list = [], [], [], []

    def register(draw: _UeDraw, los_f, shadow, static, serving) -> int:
        uid = len(ues)
        ues.append(UeRecord(uid, draw.xy, draw.h_ut, draw.indoor, draw.floor))
        los_rows.append(los_f)
        shadow_rows.append(shadow)
        static_rows.append(static)
        serving_list.append(serving)
        return uid

    flow = 0
    for cell_id in range(n_cells):
        for k in range(cfg.users_per_cell):
            rng_x = substream(drop_seed, "topo-x", cell_id, k)
            # Redraw until this user's strongest cell is the target cell.
            while True:
                cand = _draw_candidate(cfg, rng_x, n_cells)
                los_f, shadow, static = _realize(cfg, cells, cand)
                if int(np.argmax(static)) == cell_id:
                    break
            ue_x = register(cand, los_f, shadow, static, cell_id)
            ue_t = None
            if tgr:
                rng_t = substream(drop_seed, "topo-t", cell_id, k)
                while True:
                    tc = _tether_candidate(cfg, rng_t, cand, n_cells)
                    if tc is not None:
                        break
                t_los, t_shadow, t_static = _realize(cfg, cells, tc)
                # Both group members are served by the XR device's cell.
                ue_t = register(tc, t_los, t_shadow, t_static, cell_id)
            groups.append(TetheringGroup(flow, cell_id, ue_x, ue_t))
            flow += 1

    for cell_id in range(n_cells):
        for k in range(cfg.embb_users_per_cell):
            rng_e = substream(drop_seed, "topo-embb", cell_id, k)
            while True:
                cand = _draw_candidate(cfg, rng_e, n_cells)
                los_f, shadow, static = _realize(cfg, cells, cand)
                if int(np.argmax(static)) == cell_id:
                    break
            rx = register(cand, los_f, shadow, static, cell_id)
            embb_flows.append({"flow": flow, "cell": cell_id, "rx": rx})
            flow += 1

    n_rx = len(ues)
    return Topology(
        cells=cells,
        groups=groups,
        embb_flows=embb_flows,
        ues=ues,
        los=np.array(los_rows) if n_rx else np.zeros((0, n_cells), dtype=bool),
        shadow_db=np.array(shadow_rows) if n_rx else np.zeros((0, n_cells)),
        serving=np.array(serving_list, dtype=int) if n_rx else np.zeros(0, dtype=int),
        static_rx_dbm=np.array(static_rows) if n_rx else np.zeros((0, n_cells)),
    )


def propagation_status(topo: Topology) -> np.ndarray:
    """Per-group serving-link LOS class: 0=both LOS, 1=X LOS only,
    2=T LOS only, 3=both NLOS. Legacy groups count X's state only."""
    counts = np.zeros(4, dtype=np.int64)
    for g in topo.groups:
        lx = topo.los[g.ue_x, g.cell]
        lt = topo.los[g.ue_t, g.cell] if g.ue_t is not None else lx
        if lx and lt:
            counts[0] += 1
        elif lx:
            counts[1] += 1
        elif lt:
            counts[2] += 1
        else:
            counts[3] += 1
    return counts
