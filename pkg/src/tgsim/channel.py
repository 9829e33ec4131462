"""Scalar channel abstraction: pathloss, LOS, shadowing, temporal fading
and effective SINR with load-dependent inter-cell interference.

The spatial receive chain is collapsed into a per-link budget
``P_rx = P_tx + G_link + G_sector - PL - shadowing - O2I + fading(t)``;
receptions then see wideband SINR over their allocated PRB range, with
interference contributed only by cells whose allocations overlap it.
Closed-form indoor-hotspot and urban-macro pathloss / LOS-probability
expressions are used so both deployments keep their characteristic
propagation statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig

# Shadow fading standard deviation per (deployment, los) in dB.
_SHADOW_STD = {
    ("InH", True): 3.0,
    ("InH", False): 8.03,
    ("DU", True): 4.0,
    ("DU", False): 6.0,
}


def pathloss_db(deployment: str, d2d_m: float, h_bs_m: float, h_ut_m: float,
                fc_hz: float, los: bool) -> float:
    """Distance/frequency pathloss for one link, by deployment and LOS class."""
    if d2d_m < 0:
        raise ValueError("distance must be >= 0")
    dh = h_bs_m - h_ut_m
    d3d = math.sqrt(d2d_m * d2d_m + dh * dh)
    if d3d <= 0:
        raise ValueError("3D distance must be > 0")
    fc_ghz = fc_hz / 1e9
    if deployment == "InH":
        d3d = max(d3d, 1.0)
        pl_los = 32.4 + 17.3 * math.log10(d3d) + 20.0 * math.log10(fc_ghz)
        if los:
            return pl_los
        pl_nlos = 17.3 + 38.3 * math.log10(d3d) + 24.9 * math.log10(fc_ghz)
        return max(pl_los, pl_nlos)
    if deployment == "DU":
        d2d_eff = max(d2d_m, 10.0)
        d3d_eff = math.sqrt(d2d_eff * d2d_eff + dh * dh)
        # Breakpoint distance with 1 m effective environment height.
        h_bs_eff = max(h_bs_m - 1.0, 0.1)
        h_ut_eff = max(h_ut_m - 1.0, 0.1)
        d_bp = 4.0 * h_bs_eff * h_ut_eff * fc_hz / 3.0e8
        if d2d_eff <= d_bp:
            pl_los = 28.0 + 22.0 * math.log10(d3d_eff) + 20.0 * math.log10(fc_ghz)
        else:
            pl_los = (28.0 + 40.0 * math.log10(d3d_eff) + 20.0 * math.log10(fc_ghz)
                      - 9.0 * math.log10(d_bp * d_bp + dh * dh))
        if los:
            return pl_los
        pl_nlos = (13.54 + 39.08 * math.log10(d3d_eff) + 20.0 * math.log10(fc_ghz)
                   - 0.6 * (h_ut_m - 1.5))
        return max(pl_los, pl_nlos)
    raise ValueError(f"unknown deployment {deployment!r}")


def los_probability(deployment: str, d2d_m: float, h_ut_m: float = 1.5) -> float:
    """Probability that a link of 2D length `d2d_m` is line-of-sight."""
    if d2d_m < 0:
        raise ValueError("distance must be >= 0")
    if deployment == "InH":
        # Open-office hall: generous LOS ranges.
        if d2d_m <= 5.0:
            return 1.0
        if d2d_m <= 49.0:
            return math.exp(-(d2d_m - 5.0) / 70.8)
        return math.exp(-(d2d_m - 49.0) / 211.7) * 0.54
    if deployment == "DU":
        if d2d_m <= 18.0:
            return 1.0
        p = 18.0 / d2d_m + math.exp(-d2d_m / 63.0) * (1.0 - 18.0 / d2d_m)
        if h_ut_m > 13.0:
            c = ((min(h_ut_m, 23.0) - 13.0) / 10.0) ** 1.5
            p *= 1.0 + c * 1.25 * (d2d_m / 100.0) ** 3 * math.exp(-d2d_m / 150.0)
        return min(p, 1.0)
    raise ValueError(f"unknown deployment {deployment!r}")


def shadow_std_db(deployment: str, los: bool) -> float:
    return _SHADOW_STD[(deployment, bool(los))]


def sector_gain_db(bearing_deg: float, angle_deg: float,
                   beamwidth_deg: float = 65.0, front_back_db: float = 30.0,
                   peak_gain_db: float = 8.0) -> float:
    """Azimuth pattern of a three-sector antenna (parabolic main lobe)."""
    diff = (angle_deg - bearing_deg + 180.0) % 360.0 - 180.0
    return peak_gain_db - min(12.0 * (diff / beamwidth_deg) ** 2, front_back_db)


def sinr_db(signal_dbm: float, interferer_dbm, overlap, noise_dbm: float) -> float:
    """Wideband SINR: signal over (overlap-weighted interference + noise).

    `interferer_dbm` and `overlap` are parallel sequences; an interferer
    contributes only in proportion to the fraction of the victim allocation
    it overlaps.
    """
    s = 10.0 ** (signal_dbm / 10.0)
    n = 10.0 ** (noise_dbm / 10.0)
    i = 0.0
    for p, w in zip(interferer_dbm, overlap):
        if w > 0.0:
            i += 10.0 ** (p / 10.0) * w
    return 10.0 * math.log10(s / (i + n))


@dataclass
class FadingParams:
    std_db: float
    rho_slot: float  # lag-1 autocorrelation at one slot spacing

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "FadingParams":
        rho = math.exp(-cfg.slot_ms / cfg.coherence_time_ms)
        return cls(std_db=cfg.fading_std_db, rho_slot=rho)


class FadingField:
    """First-order Gauss-Markov fading (in dB) per receiver-cell link.

    States update lazily: skipping `k` slots applies the exact conditional
    law ``x' = rho**k * x + N(0, (1 - rho**(2k)) * std**2)``, so sparse
    observation does not change the process statistics.
    """

    def __init__(self, n_rx: int, n_cells: int, params: FadingParams,
                 rngs: list):
        self.params = params
        self.n_cells = n_cells
        self._rngs = rngs  # one generator per receiver
        self._state = np.zeros((n_rx, n_cells))
        self._last_slot = np.zeros(n_rx, dtype=np.int64)
        if params.std_db > 0.0:
            for rx in range(n_rx):
                self._state[rx] = rngs[rx].normal(0.0, params.std_db, n_cells)

    def values(self, rx: int, slot: int) -> np.ndarray:
        """Fading vector (dB, one entry per cell) for `rx` at `slot`."""
        if self.params.std_db == 0.0:
            return self._state[rx]
        gap = slot - self._last_slot[rx]
        if gap < 0:
            raise RuntimeError("fading queried backwards in time")
        if gap > 0:
            rho_k = self.params.rho_slot ** int(gap)
            innov_std = self.params.std_db * math.sqrt(max(0.0, 1.0 - rho_k * rho_k))
            state = self._state[rx]
            state *= rho_k
            state += innov_std * self._rngs[rx].standard_normal(self.n_cells)
            self._last_slot[rx] = slot
        return self._state[rx]


_LN10_10 = math.log(10.0) / 10.0


class ChannelState:
    """Per-drop link budget plus fading; produces per-reception SINR.

    `base_rx_dbm[rx, cell]` folds every static term of the link budget.
    Activity snapshots describe, per cell, how many PRBs are occupied this
    slot under a bottom-filled allocation convention. Interference from
    other cells is derated by a fixed suppression term standing in for the
    spatial selectivity of a beamformed downlink (calibration knob).
    """

    def __init__(self, base_rx_dbm: np.ndarray, serving: np.ndarray,
                 fading: FadingField, noise_prb_dbm: float, n_prb: int,
                 interference_suppression_db: float = 0.0):
        self.base_rx_dbm = base_rx_dbm
        self.serving = serving
        self.fading = fading
        self.noise_prb_dbm = noise_prb_dbm
        self.n_prb = n_prb
        self._per_prb_offset = 10.0 * math.log10(n_prb)
        self._noise_prb_lin = 10.0 ** (noise_prb_dbm / 10.0)
        self._i_derate = 10.0 ** (-interference_suppression_db / 10.0)

    def rx_power_dbm(self, rx: int, slot: int) -> np.ndarray:
        """Instantaneous per-cell received power (total band) for `rx`."""
        return self.base_rx_dbm[rx] + self.fading.values(rx, slot)

    def sinr_alloc_db(self, rx: int, slot: int, prb_lo: int, prb_hi: int,
                      occupied_prbs: np.ndarray) -> float:
        """SINR over the allocation [prb_lo, prb_hi) given cell activity."""
        p = self.base_rx_dbm[rx] + self.fading.values(rx, slot)
        serving = self.serving[rx]
        width = prb_hi - prb_lo
        # Bottom-filled allocations: overlap with [lo, hi) is occ - lo clipped.
        overlap = np.clip(occupied_prbs - prb_lo, 0, width)
        lin = np.exp((p - self._per_prb_offset) * _LN10_10)
        s = lin[serving]
        i = (float(np.dot(lin, overlap)) - s * overlap[serving]) / width
        return 10.0 * math.log10(s / (i * self._i_derate + self._noise_prb_lin))

    def sinr_alloc_pair_db(self, rx_a: int, rx_b: int, slot: int, prb_lo: int,
                           prb_hi: int, occupied_prbs: np.ndarray) -> tuple:
        """`sinr_alloc_db` for two co-served receivers of one allocation."""
        width = prb_hi - prb_lo
        overlap = np.clip(occupied_prbs - prb_lo, 0, width)
        out = []
        for rx in (rx_a, rx_b):
            p = self.base_rx_dbm[rx] + self.fading.values(rx, slot)
            serving = self.serving[rx]
            lin = np.exp((p - self._per_prb_offset) * _LN10_10)
            s = lin[serving]
            i = (float(np.dot(lin, overlap)) - s * overlap[serving]) / width
            out.append(10.0 * math.log10(
                s / (i * self._i_derate + self._noise_prb_lin)))
        return out[0], out[1]

    def sinr_wideband_db(self, rx: int, slot: int,
                         occupied_prbs: np.ndarray) -> float:
        """Full-band SINR used for CSI measurements."""
        return self.sinr_alloc_db(rx, slot, 0, self.n_prb, occupied_prbs)

    def sinr_wideband_many(self, rx_idx: np.ndarray, slot: int,
                           occupied_prbs: np.ndarray) -> np.ndarray:
        """Vectorized full-band SINR for a set of receivers."""
        rows = np.empty((len(rx_idx), self.base_rx_dbm.shape[1]))
        for i, rx in enumerate(rx_idx):
            rows[i] = self.fading.values(rx, slot)
        rows += self.base_rx_dbm[rx_idx]
        lin = np.exp((rows - self._per_prb_offset) * _LN10_10)
        frac = occupied_prbs / self.n_prb
        serving = self.serving[rx_idx]
        s = lin[np.arange(len(rx_idx)), serving]
        i_tot = (lin @ frac - s * frac[serving]) * self._i_derate
        return 10.0 * np.log10(s / (i_tot + self._noise_prb_lin))


def noise_per_prb_dbm(cfg: ScenarioConfig) -> float:
    return -174.0 + 10.0 * math.log10(12.0 * cfg.scs_hz) + cfg.noise_figure_db
