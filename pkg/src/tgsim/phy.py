"""Link-to-system interface: MCS/TBS tables, block error model, soft
combining and code block segmentation.

The full receive chain is abstracted into a single effective SINR per
reception. A parametric block-error-probability (BLEP) curve per MCS maps
that SINR to decode outcomes; a CSV lookup table can replace the parametric
curve when calibrated link-level data is available. Energy accumulation
(HARQ chase combining and combining of receptions across the two group
members) is modeled as summation of linear SINR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np

LOG_1_9 = math.log(1.0 / 9.0)  # logit of the 10% anchor point

MAX_CB_BITS = 8448
CB_CRC_BITS = 24
TB_CRC_BITS = 24
MAX_CBG = 8


# --------------------------------------------------------------------------
# MCS table
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation_order: int
    code_rate: float  # informational bits per coded bit

    @property
    def spectral_efficiency(self) -> float:
        return self.modulation_order * self.code_rate


class McsTable:
    """28-entry table spanning QPSK to 256QAM, loaded from a data file."""

    def __init__(self, entries: Sequence[McsEntry]):
        if not entries:
            raise ValueError("empty MCS table")
        self.entries = list(entries)
        se = [e.spectral_efficiency for e in self.entries]
        if any(b <= a for a, b in zip(se, se[1:])):
            raise ValueError("spectral efficiency must be strictly increasing with index")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> McsEntry:
        return self.entries[idx]

    @property
    def max_index(self) -> int:
        return self.entries[-1].index

    @classmethod
    def load_default(cls) -> "McsTable":
        ref = resources.files("tgsim").joinpath("data/mcs_table_256qam.csv")
        with ref.open("r", encoding="utf-8") as fh:
            return cls._from_csv(fh)

    @classmethod
    def from_csv(cls, path: str) -> "McsTable":
        with open(path, "r", encoding="utf-8") as fh:
            return cls._from_csv(fh)

    @classmethod
    def _from_csv(cls, fh) -> "McsTable":
        entries = []
        for row in csv.DictReader(fh):
            entries.append(McsEntry(
                index=int(row["index"]),
                modulation_order=int(row["modulation_order"]),
                code_rate=float(row["code_rate_x1024"]) / 1024.0,
            ))
        entries.sort(key=lambda e: e.index)
        return cls(entries)


_DEFAULT_TABLE: Optional[McsTable] = None


def default_mcs_table() -> McsTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = McsTable.load_default()
    return _DEFAULT_TABLE


# --------------------------------------------------------------------------
# Transport block sizing
# --------------------------------------------------------------------------

# Quantized sizes used below the 3824-bit boundary.
_TBS_SMALL = (
    24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 112, 120, 128, 136, 144,
    152, 160, 168, 176, 184, 192, 208, 224, 240, 256, 272, 288, 304, 320,
    336, 352, 368, 384, 408, 432, 456, 480, 504, 528, 552, 576, 608, 640,
    672, 704, 736, 768, 808, 848, 888, 928, 984, 1032, 1064, 1128, 1160,
    1192, 1224, 1256, 1288, 1320, 1352, 1416, 1480, 1544, 1608, 1672, 1736,
    1800, 1864, 1928, 2024, 2088, 2152, 2216, 2280, 2408, 2472, 2536, 2600,
    2664, 2728, 2792, 2856, 2976, 3104, 3240, 3368, 3496, 3624, 3752, 3824,
)

DMRS_RE_PER_PRB = 12


def tbs(mcs: int, n_prb: int, n_data_symbols: int,
        table: Optional[McsTable] = None, n_layers: int = 1) -> int:
    """Transport block size in bits for an allocation.

    Standard NR sizing: resource elements per PRB (capped at 156 after DMRS
    overhead), an information-bit estimate, then rate-dependent quantization
    so code blocks split evenly.
    """
    if n_prb < 1:
        raise ValueError("allocation must span at least one PRB")
    if n_data_symbols < 1:
        raise ValueError("allocation must span at least one data symbol")
    table = table or default_mcs_table()
    entry = table[mcs]
    re_per_prb = min(156, 12 * n_data_symbols - DMRS_RE_PER_PRB)
    if re_per_prb <= 0:
        raise ValueError("no resource elements left after DMRS overhead")
    n_re = re_per_prb * n_prb
    n_info = n_re * entry.code_rate * entry.modulation_order * n_layers

    if n_info <= 3824:
        n = max(3, int(math.floor(math.log2(n_info))) - 6)
        n_info_q = max(24, (1 << n) * int(n_info / (1 << n)))
        for size in _TBS_SMALL:
            if size >= n_info_q:
                return size
        return _TBS_SMALL[-1]

    n = int(math.floor(math.log2(n_info - 24))) - 5
    n_info_q = max(3840, (1 << n) * int(round((n_info - 24) / (1 << n))))
    if entry.code_rate <= 0.25:
        c = math.ceil((n_info_q + 24) / 3816)
        return 8 * c * math.ceil((n_info_q + 24) / (8 * c)) - 24
    if n_info_q > 8424:
        c = math.ceil((n_info_q + 24) / 8424)
        return 8 * c * math.ceil((n_info_q + 24) / (8 * c)) - 24
    return 8 * math.ceil((n_info_q + 24) / 8) - 24


def min_prb_for_bits(bits: int, mcs: int, n_data_symbols: int, n_prb_max: int,
                     table: Optional[McsTable] = None) -> Optional[int]:
    """Smallest PRB count whose TBS carries `bits`, or None if impossible."""
    if bits <= 0:
        raise ValueError("bits must be > 0")
    if tbs(mcs, n_prb_max, n_data_symbols, table) < bits:
        return None
    lo, hi = 1, n_prb_max
    while lo < hi:
        mid = (lo + hi) // 2
        if tbs(mcs, mid, n_data_symbols, table) >= bits:
            hi = mid
        else:
            lo = mid + 1
    return lo


class TbsGrid:
    """TBS precomputed over (mcs, n_prb) for one symbol count.

    Rows are non-decreasing in the PRB count, so sizing and its inverse
    reduce to a lookup and a binary search.
    """

    def __init__(self, n_data_symbols: int, n_prb_max: int,
                 table: Optional[McsTable] = None):
        table = table or default_mcs_table()
        self.n_prb_max = n_prb_max
        self.rows = [[tbs(m, p, n_data_symbols, table)
                      for p in range(1, n_prb_max + 1)]
                     for m in range(len(table))]

    def size(self, mcs: int, n_prb: int) -> int:
        return self.rows[mcs][n_prb - 1]

    def min_prb(self, bits: int, mcs: int) -> Optional[int]:
        from bisect import bisect_left
        idx = bisect_left(self.rows[mcs], bits)
        if idx >= self.n_prb_max:
            return None
        return idx + 1


_TBS_GRIDS: dict = {}


def tbs_grid(n_data_symbols: int, n_prb_max: int) -> TbsGrid:
    """Process-wide cache of sizing grids for the default MCS table."""
    key = (n_data_symbols, n_prb_max)
    grid = _TBS_GRIDS.get(key)
    if grid is None:
        grid = TbsGrid(n_data_symbols, n_prb_max)
        _TBS_GRIDS[key] = grid
    return grid


# --------------------------------------------------------------------------
# Block error probability
# --------------------------------------------------------------------------

class BlepModel:
    """SINR + MCS + block size -> block error probability.

    Parametric mode anchors a logistic curve (in dB) per MCS so that the
    error probability equals 10% at the anchor SINR for the reference block
    size. The anchor is the Shannon-limit SINR of the entry's spectral
    efficiency plus a fixed implementation loss. Block sizes other than the
    reference are adjusted via an independent-bit-group approximation:
    ``blep(s) = 1 - (1 - blep_ref)**(s / ref_size)``, which keeps code-block
    and transport-block level simulation consistent by construction.
    """

    def __init__(self, table: Optional[McsTable] = None,
                 impl_loss_db: float = 2.0, slope_db: float = 1.0,
                 ref_size_bits: int = 8448):
        self.table = table or default_mcs_table()
        self.slope_db = float(slope_db)
        self.ref_size_bits = int(ref_size_bits)
        self.impl_loss_db = float(impl_loss_db)
        self._anchors = np.array([
            10.0 * math.log10(2.0 ** e.spectral_efficiency - 1.0) + impl_loss_db
            for e in self.table.entries])
        self._lut: Optional[dict] = None  # mcs -> (sinr_grid, blep_grid)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_lut_csv(cls, path: str, table: Optional[McsTable] = None,
                     ref_size_bits: int = 8448) -> "BlepModel":
        """Load (mcs, sinr_dB, blep) rows; linear interpolation in dB."""
        model = cls(table=table, ref_size_bits=ref_size_bits)
        rows: dict = {}
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip().lower() for h in header[:3]] != ["mcs", "sinr_db", "blep"]:
                raise ValueError("LUT header must be: mcs,sinr_db,blep")
            for line_no, row in enumerate(reader, start=2):
                if not row:
                    continue
                mcs, sinr, blep_v = int(row[0]), float(row[1]), float(row[2])
                if not 0.0 <= blep_v <= 1.0:
                    raise ValueError(f"line {line_no}: blep outside [0, 1]")
                rows.setdefault(mcs, []).append((sinr, blep_v))
        lut = {}
        for mcs, pts in rows.items():
            pts.sort()
            sinr = np.array([p[0] for p in pts])
            blep_v = np.array([p[1] for p in pts])
            if np.any(np.diff(blep_v) > 1e-12):
                raise ValueError(f"LUT for mcs {mcs} is not non-increasing in SINR")
            lut[mcs] = (sinr, blep_v)
        model._lut = lut
        _check_lut_mcs_order(lut)
        return model

    @property
    def mode(self) -> str:
        return "FileLUT" if self._lut is not None else "Parametric"

    def anchor_sinr_db(self, mcs: int) -> float:
        """SINR at which the reference-size BLEP equals 10% (parametric)."""
        return float(self._anchors[mcs])

    # -- evaluation --------------------------------------------------------

    def blep_ref(self, sinr_db: float, mcs: int) -> float:
        """Error probability at the reference block size."""
        if self._lut is not None:
            try:
                grid_sinr, grid_blep = self._lut[mcs]
            except KeyError:
                raise KeyError(f"no lookup-table entry for mcs {mcs}")
            return float(np.interp(sinr_db, grid_sinr, grid_blep))
        if math.isinf(sinr_db):
            return 0.0 if sinr_db > 0 else 1.0
        z = (self._anchors[mcs] - sinr_db) / self.slope_db + LOG_1_9
        # expit, numerically safe both directions
        if z >= 0:
            ez = math.exp(-z)
            return 1.0 / (1.0 + ez) if z < 700 else 1.0
        ez = math.exp(z)
        return ez / (1.0 + ez)

    def blep(self, sinr_db: float, mcs: int, block_size_bits: float) -> float:
        """Error probability for an arbitrary block size."""
        p_ref = self.blep_ref(sinr_db, mcs)
        if p_ref >= 1.0:
            return 1.0
        return 1.0 - (1.0 - p_ref) ** (block_size_bits / self.ref_size_bits)

    def blep_array(self, sinr_db: np.ndarray, mcs: int,
                   block_size_bits: np.ndarray) -> np.ndarray:
        """Vectorized `blep` over per-code-block SINRs and sizes."""
        sinr_db = np.asarray(sinr_db, dtype=float)
        if self._lut is not None:
            grid_sinr, grid_blep = self._lut[mcs]
            p_ref = np.interp(sinr_db, grid_sinr, grid_blep)
        else:
            z = (self._anchors[mcs] - sinr_db) / self.slope_db + LOG_1_9
            z = np.clip(z, -700, 700)
            p_ref = 1.0 / (1.0 + np.exp(-z))
        return 1.0 - (1.0 - p_ref) ** (np.asarray(block_size_bits) / self.ref_size_bits)

    # -- fast whole-block path ----------------------------------------------

    def prepare_tb(self, tb: "TransportBlock") -> None:
        """Precompute per-block constants for `tb_fail_prob`.

        In whole-block operation every attempt adds the same energy to all
        code blocks, so the accumulated per-CB SINR is the scalar attempt
        accumulation shifted by the frozen per-CB offsets; the block error
        probability becomes a cheap function of that scalar.
        """
        if self._lut is not None:
            tb.fastpath = None
            return
        inv = 1.0 / self.slope_db
        zoff = (self._anchors[tb.mcs] - tb.cb_sinr_offsets_db) * inv + LOG_1_9
        ratio = tb.cb_sizes / self.ref_size_bits
        tb.fastpath = (zoff, ratio, inv)

    def tb_fail_prob(self, tb: "TransportBlock", acc_db: float) -> float:
        """P(block decode fails) at scalar accumulated SINR `acc_db`."""
        if acc_db == -math.inf:
            return 1.0
        if getattr(tb, "fastpath", None) is None:
            blep_cb = self.blep_array(acc_db + tb.cb_sinr_offsets_db, tb.mcs,
                                      tb.cb_sizes)
            return 1.0 - float(np.prod(1.0 - blep_cb))
        zoff, ratio, inv = tb.fastpath
        z = zoff - acc_db * inv
        # log of per-CB success prob: log(1 - expit(z)) = -logaddexp(0, z)
        log_s = -float(np.dot(ratio, np.logaddexp(0.0, z)))
        return -math.expm1(log_s)

    def sinr_threshold(self, mcs: int, target: float,
                       block_size_bits: Optional[float] = None) -> float:
        """Lowest SINR at which `blep` does not exceed `target`.

        The returned value always qualifies: blep(threshold) <= target.
        Closed form in parametric mode so that the anchor SINR is exact.
        """
        if not 0.0 < target < 1.0:
            raise ValueError("target must be in (0, 1)")
        size = self.ref_size_bits if block_size_bits is None else block_size_bits
        t_ref = 1.0 - (1.0 - target) ** (self.ref_size_bits / size)
        if self._lut is None:
            logit = math.log(t_ref / (1.0 - t_ref))
            return float(self._anchors[mcs] + self.slope_db * (LOG_1_9 - logit))
        lo, hi = -80.0, 100.0
        if self.blep(lo, mcs, size) <= target:
            return lo
        if self.blep(hi, mcs, size) > target:
            return hi
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if self.blep(mid, mcs, size) > target:
                lo = mid
            else:
                hi = mid
        return hi


def _check_lut_mcs_order(lut: dict) -> None:
    # Higher MCS must not be easier to decode at the same SINR.
    indices = sorted(lut)
    for a, b in zip(indices, indices[1:]):
        grid = np.union1d(lut[a][0], lut[b][0])
        pa = np.interp(grid, *lut[a])
        pb = np.interp(grid, *lut[b])
        if np.any(pb < pa - 1e-9):
            raise ValueError(f"LUT violates MCS ordering between {a} and {b}")


def pdcch_blep(model: BlepModel, sinr_db: float, shift_db: float = 6.0,
               payload_bits: int = 40) -> float:
    """Control channel error model: most robust data curve shifted down."""
    return model.blep(sinr_db + shift_db, 0, payload_bits)


# --------------------------------------------------------------------------
# CQI mapping
# --------------------------------------------------------------------------

class CqiTable:
    """15-level CQI from SINR; level thresholds sit where the mapped MCS
    reaches the 10% reference error probability."""

    N_LEVELS = 15

    def __init__(self, model: BlepModel):
        n_mcs = len(model.table)
        picks = np.round(np.linspace(0, n_mcs - 1, self.N_LEVELS)).astype(int)
        self.mcs_of_cqi = picks
        self.thresholds_db = np.array(
            [model.sinr_threshold(int(m), 0.10) for m in picks])

    def cqi_from_sinr(self, sinr_db: float) -> int:
        # Boundary inclusive: SINR exactly at a threshold maps to that level.
        idx = int(np.searchsorted(self.thresholds_db, sinr_db, side="right"))
        return max(1, idx)


# --------------------------------------------------------------------------
# Combining
# --------------------------------------------------------------------------

def chase_combine(sinrs_db: Sequence[float]) -> float:
    """Accumulated effective SINR of repeated receptions (linear sum)."""
    if len(sinrs_db) == 0:
        raise ValueError("chase_combine requires at least one reception")
    acc = 0.0
    for g in sinrs_db:
        if g == -math.inf:
            continue
        acc += 10.0 ** (g / 10.0)
    if acc == 0.0:
        return -math.inf
    return 10.0 * math.log10(acc)


def cross_link_combine(sinr_x_db: float, sinr_t_db: float,
                       loss_db: float = 0.0) -> float:
    """Effective SINR after adding soft values from the two receivers.

    Soft-bit addition over independent receptions is modeled as linear SINR
    accumulation; `loss_db` derates the weaker contribution if a non-ideal
    combiner should be assumed.
    """
    return chase_combine([sinr_x_db, sinr_t_db - loss_db])


# --------------------------------------------------------------------------
# Segmentation
# --------------------------------------------------------------------------

@dataclass
class TransportBlock:
    """A scheduled block: payload size, segmentation and CBG layout.

    `cb_sinr_offsets_db` models the frequency selectivity seen by individual
    code blocks; it is drawn once when the block is built and reused for
    every retransmission and by both receivers, so the per-CB SINR ordering
    is stable over the block's lifetime.
    """

    uid: int
    size_bits: int
    mcs: int
    cb_sizes: np.ndarray          # coded block sizes incl. per-CB CRC
    cb_payload_lo: np.ndarray     # payload bit ranges mapped onto [0, size)
    cb_payload_hi: np.ndarray
    cbg_of_cb: np.ndarray
    n_cbg: int
    cb_sinr_offsets_db: np.ndarray = field(default=None)
    fastpath: tuple = field(default=None, repr=False)

    @property
    def n_cb(self) -> int:
        return len(self.cb_sizes)

    def cbs_of_cbg_mask(self, cbg_mask: np.ndarray) -> np.ndarray:
        """Boolean CB selector for the CBGs flagged in `cbg_mask`."""
        return cbg_mask[self.cbg_of_cb]


_SEG_CACHE: dict = {}


def segment_tb(tb_size_bits: int, uid: int = 0, mcs: int = 0) -> TransportBlock:
    """Split a transport block into code blocks and assign CBGs.

    Blocks above the maximum code block size gain a block-level CRC and are
    split into near-equal pieces, each small enough to carry its own CRC
    within the limit. Code blocks map round-robin onto at most eight groups.
    """
    if tb_size_bits <= 0:
        raise ValueError("tb_size_bits must be > 0")
    b = int(tb_size_bits)
    cached = _SEG_CACHE.get(b)
    if cached is None:
        if b <= MAX_CB_BITS:
            payload = np.array([b])
            cb_sizes = np.array([b])
        else:
            total = b + TB_CRC_BITS
            c = math.ceil(total / (MAX_CB_BITS - CB_CRC_BITS))
            base = total // c
            rem = total % c
            payload = np.full(c, base)
            payload[:rem] += 1
            cb_sizes = payload + CB_CRC_BITS
        hi = np.cumsum(payload)
        lo = hi - payload
        # The trailing block-level CRC bits are not application payload.
        lo = np.minimum(lo, b)
        hi = np.minimum(hi, b)
        n_cbg = min(MAX_CBG, len(cb_sizes))
        cbg = np.arange(len(cb_sizes)) % n_cbg
        for arr in (cb_sizes, lo, hi, cbg):
            arr.setflags(write=False)
        cached = (cb_sizes, lo, hi, cbg, n_cbg)
        if len(_SEG_CACHE) < 4096:
            _SEG_CACHE[b] = cached
    cb_sizes, lo, hi, cbg, n_cbg = cached
    return TransportBlock(uid=uid, size_bits=b, mcs=mcs, cb_sizes=cb_sizes,
                          cb_payload_lo=lo, cb_payload_hi=hi,
                          cbg_of_cb=cbg, n_cbg=n_cbg)


def draw_cb_sinr_offsets(tb: TransportBlock, std_db: float,
                         rng: np.random.Generator) -> None:
    """Draw and freeze the per-code-block SINR perturbations for `tb`."""
    if std_db == 0.0:
        tb.cb_sinr_offsets_db = np.zeros(tb.n_cb)
    else:
        tb.cb_sinr_offsets_db = rng.normal(0.0, std_db, tb.n_cb)
