"""Scenario configuration: key set, defaults, loading and validation.

A scenario file is YAML with the keys documented below. Any unknown key is a
hard error so typos cannot silently fall back to defaults. Omitted keys take
the documented defaults; a handful of defaults depend on the deployment
(``InH`` vs ``DU``) or on other keys and are resolved at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import yaml

SPEED_OF_LIGHT = 3.0e8

DEPLOYMENTS = ("InH", "DU")
USER_MODES = ("LegacyXR", "TGr")
COOP_SCHEMES = ("none", "SCS", "SSCS")
CSI_MODES = ("UEX", "Best")
CB_MODES = ("TB", "CBG")
LIMITED_CB_VARIANTS = ("none", "CBsUEX", "CBsUET")

# Per-deployment defaults: cells, ISD, gNB power/height, indoor probability,
# area bounding box and building floors.
_DEPLOYMENT_DEFAULTS = {
    "InH": dict(cells=12, inter_site_distance_m=20.0, gnb_power_dbm=31.0,
                gnb_height_m=3.0, indoor_prob=1.0, area_m=(120.0, 50.0),
                building_floors=1),
    "DU": dict(cells=21, inter_site_distance_m=200.0, gnb_power_dbm=51.0,
               gnb_height_m=25.0, indoor_prob=0.8, area_m=(528.0, 460.0),
               building_floors=6),
}

# Alternative DU bounding box quoted in prose descriptions of the layout;
# selectable via `area_preset: narrow`.
DU_AREA_NARROW = (528.0, 60.0)


class ConfigError(ValueError):
    """Raised for malformed scenario files or invariant violations."""


@dataclass
class TruncGaussParams:
    """Truncated Gaussian: mean, std and inclusive [lo, hi] support."""

    mu: float
    sigma: float
    lo: float
    hi: float

    def validate(self, name: str) -> None:
        if self.sigma <= 0:
            raise ConfigError(f"{name}: sigma must be > 0 (got {self.sigma})")
        if not self.lo < self.hi:
            raise ConfigError(f"{name}: requires lo < hi (got [{self.lo}, {self.hi}])")


@dataclass
class OllaParams:
    init_offset_db: float = 0.0
    delta_up_db: float = 0.5
    # Resolved to delta_up * target / (1 - target) when omitted, which places
    # the zero-drift point of the offset walk exactly at the target BLER.
    delta_down_db: Optional[float] = None
    min_offset_db: float = -10.0
    max_offset_db: float = 10.0


@dataclass
class LimitedCbParams:
    variant: str = "none"
    fraction: float = 1.0


@dataclass
class ScenarioConfig:
    # Deployment / layout
    deployment: str = "InH"
    cells: Optional[int] = None
    inter_site_distance_m: Optional[float] = None
    gnb_power_dbm: Optional[float] = None
    gnb_height_m: Optional[float] = None
    indoor_prob: Optional[float] = None
    area_m: Optional[tuple] = None
    area_preset: str = "default"
    building_floors: Optional[int] = None
    ue_height_m: float = 1.5
    intra_tgr_distance_m: float = 1.0

    # Radio numerology
    bandwidth_hz: float = 100e6
    carrier_hz: float = 4e9
    scs_hz: float = 30e3
    n_prb: Optional[int] = None
    tdd_pattern: str = "DDDSU"

    # Users and cooperation
    users_per_cell: int = 7
    user_mode: str = "TGr"
    coop_scheme: str = "SSCS"
    csi_mode: str = "Best"
    cb_mode: str = "TB"
    limited_cb: LimitedCbParams = field(default_factory=LimitedCbParams)
    embb_users_per_cell: int = 0

    # Link adaptation
    target_bler: Optional[float] = None
    olla: OllaParams = field(default_factory=OllaParams)
    csi_period_ms: float = 2.0
    csi_delay_ms: float = 2.0

    # XR traffic
    pdb_ms: float = 10.0
    xr_rate_mbps: float = 45.0
    frame_rate_fps: float = 60.0
    frame_size_kb: TruncGaussParams = field(
        default_factory=lambda: TruncGaussParams(93.0, 10.0, 46.0, 141.0))
    jitter_ms: TruncGaussParams = field(
        default_factory=lambda: TruncGaussParams(0.0, 2.0, -4.0, 4.0))

    # Channel abstraction
    noise_figure_db: float = 9.0
    link_gain_db: float = 15.0
    # Mean suppression of other-cell interference relative to the serving
    # beam; stands in for the spatial selectivity of the precoded downlink.
    interference_suppression_db: float = 28.0
    o2i_loss_db: float = 20.0
    shadow_correlation: float = 0.9
    los_correlation: float = 0.9
    fading_std_db: float = 3.0
    ue_speed_kmh: float = 3.0
    coherence_time_ms: Optional[float] = None
    combining_loss_db: float = 0.0
    per_cb_sinr_std_db: float = 1.0

    # Block error model
    blep_impl_loss_db: float = 2.0
    blep_slope_db: float = 1.0
    blep_ref_size_bits: int = 8448
    blep_lut_path: Optional[str] = None
    pdcch_shift_db: float = 6.0
    pdcch_payload_bits: int = 40

    # HARQ / MAC
    max_retx: int = 3
    pf_window_slots: int = 100
    ue_rx_proc_symbols: float = 6.0
    hf2_timeout_slots: int = 2

    # Run control
    sim_duration_s: float = 9.0
    warmup_ms: float = 100.0
    drops: int = 10
    seed: int = 1

    # Derived helpers -----------------------------------------------------

    @property
    def slot_ms(self) -> float:
        return 15e3 / self.scs_hz

    @property
    def slots_per_second(self) -> int:
        return int(round(1000.0 / self.slot_ms))

    @property
    def n_slots(self) -> int:
        return int(round(self.sim_duration_s * 1000.0 / self.slot_ms))

    @property
    def doppler_hz(self) -> float:
        return (self.ue_speed_kmh / 3.6) * self.carrier_hz / SPEED_OF_LIGHT

    def is_tgr(self) -> bool:
        return self.user_mode == "TGr"


def default_config(deployment: str = "InH") -> ScenarioConfig:
    return _resolve(ScenarioConfig(deployment=deployment))


def _resolve(cfg: ScenarioConfig) -> ScenarioConfig:
    """Fill deployment-dependent and conditional defaults, then validate."""
    if cfg.deployment not in DEPLOYMENTS:
        raise ConfigError(f"deployment must be one of {DEPLOYMENTS} (got {cfg.deployment!r})")
    dep = _DEPLOYMENT_DEFAULTS[cfg.deployment]
    if cfg.cells is None:
        cfg.cells = dep["cells"]
    if cfg.inter_site_distance_m is None:
        cfg.inter_site_distance_m = dep["inter_site_distance_m"]
    if cfg.gnb_power_dbm is None:
        cfg.gnb_power_dbm = dep["gnb_power_dbm"]
    if cfg.gnb_height_m is None:
        cfg.gnb_height_m = dep["gnb_height_m"]
    if cfg.indoor_prob is None:
        cfg.indoor_prob = dep["indoor_prob"]
    if cfg.building_floors is None:
        cfg.building_floors = dep["building_floors"]
    if cfg.area_m is None:
        if cfg.area_preset == "default":
            cfg.area_m = dep["area_m"]
        elif cfg.area_preset == "narrow" and cfg.deployment == "DU":
            cfg.area_m = DU_AREA_NARROW
        else:
            raise ConfigError(f"unknown area_preset {cfg.area_preset!r} for {cfg.deployment}")
    cfg.area_m = (float(cfg.area_m[0]), float(cfg.area_m[1]))

    if cfg.n_prb is None:
        cfg.n_prb = _default_n_prb(cfg.bandwidth_hz, cfg.scs_hz)

    # CBG operation raises the working point; a higher default error target
    # keeps the rate selection aggressive while retransmitting only the
    # failed code block groups.
    if cfg.target_bler is None:
        cfg.target_bler = 0.30 if cfg.cb_mode == "CBG" else 0.10

    if cfg.olla.delta_down_db is None:
        t = cfg.target_bler
        cfg.olla.delta_down_db = cfg.olla.delta_up_db * t / (1.0 - t)

    if cfg.coherence_time_ms is None:
        # Classic coherence-time estimate 0.423 / f_D.
        cfg.coherence_time_ms = 0.423 / cfg.doppler_hz * 1000.0

    _validate(cfg)
    return cfg


def _default_n_prb(bandwidth_hz: float, scs_hz: float) -> int:
    # Standard transmission bandwidth configurations for common FR1 points;
    # ~2% guard band assumed otherwise.
    table = {
        (100e6, 30e3): 273,
        (50e6, 30e3): 133,
        (40e6, 30e3): 106,
        (20e6, 30e3): 51,
        (20e6, 15e3): 106,
        (10e6, 15e3): 52,
    }
    key = (float(bandwidth_hz), float(scs_hz))
    if key in table:
        return table[key]
    return int(bandwidth_hz * 0.98 / (12 * scs_hz))


def _validate(cfg: ScenarioConfig) -> None:
    def check(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    check(cfg.cells >= 1, "cells must be >= 1")
    check(cfg.inter_site_distance_m > 0, "inter_site_distance_m must be > 0")
    check(len(cfg.tdd_pattern) == 5 and set(cfg.tdd_pattern) <= set("DSU"),
          f"tdd_pattern must be a 5-slot D/S/U sequence (got {cfg.tdd_pattern!r})")
    check(0.0 < cfg.target_bler < 1.0,
          f"target_bler must be in (0, 1) (got {cfg.target_bler})")
    check(cfg.olla.delta_up_db > 0, "olla.delta_up_db must be > 0")
    check(cfg.olla.delta_down_db > 0, "olla.delta_down_db must be > 0")
    check(cfg.olla.min_offset_db < cfg.olla.max_offset_db,
          "olla offset clamp range is empty")
    cfg.frame_size_kb.validate("frame_size_kb")
    cfg.jitter_ms.validate("jitter_ms")
    check(cfg.frame_size_kb.lo < cfg.frame_size_kb.mu < cfg.frame_size_kb.hi,
          "frame_size_kb requires lo < mu < hi")
    check(cfg.user_mode in USER_MODES, f"user_mode must be one of {USER_MODES}")
    check(cfg.coop_scheme in COOP_SCHEMES, f"coop_scheme must be one of {COOP_SCHEMES}")
    check(cfg.csi_mode in CSI_MODES, f"csi_mode must be one of {CSI_MODES}")
    check(cfg.cb_mode in CB_MODES, f"cb_mode must be one of {CB_MODES}")
    check(cfg.limited_cb.variant in LIMITED_CB_VARIANTS,
          f"limited_cb.variant must be one of {LIMITED_CB_VARIANTS}")
    check(0.0 < cfg.limited_cb.fraction <= 1.0,
          f"limited_cb.fraction must be in (0, 1] (got {cfg.limited_cb.fraction})")
    check(cfg.users_per_cell >= 0, "users_per_cell must be >= 0")
    check(cfg.embb_users_per_cell >= 0, "embb_users_per_cell must be >= 0")
    check(0.0 <= cfg.indoor_prob <= 1.0, "indoor_prob must be in [0, 1]")
    check(0.0 <= cfg.shadow_correlation <= 1.0, "shadow_correlation must be in [0, 1]")
    check(0.0 <= cfg.los_correlation <= 1.0, "los_correlation must be in [0, 1]")
    check(cfg.fading_std_db >= 0, "fading_std_db must be >= 0")
    check(cfg.per_cb_sinr_std_db >= 0, "per_cb_sinr_std_db must be >= 0")
    check(cfg.blep_slope_db > 0, "blep_slope_db must be > 0")
    check(cfg.blep_ref_size_bits > 0, "blep_ref_size_bits must be > 0")
    check(cfg.max_retx >= 0, "max_retx must be >= 0")
    check(cfg.pf_window_slots >= 1, "pf_window_slots must be >= 1")
    check(cfg.hf2_timeout_slots >= 0, "hf2_timeout_slots must be >= 0")
    check(cfg.sim_duration_s > 0, "sim_duration_s must be > 0")
    check(0.0 <= cfg.warmup_ms < cfg.sim_duration_s * 1000.0,
          "warmup_ms must be >= 0 and less than the simulated time")
    check(cfg.drops >= 1, "drops must be >= 1")
    check(cfg.frame_rate_fps > 0, "frame_rate_fps must be > 0")
    check(cfg.pdb_ms > 0, "pdb_ms must be > 0")
    if cfg.user_mode == "TGr" and cfg.coop_scheme == "none":
        raise ConfigError("TGr user_mode requires coop_scheme SCS or SSCS")
    if cfg.limited_cb.variant != "none" and cfg.cb_mode != "CBG":
        raise ConfigError("limited_cb requires cb_mode: CBG")


# Keys accepted in scenario files, mapped onto dataclass attributes. Nested
# dict keys are listed per sub-struct.
_NESTED_FIELDS = {
    "olla": (OllaParams, {"init_offset_db", "delta_up_db", "delta_down_db",
                          "min_offset_db", "max_offset_db"}),
    "limited_cb": (LimitedCbParams, {"variant", "fraction"}),
    "frame_size_kb": (TruncGaussParams, {"mu", "sigma", "lo", "hi"}),
    "jitter_ms": (TruncGaussParams, {"mu", "sigma", "lo", "hi"}),
}


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Build a config from a parsed mapping; unknown keys are an error."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must contain a mapping of keys to values")
    known = {f.name for f in fields(ScenarioConfig)}
    cfg = ScenarioConfig()
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        if key in _NESTED_FIELDS:
            cls, subkeys = _NESTED_FIELDS[key]
            if not isinstance(value, dict):
                raise ConfigError(f"{key} must be a mapping with keys {sorted(subkeys)}")
            bad = set(value) - subkeys
            if bad:
                raise ConfigError(f"unknown key(s) {sorted(bad)} under {key!r}")
            base = getattr(cfg, key)
            for sk, sv in value.items():
                setattr(base, sk, sv)
        elif key == "area_m":
            if not (isinstance(value, (list, tuple)) and len(value) == 2):
                raise ConfigError("area_m must be a [width, height] pair in meters")
            setattr(cfg, key, tuple(float(v) for v in value))
        else:
            setattr(cfg, key, value)
    return _resolve(cfg)


def load_config(path: str) -> ScenarioConfig:
    """Load and validate a scenario file; an empty file yields all defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    return config_from_dict(raw)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Round-trippable plain-dict form (used for the JSON summary echo)."""
    out = {}
    for f in fields(ScenarioConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, (OllaParams, LimitedCbParams, TruncGaussParams)):
            out[f.name] = dict(v.__dict__)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        else:
            out[f.name] = v
    return out


def with_overrides(cfg: ScenarioConfig, **kwargs) -> ScenarioConfig:
    """Copy `cfg` with the given field values replaced and re-validated."""
    new = replace(cfg)
    # replace() shares mutable sub-structs; deep-copy them before edits.
    new.olla = OllaParams(**cfg.olla.__dict__)
    new.limited_cb = LimitedCbParams(**cfg.limited_cb.__dict__)
    new.frame_size_kb = TruncGaussParams(**cfg.frame_size_kb.__dict__)
    new.jitter_ms = TruncGaussParams(**cfg.jitter_ms.__dict__)
    for key, value in kwargs.items():
        if not hasattr(new, key):
            raise ConfigError(f"unknown configuration key {key!r}")
        setattr(new, key, value)
    # Re-resolve so conditional defaults re-apply when a field is reset to
    # None (e.g. target_bler=None after switching cb_mode).
    return _resolve(new)
