import json
import math

import numpy as np
import pytest

from tgsim import kpi
from tgsim.config import default_config, with_overrides
from tgsim.engine import DropResult, FrameRecord


def frame(flow=0, fid=0, arrival=0.0, size=1000, pdb=10.0, completion=None,
          delivered=None):
    if completion is not None and delivered is None:
        delivered = size
    return FrameRecord(flow, 0, fid, arrival, size, arrival + pdb,
                       delivered or 0, completion)


def make_drop(frames, drop_index=0, cells=2, n_prb=273, dl_slots=100,
              occupied=None, scenario=None, propagation=None, mcs=None,
              embb=None):
    return DropResult(
        drop_index=drop_index, drop_seed=drop_index, n_slots=1000,
        frames=frames,
        prb_occupied_sum=(np.zeros(cells) if occupied is None
                          else np.asarray(occupied, dtype=float)),
        prb_dl_slots=dl_slots, n_prb=n_prb,
        scenario_counts=(np.zeros(9, dtype=np.int64) if scenario is None
                         else np.asarray(scenario, dtype=np.int64)),
        propagation_counts=(np.zeros(4, dtype=np.int64) if propagation is None
                            else np.asarray(propagation, dtype=np.int64)),
        mcs_counts=(np.zeros(28, dtype=np.int64) if mcs is None
                    else np.asarray(mcs, dtype=np.int64)),
        xr_retx_count=0, embb_retx_count=0, tether_bits=0,
        embb_served_bits=embb or {}, generated_bits={}, delivered_bits={},
        lost_bits={})


# -- satisfaction ----------------------------------------------------------------

def test_user_satisfied_at_99_percent_threshold():
    def log(on_time):
        frames = [frame(fid=i, arrival=i * 16.7, completion=i * 16.7 + 5.0)
                  for i in range(on_time)]
        frames += [frame(fid=on_time + i, arrival=9000.0 + i,
                         completion=9000.0 + i + 50.0)
                   for i in range(540 - on_time)]
        return frames

    assert kpi.user_satisfied(log(535))       # 535/540 = 0.9907 >= 0.99
    assert not kpi.user_satisfied(log(534))   # 534/540 = 0.9889 < 0.99


def test_user_satisfied_all_on_time():
    frames = [frame(fid=i, arrival=i * 16.7, completion=i * 16.7 + 1.0)
              for i in range(100)]
    assert kpi.user_satisfied(frames)


def test_user_satisfied_undelivered_counts_against():
    frames = [frame(fid=i, arrival=0.0, completion=1.0) for i in range(98)]
    frames += [frame(fid=98, arrival=0.0, completion=None),
               frame(fid=99, arrival=0.0, completion=None)]
    assert not kpi.user_satisfied(frames)


def test_user_satisfied_pdb_override():
    frames = [frame(fid=i, arrival=0.0, pdb=10.0, completion=12.0)
              for i in range(10)]
    assert not kpi.user_satisfied(frames)
    assert kpi.user_satisfied(frames, pdb_ms=15.0)


def test_user_satisfied_empty_log_rejected():
    with pytest.raises(ValueError):
        kpi.user_satisfied([])


# -- capacity ---------------------------------------------------------------------

def test_capacity_examples():
    assert kpi.xr_capacity({5: 0.92, 6: 0.88}, 10.0).capacity == 5
    assert kpi.xr_capacity({1: 0.85}, 10.0).capacity == 0
    assert kpi.xr_capacity({4: 0.95, 5: 0.95, 6: 0.89}, 10.0).capacity == 5


def test_capacity_interpolation_reported_separately():
    curve = kpi.xr_capacity({4: 0.95, 5: 0.85}, 10.0)
    assert curve.capacity == 4
    assert curve.interpolated == pytest.approx(4.5)


# -- delay percentiles ---------------------------------------------------------------

def test_delay_percentile_nearest_rank():
    assert kpi.delay_percentile([5.0] * 50, 99) == 5.0
    data = list(range(1, 101))
    assert kpi.delay_percentile(data, 99) == 99
    assert kpi.delay_percentile(data, 100) == 100
    assert kpi.delay_percentile(data, 50) == 50
    assert kpi.delay_percentile(data, 1) == 1


def test_delay_percentile_with_undelivered():
    delays = [1.0] * 99 + [math.inf]
    assert kpi.delay_percentile(delays, 100) == math.inf
    assert math.isfinite(kpi.delay_percentile(delays, 99))


def test_delay_percentile_monotone_in_p():
    rng = np.random.default_rng(0)
    data = rng.exponential(5.0, 500).tolist()
    ps = np.linspace(1, 100, 60)
    vals = [kpi.delay_percentile(data, p) for p in ps]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_delay_percentile_validates():
    with pytest.raises(ValueError):
        kpi.delay_percentile([], 99)
    with pytest.raises(ValueError):
        kpi.delay_percentile([1.0], 0)


def test_frame_delay_semantics():
    assert kpi.frame_delay_ms(frame(arrival=3.0, completion=9.5)) == 6.5
    assert kpi.frame_delay_ms(frame(arrival=3.0)) == math.inf


# -- PRB load --------------------------------------------------------------------------

def test_prb_load_limits():
    idle = make_drop([], occupied=[0.0, 0.0], dl_slots=200)
    assert np.all(kpi.prb_load_per_cell([idle]) == 0.0)
    full = make_drop([], occupied=[200 * 273, 200 * 273], dl_slots=200)
    assert np.all(kpi.prb_load_per_cell([full]) == 1.0)
    half = make_drop([], occupied=[100 * 273, 0.0], dl_slots=200)
    assert kpi.prb_load_per_cell([half]).tolist() == [0.5, 0.0]


# -- broadband throughput -----------------------------------------------------------------

def test_embb_throughput_division():
    cfg = with_overrides(default_config(), sim_duration_s=9.0, warmup_ms=0.0)
    d = make_drop([], embb={10: 90_000_000})
    out = kpi.embb_throughput_mbps([d], cfg)
    assert out[(0, 10)] == pytest.approx(10.0)
    d0 = make_drop([], embb={10: 0})
    assert kpi.embb_throughput_mbps([d0], cfg)[(0, 10)] == 0.0


# -- histograms -------------------------------------------------------------------------------

def test_scenario_histogram_normalization():
    d = make_drop([], scenario=[10, 5, 0, 3, 2, 0, 0, 0, 0],
                  propagation=[20, 0, 0, 0])
    h = kpi.scenario_histogram([d])
    assert h["scenario_freq"].sum() == pytest.approx(1.0, abs=1e-12)
    assert h["propagation_freq"][0] == 1.0  # forced all-LOS input


def test_mcs_distribution():
    mcs = np.zeros(28, dtype=np.int64)
    mcs[27] = 75
    mcs[10] = 25
    dist = kpi.mcs_distribution([make_drop([], mcs=mcs)])
    assert dist[27] == pytest.approx(0.75)
    assert dist.sum() == pytest.approx(1.0)


# -- writers -----------------------------------------------------------------------------------

def test_csv_writers_schema(tmp_path):
    cap = tmp_path / "capacity.csv"
    kpi.write_capacity_csv(str(cap), [{
        "scheme": "sscs", "csi_mode": "Best", "pdb_ms": 10.0,
        "users_per_cell": 5, "satisfied_fraction": 0.93, "capacity_flag": True}])
    lines = cap.read_text().splitlines()
    assert lines[0] == ("scheme,csi_mode,pdb_ms,users_per_cell,"
                        "satisfied_fraction,capacity_flag")
    assert lines[1].startswith("sscs,Best,10.000000,5,0.930000,1")

    delay = tmp_path / "delay.csv"
    kpi.write_delay_csv(str(delay), [{"scheme": "legacy", "users_per_cell": 4,
                                      "p50_ms": 3.25, "p99_ms": 9.5}])
    assert delay.read_text().splitlines()[0] == "scheme,users_per_cell,p50_ms,p99_ms"

    prb = tmp_path / "prb.csv"
    kpi.write_prb_csv(str(prb), [{"scheme": "legacy", "cell": 0, "mean_load": 0.4}])
    assert prb.read_text().splitlines()[0] == "scheme,cell,mean_load"

    embb = tmp_path / "embb.csv"
    kpi.write_embb_csv(str(embb), [{"scheme": "legacy", "user": "0-3", "mbps": 55.0}])
    assert embb.read_text().splitlines()[0] == "scheme,user,mbps"


def test_summary_json_round_trip(tmp_path):
    cfg = with_overrides(default_config(), users_per_cell=2,
                         sim_duration_s=0.5, drops=1, cells=2)
    from tgsim.engine import run_drop
    res = [run_drop(cfg, 0)]
    s = kpi.summarize(res, cfg, "sscs", extra_pdbs=(15.0,))
    path = tmp_path / "summary.json"
    kpi.write_summary_json(str(path), cfg, [s])
    doc = json.loads(path.read_text())
    assert doc["config"]["users_per_cell"] == 2
    assert doc["results"][0]["scheme"] == "sscs"
    assert "15.0" in doc["results"][0]["satisfied_fraction_by_pdb"]
    assert 0.0 <= doc["results"][0]["satisfied_fraction"] <= 1.0


def test_satisfaction_ci_shrinks_with_n():
    a = kpi.satisfaction_ci(100, 0.9)
    b = kpi.satisfaction_ci(1000, 0.9)
    assert b < a
    assert math.isnan(kpi.satisfaction_ci(0, 0.9))
