import time

from tgsim.linkadapt import ACK, NACK, joint_feedback
from tgsim.validation import format_report, validate_tables


def test_all_rows_match():
    rows = validate_tables()
    assert len(rows) == 19  # 9 + 10 (scenario 5 branches twice for SSCS)
    assert all(r.ok for r in rows)


def test_row_coverage():
    rows = validate_tables()
    for scheme, expected in (("SCS", 9), ("SSCS", 10)):
        mine = [r for r in rows if r.scheme == scheme]
        assert len(mine) == expected
        assert sorted({r.scenario for r in mine}) == list(range(1, 10))
    branches = {r.branch for r in rows if r.scheme == "SSCS" and r.scenario == 5}
    assert branches == {"softc-ack", "softc-nack"}


def test_runs_fast():
    start = time.perf_counter()
    validate_tables()
    assert time.perf_counter() - start < 1.0


def test_harness_detects_injected_or_bug():
    def broken(scheme, hf_x1, hf_t1, hf_x2="ABSENT"):
        # flip the outcome when exactly one first feedback is positive
        # (breaks scenario 4 among others)
        out = joint_feedback(scheme, hf_x1, hf_t1, hf_x2)
        if (hf_x1 == ACK) != (hf_t1 == ACK):
            return NACK if out == ACK else ACK
        return out

    rows = validate_tables(feedback_fn=broken)
    bad = [r for r in rows if not r.ok]
    assert bad
    assert any(r.scenario == 4 for r in bad)
    report = format_report(rows)
    assert "MISMATCH" in report


def test_report_mentions_all_rows():
    report = format_report(validate_tables())
    assert "19/19 rows match" in report
