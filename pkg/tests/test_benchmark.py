"""Scaling benchmark: linear/quadratic FLOP growth, OOM handling, CSV."""
import numpy as np
import pytest

from samnet.benchmark import (CSV_HEADER, BenchReport, BenchRow, bench_scaling,
                              flag_inversions)
from samnet.errors import ConfigError


@pytest.fixture(scope="module")
def small_report():
    return bench_scaling(["sam", "selfattn"], [256, 512, 1024], dim=8, repeats=5, seed=0)


def test_row_count_is_cartesian(small_report):
    assert len(small_report.rows) == 6


def test_sam_flops_double_with_length(small_report):
    for a, b in ((256, 512), (512, 1024)):
        ratio = small_report.row("sam", b).flops / small_report.row("sam", a).flops
        assert 1.95 <= ratio <= 2.05


def test_foil_flops_quadruple_with_length(small_report):
    ratio = small_report.row("selfattn", 1024).flops / small_report.row("selfattn", 512).flops
    assert ratio >= 3.5


def test_sam_flop_increments_are_affine(small_report):
    f = [small_report.row("sam", L).flops for L in (256, 512, 1024)]
    d1, d2 = f[1] - f[0], f[2] - f[1]
    assert abs(d2 - 2 * d1) / d2 < 0.01


def test_peak_allocation_grows_linearly(small_report):
    ratio = small_report.row("sam", 1024).peak_bytes / small_report.row("sam", 512).peak_bytes
    assert 1.8 <= ratio <= 2.2


def test_gru_sequential_ops_stay_constant(small_report):
    # indirectly: FLOPs for the walk GRUs are in the affine constant, so per-L
    # increments stay put; the direct counter is asserted in acceptance tests
    assert small_report.row("sam", 256).flops > 0


def test_foil_over_budget_records_oom_row():
    tiny_budget = 2 << 20  # 2 MiB, below the 512x512 score matrix
    report = bench_scaling(["selfattn"], [512], dim=8, repeats=5, seed=0,
                           budget_bytes=tiny_budget)
    row = report.row("selfattn", 512)
    assert row.oom
    csv_line = row.to_csv()
    assert "OOM" in csv_line
    assert csv_line.startswith("selfattn,512,")


def test_csv_header_and_shape(small_report):
    lines = small_report.to_csv().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 7
    for line in lines[1:]:
        assert len(line.split(",")) == 6


def test_repeats_below_five_rejected():
    with pytest.raises(ConfigError, match="repeats"):
        bench_scaling(["sam"], [64], repeats=3)


def test_unknown_variant_rejected():
    with pytest.raises(ConfigError, match="variant"):
        bench_scaling(["transformer-xl"], [64])


def test_inversion_flagging_on_constructed_rows():
    report = BenchReport(rows=[
        BenchRow("sam", 256, 1.0, 0.0, 10, 10),
        BenchRow("sam", 512, 0.5, 0.0, 20, 20),   # inversion
        BenchRow("sam", 1024, 2.0, 0.0, 40, 40),
    ])
    flags = flag_inversions(report)
    assert len(flags) == 1 and "512" in flags[0]


def test_timing_fields_present_and_positive(small_report):
    for row in small_report.rows:
        if not row.oom:
            assert row.forward_ms_mean > 0
            assert row.forward_ms_std >= 0
