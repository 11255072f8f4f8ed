"""Kernel memory model and the published cost table."""

from fractions import Fraction

import numpy as np
import pytest

from guidepth import ConfigurationError, MemoryModel, memory_cost, memory_report
from guidepth.memory import closed_form_ratios


class TestElementCounts:
    def test_closed_forms(self):
        m = MemoryModel(C=4, H=6, W=6, R=3)
        assert m.elements("DC") == 4 * 4 * 9 * 36
        assert m.elements("CF") == 4 * 9 * 36 + 16
        assert m.elements("EG") == 4 * 36 + 16

    def test_degenerate_unit_case(self):
        assert memory_cost("DC", 1, 1, 1, 1).elements == 1
        assert memory_cost("CF", 1, 1, 1, 1).elements == 2
        assert memory_cost("EG", 1, 1, 1, 1).elements == 2

    def test_bytes_are_four_per_element(self):
        c = memory_cost("EG", 8, 8, 8, 3)
        assert c.bytes == 4 * c.elements
        assert c.gigabytes == pytest.approx(c.bytes / 1024**3)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            memory_cost("FULL", 4, 4, 4, 3)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            MemoryModel(C=0, H=4, W=4, R=3)
        with pytest.raises(ConfigurationError):
            MemoryModel(C=4, H=4, W=4, R=2)  # even kernel


class TestPublishedTable:
    """The benchmark shape: C=128, H=128, W=608, R=3, 4-byte floats."""

    def test_exact_element_counts(self):
        assert memory_cost("DC", 128, 128, 608, 3).elements == 11_475_615_744
        assert memory_cost("CF", 128, 128, 608, 3).elements == 89_669_632
        assert memory_cost("EG", 128, 128, 608, 3).elements == 9_977_856

    def test_gigabyte_figures(self):
        rep = memory_report()
        gb = {r["method"]: r["GB"] for r in rep.rows()}
        assert gb["DC"] == pytest.approx(42.75, abs=0.005)
        assert gb["CF"] == pytest.approx(0.334, abs=0.005)
        assert gb["EG"] == pytest.approx(0.037, abs=0.005)

    def test_ratio_column(self):
        rep = memory_report()
        ratios = {r["method"]: r["ratio_vs_EG"] for r in rep.rows()}
        assert abs(ratios["DC"] - 1155) <= 1
        assert round(ratios["CF"]) == 9
        assert round(ratios["EG"]) == 1

    def test_exact_ratio_fractions(self):
        r = closed_form_ratios(128, 128, 608, 3)
        # DC/EG = C^2 R^2 HW / (CHW + C^2); exact, not the rounded table entry
        assert r["EG/DC"] == Fraction(9_977_856, 11_475_615_744)
        assert 1 / r["EG/DC"] == Fraction(11_475_615_744, 9_977_856)
        assert float(1 / r["EG/CF"]) == pytest.approx(8.987, abs=0.001)


class TestReportFormats:
    def test_text_has_all_methods(self):
        text = memory_report(8, 16, 16, 3).as_text()
        for method in ("DC", "CF", "EG"):
            assert method in text

    def test_csv_parses_back_exact(self):
        csv_text = memory_report(8, 16, 16, 3).as_csv()
        lines = csv_text.strip().splitlines()
        assert lines[0] == "method,C,H,W,R,elements,bytes,GB,ratio_vs_EG"
        parsed = {}
        for line in lines[1:]:
            parts = line.split(",")
            parsed[parts[0]] = int(parts[5])
        assert parsed["DC"] == memory_cost("DC", 8, 16, 16, 3).elements
        assert parsed["CF"] == memory_cost("CF", 8, 16, 16, 3).elements
        assert parsed["EG"] == memory_cost("EG", 8, 16, 16, 3).elements

    def test_report_is_fast(self):
        import time

        t0 = time.perf_counter()
        memory_report()
        assert time.perf_counter() - t0 < 1.0


class TestScalingLaws:
    def test_dc_quadratic_in_channels(self):
        base = memory_cost("DC", 4, 8, 8, 3).elements
        assert memory_cost("DC", 8, 8, 8, 3).elements == 4 * base

    def test_eg_near_linear_in_channels(self):
        # CHW dominates C^2 whenever HW >> C
        e4 = memory_cost("EG", 4, 64, 64, 3).elements
        e8 = memory_cost("EG", 8, 64, 64, 3).elements
        assert e8 / e4 == pytest.approx(2.0, rel=0.01)

    def test_eg_independent_of_kernel_size(self):
        assert (
            memory_cost("EG", 8, 8, 8, 3).elements
            == memory_cost("EG", 8, 8, 8, 7).elements
        )

    def test_cf_grows_with_kernel(self):
        assert (
            memory_cost("CF", 8, 8, 8, 5).elements
            > memory_cost("CF", 8, 8, 8, 3).elements
        )
