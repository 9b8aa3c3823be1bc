import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from rulkit.studentt import (
    regularized_incomplete_beta,
    student_t_cdf,
    student_t_pdf,
    student_t_quantile,
)


class TestIncompleteBeta:
    def test_endpoints(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_uniform_case_is_identity(self):
        # I_x(1, 1) = x
        for x in (0.1, 0.35, 0.8):
            assert abs(regularized_incomplete_beta(1.0, 1.0, x) - x) < 1e-12

    def test_closed_form_a2_b1(self):
        # I_x(2, 1) = x^2
        for x in (0.2, 0.5, 0.9):
            assert abs(regularized_incomplete_beta(2.0, 1.0, x) - x * x) < 1e-12

    def test_matches_scipy_across_grid(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = float(rng.uniform(0.5, 50.0))
            b = float(rng.uniform(0.5, 50.0))
            x = float(rng.uniform(0.0, 1.0))
            assert abs(regularized_incomplete_beta(a, b, x)
                       - scipy.special.betainc(a, b, x)) < 1e-10

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            regularized_incomplete_beta(-1.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 1.0, 1.5)


class TestCdf:
    def test_symmetry_and_center(self):
        assert student_t_cdf(0.0, 5) == 0.5
        for t in (0.3, 1.7, 4.0):
            assert abs(student_t_cdf(t, 7) + student_t_cdf(-t, 7) - 1.0) < 1e-12

    def test_cauchy_closed_form(self):
        # df=1 is Cauchy: F(t) = 1/2 + atan(t)/pi
        for t in (-2.0, 0.5, 3.0):
            assert abs(student_t_cdf(t, 1) - (0.5 + math.atan(t) / math.pi)) < 1e-12

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            df = int(rng.integers(1, 200))
            t = float(rng.normal() * 3)
            assert abs(student_t_cdf(t, df) - scipy.stats.t.cdf(t, df)) < 1e-10


class TestQuantile:
    def test_df1_closed_form(self):
        # tan(pi (p - 1/2)); at p=0.95 that is 6.313752
        assert abs(student_t_quantile(0.95, 1) - 6.313752) < 1e-4
        for p in (0.6, 0.75, 0.99):
            expected = math.tan(math.pi * (p - 0.5))
            assert abs(student_t_quantile(p, 1) - expected) < 1e-9

    def test_df2_closed_form(self):
        # 2(p - 1/2) sqrt(2 / (4 p (1 - p))); at p=0.95 that is 2.919986
        assert abs(student_t_quantile(0.95, 2) - 2.919986) < 1e-4
        for p in (0.6, 0.9, 0.975):
            expected = 2.0 * (p - 0.5) * math.sqrt(2.0 / (4.0 * p * (1.0 - p)))
            assert abs(student_t_quantile(p, 2) - expected) < 1e-9

    def test_large_df_approaches_normal(self):
        assert abs(student_t_quantile(0.95, 10000) - 1.64487) < 1e-3

    def test_round_trip_through_cdf(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            df = int(rng.integers(1, 100))
            p = float(rng.uniform(0.001, 0.999))
            t = student_t_quantile(p, df)
            assert abs(student_t_cdf(t, df) - p) < 1e-9

    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            df = int(rng.integers(1, 60))
            p = float(rng.uniform(0.01, 0.99))
            assert abs(student_t_quantile(p, df) - scipy.stats.t.ppf(p, df)) < 1e-8

    def test_symmetry(self):
        assert abs(student_t_quantile(0.05, 3) + student_t_quantile(0.95, 3)) < 1e-9

    def test_median_is_zero(self):
        assert student_t_quantile(0.5, 4) == 0.0

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            student_t_quantile(0.0, 3)
        with pytest.raises(ValueError):
            student_t_quantile(1.0, 3)
        with pytest.raises(ValueError):
            student_t_quantile(0.9, 0)

    def test_pdf_integrates_cdf_slope(self):
        df, t, h = 9, 1.3, 1e-6
        slope = (student_t_cdf(t + h, df) - student_t_cdf(t - h, df)) / (2 * h)
        assert abs(slope - student_t_pdf(t, df)) < 1e-6
