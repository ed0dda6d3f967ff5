import math

import numpy as np
import pytest

from parakon.errors import DomainError, UsageError
from parakon.means import PowerParams, Weights, p_mean, parabolic_combination

HALF = Weights([0.5, 0.5])


class TestWeights:
    def test_renormalizes_within_tolerance(self):
        w = Weights([0.5 + 4e-13, 0.5])
        assert abs(w.values.sum() - 1.0) < 1e-15

    def test_rejects_bad_sum(self):
        with pytest.raises(UsageError):
            Weights([0.5, 0.4])

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            Weights([1.0, 0.0])

    def test_rejects_single_weight(self):
        with pytest.raises(UsageError):
            Weights([1.0])


class TestPowerParams:
    def test_ranges(self):
        PowerParams(p=0.5, alpha=1.0, k=1.0)
        with pytest.raises(DomainError):
            PowerParams(p=1.5, alpha=0.5)
        with pytest.raises(DomainError):
            PowerParams(p=0.5, alpha=0.0)
        PowerParams(p=-math.inf, alpha=0.5)

    def test_h1_needs_k(self):
        with pytest.raises(UsageError):
            PowerParams(p=0.5, alpha=0.5).h1_satisfied()
        assert PowerParams(p=0.5, alpha=0.5, k=1.0).h1_satisfied()


class TestPMeanExamples:
    @pytest.mark.parametrize("p", [-math.inf, -2.0, 0.0, 0.3, 1.0, math.inf])
    def test_all_equal_idempotence(self, p):
        assert p_mean([2.5, 2.5, 2.5], Weights([0.2, 0.3, 0.5]), p) == 2.5

    def test_arithmetic_mean(self):
        assert p_mean([1.0, 3.0], HALF, 1.0) == pytest.approx(2.0, abs=1e-15)

    def test_geometric_mean(self):
        assert p_mean([1.0, 4.0], HALF, 0.0) == pytest.approx(2.0, abs=1e-12)

    def test_negative_p_zero_entry(self):
        assert p_mean([2.0, 0.0], HALF, -1.0) == 0.0

    def test_min_at_negative_infinity(self):
        assert p_mean([1.0, 3.0], HALF, -math.inf) == 1.0

    def test_max_at_positive_infinity(self):
        assert p_mean([1.0, 3.0], HALF, math.inf) == 3.0

    def test_zero_entry_positive_p_literal(self):
        # 0^p = 0 contributes: (0.5 * 4^0.5)^2 = 1
        assert p_mean([0.0, 4.0], HALF, 0.5) == pytest.approx(1.0, abs=1e-12)

    def test_zero_entry_geometric(self):
        assert p_mean([0.0, 4.0], HALF, 0.0) == 0.0

    def test_rejects_negative_entry(self):
        with pytest.raises(DomainError):
            p_mean([1.0, -0.1], HALF, 1.0)

    def test_rejects_length_mismatch(self):
        with pytest.raises(UsageError):
            p_mean([1.0, 2.0, 3.0], HALF, 1.0)


class TestPMeanLaws:
    P_GRID = [-math.inf, -10.0, -2.0, -1.0, -0.5, 0.0, 0.3, 0.5, 1.0, math.inf]

    def test_monotone_in_p(self, rng):
        for _ in range(300):
            m = rng.integers(2, 5)
            lam = Weights(rng.dirichlet(np.ones(m) * 3.0))
            a = rng.uniform(0.0, 3.0, size=m)
            vals = [p_mean(a, lam, p) for p in self.P_GRID]
            for lo, hi in zip(vals, vals[1:]):
                assert lo <= hi + 1e-12

    def test_homogeneity(self, rng):
        for _ in range(200):
            m = rng.integers(2, 5)
            lam = Weights(rng.dirichlet(np.ones(m) * 3.0))
            a = rng.uniform(0.01, 3.0, size=m)
            c = rng.uniform(0.1, 10.0)
            for p in self.P_GRID:
                left = p_mean(c * a, lam, p)
                right = c * p_mean(a, lam, p)
                assert left == pytest.approx(right, rel=1e-12, abs=1e-12)

    def test_limits_toward_zero_and_infinity(self, rng):
        for _ in range(100):
            lam = Weights(rng.dirichlet([5.0, 5.0]) * 0.6 + 0.2)
            a = rng.uniform(5e-5, 5e-4, size=2)
            m0 = p_mean(a, lam, 0.0)
            errs = [abs(p_mean(a, lam, p) - m0) for p in (1e-3, -1e-3, 1e-5, -1e-5)]
            assert errs[2] <= errs[0] + 1e-12 and errs[3] <= errs[1] + 1e-12
            assert max(errs[2:]) <= 1e-6
            assert abs(p_mean(a, lam, 1e3) - a.max()) <= 1e-6
            assert abs(p_mean(a, lam, -1e3) - a.min()) <= 1e-6

    def test_concavity_for_p_at_most_one(self, rng):
        for _ in range(200):
            m = rng.integers(2, 5)
            lam = Weights(rng.dirichlet(np.ones(m) * 3.0))
            a = rng.uniform(0.0, 2.0, size=m)
            b = rng.uniform(0.0, 2.0, size=m)
            theta = rng.uniform(0.0, 1.0)
            for p in [-2.0, -0.5, 0.0, 0.5, 1.0]:
                mix = p_mean(theta * a + (1 - theta) * b, lam, p)
                split = theta * p_mean(a, lam, p) + (1 - theta) * p_mean(b, lam, p)
                assert mix >= split - 1e-10


class TestParabolicCombination:
    def test_identical_points(self):
        x, t = parabolic_combination([(np.array([0.3, 0.4]), 2.0)] * 2, HALF, 0.5)
        assert np.allclose(x, [0.3, 0.4]) and t == 2.0

    def test_equal_times(self):
        x, t = parabolic_combination([([0.0], 1.0), ([1.0], 1.0)], HALF, 0.5)
        assert np.allclose(x, [0.5]) and t == pytest.approx(1.0, abs=1e-12)

    def test_alpha_half_time_mean(self):
        # (0.5*0 + 0.5*sqrt(4))^2 = 1
        x, t = parabolic_combination([([0.0], 0.0), ([0.0], 4.0)], HALF, 0.5)
        assert np.allclose(x, [0.0]) and t == pytest.approx(1.0, abs=1e-12)

    def test_rejects_negative_time(self):
        with pytest.raises(DomainError):
            parabolic_combination([([0.0], -1.0), ([0.0], 1.0)], HALF, 0.5)
