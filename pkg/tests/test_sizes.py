import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opgrowth.pauli import PauliString
from opgrowth.sizes import (
    SizeDistribution,
    UndefinedMomentError,
    WeightedEnsemble,
    from_ensemble,
    generating_function,
    mean_size,
    mean_size_from_otocs,
    normalization,
    read_csv,
    variance,
    write_csv,
)

masses = arrays(float, st.integers(2, 12), elements=st.floats(0, 10, allow_nan=False)).filter(
    lambda m: m.sum() > 1e-3
)


def dist(*pairs, n=4):
    mass = np.zeros(n + 1)
    for s, w in pairs:
        mass[s] = w
    return SizeDistribution(n, mass)


class TestConstruction:
    def test_wrong_length(self):
        with pytest.raises(ValueError):
            SizeDistribution(3, np.zeros(3))

    def test_negative_mass(self):
        with pytest.raises(ValueError):
            SizeDistribution(2, np.array([0.1, -0.1, 0.0]))


class TestFromEnsemble:
    def test_single_trajectory(self):
        e = WeightedEnsemble(2)
        e.add(PauliString.from_label("XI"), 0.0)
        d = from_ensemble(e)
        np.testing.assert_array_equal(d.mass, [0, 1, 0])

    def test_two_trajectories(self):
        e = WeightedEnsemble(3)
        e.add(PauliString.from_label("XII"), 0.0)
        e.add(PauliString.from_label("XYZ"), -2.0)
        d = from_ensemble(e)
        np.testing.assert_allclose(d.mass, [0, 0.5, 0, math.exp(-2) / 2])

    def test_normalization_is_mean_weight(self, rng):
        e = WeightedEnsemble(6)
        for _ in range(200):
            e.add(PauliString(6, int(rng.integers(64)), int(rng.integers(64))), float(rng.normal()))
        assert normalization(from_ensemble(e)) == pytest.approx(e.mean_weight(), rel=1e-12)

    def test_binomial_histogram(self, rng):
        samples, p = 10_000, 0.3
        e = WeightedEnsemble(3)
        a, b = PauliString.from_label("XII"), PauliString.from_label("XXI")
        for u in rng.random(samples):
            e.add(a if u < p else b)
        d = from_ensemble(e)
        sigma = math.sqrt(p * (1 - p) / samples)
        assert abs(d.mass[1] - p) < 4 * sigma
        assert abs(d.mass[2] - (1 - p)) < 4 * sigma

    def test_empty(self):
        with pytest.raises(ValueError):
            from_ensemble(WeightedEnsemble(2))

    def test_wrong_n(self):
        with pytest.raises(ValueError):
            WeightedEnsemble(2).add(PauliString.from_label("X"))


class TestMoments:
    def test_normalization_examples(self):
        assert normalization(SizeDistribution.delta(4, 1)) == 1
        assert normalization(SizeDistribution(4, np.zeros(5))) == 0
        assert normalization(dist((1, 0.5), (3, math.exp(-2) / 2))) == pytest.approx(0.5 + math.exp(-2) / 2)

    def test_delta(self):
        d = SizeDistribution.delta(4, 3)
        assert mean_size(d) == 3 and variance(d) == 0

    def test_two_point(self):
        d = dist((0, 0.5), (2, 0.5))
        assert mean_size(d) == 1 and variance(d) == 1

    def test_unnormalized(self):
        assert mean_size(dist((1, 0.2), (3, 0.2))) == pytest.approx(2)

    def test_zero_mass_raises(self):
        d = SizeDistribution(3, np.zeros(4))
        for fn in (mean_size, variance):
            with pytest.raises(UndefinedMomentError):
                fn(d)
        with pytest.raises(UndefinedMomentError):
            generating_function(d, 0.5)

    @settings(max_examples=100, deadline=None)
    @given(masses)
    def test_scale_invariance(self, mass):
        d = SizeDistribution(len(mass) - 1, mass)
        s = d.scaled(0.37)
        assert mean_size(s) == pytest.approx(mean_size(d), rel=1e-12)
        assert variance(s) == pytest.approx(variance(d), rel=1e-9, abs=1e-12)
        assert variance(d) >= 0


class TestGeneratingFunction:
    def test_examples(self):
        assert generating_function(dist((1, 0.3), (4, 0.2)), 0.0) == pytest.approx(1.0)
        assert generating_function(SizeDistribution.delta(4, 1), math.log(2)) == pytest.approx(0.5)
        assert generating_function(dist((1, 0.5), (2, 0.5)), 1.0) == pytest.approx((math.exp(-1) + math.exp(-2)) / 2)

    def test_negative_mu(self):
        with pytest.raises(ValueError):
            generating_function(SizeDistribution.delta(2, 1), -0.1)

    @settings(max_examples=100, deadline=None)
    @given(masses)
    def test_monotone_and_convex(self, mass):
        d = SizeDistribution(len(mass) - 1, mass)
        mus = np.linspace(0, 3, 31)
        g = np.array([generating_function(d, m) for m in mus])
        assert np.all(np.diff(g) <= 1e-12)
        assert np.all(np.diff(g, 2) >= -1e-12)

    def test_slope_at_zero_is_minus_mean(self):
        d = dist((1, 0.3), (2, 0.1), (4, 0.6))
        h = 1e-6
        slope = (generating_function(d, h) - generating_function(d, 0)) / h
        assert slope == pytest.approx(-mean_size(d), rel=1e-4)


class TestOtocs:
    def test_single_x(self):
        values = {PauliString.single(1, 0, "X"): 1.0, PauliString.single(1, 0, "Y"): -1.0,
                  PauliString.single(1, 0, "Z"): -1.0}
        assert mean_size_from_otocs(values) == 1.0

    def test_all_one(self):
        values = {PauliString.single(3, i, p): 1.0 for i in range(3) for p in "XYZ"}
        assert mean_size_from_otocs(values) == 0.0

    def test_missing_entries(self):
        with pytest.raises(ValueError):
            mean_size_from_otocs({PauliString.single(2, 0, "X"): 1.0})


class TestCsv:
    def test_round_trip(self, tmp_path):
        d = dist((0, 1e-300), (1, 0.5), (3, math.exp(-2) / 2))
        write_csv(d, tmp_path / "a.csv")
        back = read_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back.mass, d.mass)
        write_csv(back, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
