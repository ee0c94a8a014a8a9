import math

import numpy as np
import pytest

from opgrowth.phenomenology import (
    PhenomParams,
    StiffIntegrationError,
    conserved_delta_mass,
    conserved_mean_size,
    convention_factor,
    golden_rule_rate,
    integrate_eq6,
    plateau_size,
    predict_1d,
    predict_1d_leading_echo,
    predict_all_to_all,
    predict_conserved_profile,
    predict_nstar,
    truncation_size,
)


def num_deriv(f, t, h=1e-5):
    return (f(t + h) - f(t - h)) / (2 * h)


class TestParams:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            PhenomParams(v_B=-1)

    def test_convention(self):
        assert convention_factor("mass") == 2 and convention_factor("amplitude") == 1
        with pytest.raises(ValueError):
            convention_factor("energy")


class TestPredict1d:
    def test_noiseless(self):
        t = np.linspace(0, 20, 11)
        mean, echo = predict_1d(PhenomParams(v_B=0.8), t)
        np.testing.assert_allclose(mean, 1.2 * t)
        np.testing.assert_allclose(echo, 1.0)

    def test_origin(self):
        mean, echo = predict_1d(PhenomParams(epsilon=0.1), 0.0)
        assert mean == 0 and echo == 1

    def test_worked_example_amplitude(self):
        mean, _ = predict_1d(PhenomParams(v_B=1, c=1, epsilon=0.01), 10.0, convention="amplitude")
        assert mean == pytest.approx(14.5)

    def test_worked_example_mass(self):
        mean, _ = predict_1d(PhenomParams(v_B=1, c=1, epsilon=0.01), 10.0)
        assert mean == pytest.approx(14.0)

    @pytest.mark.parametrize("convention", ["mass", "amplitude"])
    def test_echo_derivative(self, convention):
        p = PhenomParams(v_B=0.6, c=1.3, epsilon=0.01, offset=0.8)
        k = convention_factor(convention)
        t = np.linspace(1, 30, 12)
        dlog = num_deriv(lambda x: np.log(predict_1d(p, x, convention)[1]), t)
        np.testing.assert_allclose(dlog, -k * p.epsilon * predict_1d(p, t, convention)[0], rtol=1e-7)

    def test_leading_echo_is_limit(self):
        p = PhenomParams(v_B=0.6, c=1.3, epsilon=1e-4)
        t = np.array([5.0, 10.0])
        np.testing.assert_allclose(predict_1d(p, t)[1], predict_1d_leading_echo(p, t), rtol=1e-3)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            predict_1d(PhenomParams(), -1.0)


class TestPredictAllToAll:
    def test_noiseless_exponential(self):
        p = PhenomParams(lam=0.6, S0=1.5)
        t = np.linspace(0, 5, 6)
        mean, echo, tp = predict_all_to_all(p, t)
        np.testing.assert_allclose(mean, 1.5 * np.exp(0.6 * t))
        np.testing.assert_allclose(echo, 1.0)
        assert tp == math.inf

    @pytest.mark.parametrize("eps", [1e-3, 1e-2])
    def test_logistic_ode(self, eps):
        p = PhenomParams(lam=0.6, b=0.9, S0=1.0, epsilon=eps)
        k = 2.0
        t = np.linspace(0.5, 40, 40)
        mean = predict_all_to_all(p, t)[0]
        dS = num_deriv(lambda x: predict_all_to_all(p, x)[0], t, h=1e-4)
        rhs = p.lam * mean - k * eps * p.b**2 * mean**2
        np.testing.assert_allclose(dS, rhs, rtol=1e-8, atol=1e-8 * mean.max())

    def test_echo_derivative(self):
        p = PhenomParams(lam=0.6, b=0.9, epsilon=0.01)
        t = np.linspace(0.5, 40, 20)
        dlog = num_deriv(lambda x: np.log(predict_all_to_all(p, x)[1]), t, h=1e-4)
        assert np.max(np.abs(dlog + 2 * p.epsilon * predict_all_to_all(p, t)[0])) < 1e-8

    def test_plateau_limit(self):
        p = PhenomParams(lam=0.6, b=0.9, epsilon=0.01)
        assert predict_all_to_all(p, 200.0)[0] == pytest.approx(plateau_size(p), rel=1e-10)
        assert plateau_size(p, "amplitude") == pytest.approx(0.6 / (0.01 * 0.81))

    @pytest.mark.parametrize("eps", [1e-3, 1e-2, 1e-1])
    def test_late_echo_rate_independent_of_eps(self, eps):
        p = PhenomParams(lam=0.6, b=0.9, epsilon=eps)
        t_late = predict_all_to_all(p, 0.0)[2] + 30
        rate = num_deriv(lambda x: np.log(predict_all_to_all(p, x)[1]), t_late)
        assert rate == pytest.approx(-p.lam / p.b**2, rel=1e-6)

    def test_bad_initial_size(self):
        with pytest.raises(ValueError):
            predict_all_to_all(PhenomParams(S0=0.5), 1.0)


class TestNstar:
    def test_all_to_all_independent_of_eps(self):
        vals = [predict_nstar(PhenomParams(b=0.9, epsilon=e), "all_to_all") for e in (1e-3, 1e-2, 1e-1)]
        assert max(vals) == min(vals) == pytest.approx(math.exp(-1 / 0.81))

    def test_1d_log_linear_in_inverse_eps(self):
        eps = np.array([1e-3, 3e-3, 1e-2])
        logs = np.log([predict_nstar(PhenomParams(v_B=0.6, epsilon=e), "1d", a=0.7) for e in eps])
        np.testing.assert_allclose(logs, -0.7 * 0.6 / eps)

    def test_large_eps_limit(self):
        assert predict_nstar(PhenomParams(v_B=0.6, epsilon=1e12), "1d") == pytest.approx(1.0)

    def test_requires_noise(self):
        with pytest.raises(ValueError):
            predict_nstar(PhenomParams(), "1d")
        with pytest.raises(ValueError):
            predict_nstar(PhenomParams(epsilon=0.1), "ring")


class TestConserved:
    def test_no_damping_without_noise(self):
        p = PhenomParams(v_B=1.0, D=1.0)
        S = np.array([2.0, 5.0, 10.0])
        np.testing.assert_allclose(predict_conserved_profile(p, 10.0, S), (15 - S) ** -1.5)
        assert truncation_size(p) == math.inf

    def test_damping_factor(self):
        p = PhenomParams(v_B=1.0, D=1.0, epsilon=0.01)
        ratio = predict_conserved_profile(p, 10.0, 5.0) / predict_conserved_profile(p.with_epsilon(0), 10.0, 5.0)
        assert ratio == pytest.approx(math.exp(-0.25))
        assert truncation_size(p) == pytest.approx(10.0)

    def test_tail_scaling(self):
        p = PhenomParams(v_B=1.0, D=1.0, epsilon=0.01)
        a = predict_conserved_profile(p, 1000.0, 5.0)
        b = predict_conserved_profile(p, 4000.0, 5.0)
        assert b / a == pytest.approx(((6000 - 5) / (1500 - 5)) ** -1.5)

    def test_mean_size_shrinks_late(self):
        p = PhenomParams(v_B=1.0, D=1.0, epsilon=0.01)
        sizes = [conserved_mean_size(p, t) for t in (40.0, 80.0, 160.0)]
        assert sizes[0] > sizes[1] > sizes[2]

    def test_delta_mass(self):
        assert conserved_delta_mass(PhenomParams(D=4.0), 4.0) == pytest.approx(0.25)
        with pytest.raises(ValueError):
            conserved_delta_mass(PhenomParams(), 0.0)

    def test_domain(self):
        with pytest.raises(ValueError):
            predict_conserved_profile(PhenomParams(), 2.0, 3.0)


class TestIntegrateEq6:
    def test_ballistic_closed_form(self):
        p = PhenomParams(v_B=0.6, c=1.25, epsilon=0.01)
        t = np.linspace(0, 60, 121)
        num = integrate_eq6(lambda t, s: 1.5 * p.v_B, lambda t, s: p.c**2 * p.v_B * t, p.epsilon, t)
        np.testing.assert_allclose(num, predict_1d(p, t)[0], atol=1e-6)

    def test_logistic_closed_form(self):
        p = PhenomParams(lam=0.58, b=0.88, S0=1.0, epsilon=0.003)
        t = np.linspace(0, 30, 61)
        num = integrate_eq6(lambda t, s: p.lam * s, lambda t, s: p.b**2 * s**2, p.epsilon, t, S0=p.S0)
        np.testing.assert_allclose(num, predict_all_to_all(p, t)[0], atol=1e-6, rtol=1e-8)

    def test_constant_without_drive(self):
        t = np.linspace(0, 5, 11)
        np.testing.assert_allclose(integrate_eq6(lambda t, s: 0.0, lambda t, s: 1.0, 0.0, t, S0=3.0), 3.0)

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            integrate_eq6(lambda t, s: 0.0, lambda t, s: 0.0, 0.0, [0.0, 0.0, 1.0])

    def test_failure_is_reported(self):
        with pytest.raises(StiffIntegrationError):
            integrate_eq6(lambda t, s: s**3, lambda t, s: 0.0, 0.0, np.linspace(0, 5, 6), S0=1.0)


class TestGoldenRule:
    def test_zero_perturbation(self):
        assert golden_rule_rate(0.0, 1.0, 2.0, 3.0) == 0

    def test_scaling(self):
        base = golden_rule_rate(0.1, 1.0, 2.0, 3.0)
        assert base < 0
        assert golden_rule_rate(0.2, 1.0, 2.0, 3.0) == pytest.approx(4 * base)
        assert golden_rule_rate(0.1, 1.0, 2.0, 6.0) == pytest.approx(2 * base)

    def test_negative_input(self):
        with pytest.raises(ValueError):
            golden_rule_rate(0.1, -1.0, 1.0, 1.0)
