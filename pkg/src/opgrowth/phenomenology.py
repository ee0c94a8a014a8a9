"""Closed-form and ODE predictions for open-system operator growth.

Two echo conventions are supported.  ``"mass"`` damps the operator norm as
``d log N/dt = -2 eps Sbar`` (the default, consistent with the exact engine
and the circuit weights); ``"amplitude"`` uses ``-eps Sbar``.  The same
factor multiplies the width term in the size equation, so every prediction
below is internally consistent within one convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

__all__ = [
    "PhenomParams",
    "convention_factor",
    "predict_1d",
    "predict_1d_leading_echo",
    "predict_all_to_all",
    "plateau_size",
    "plateau_time",
    "predict_nstar",
    "predict_conserved_profile",
    "conserved_delta_mass",
    "truncation_size",
    "integrate_eq6",
    "StiffIntegrationError",
    "golden_rule_rate",
]


@dataclass(frozen=True)
class PhenomParams:
    """Growth constants of one dynamical class.

    ``offset`` is the intercept of the ballistic size fit (1D only); ``S0`` is
    the initial size for exponential growth.
    """

    v_B: float = 1.0
    c: float = 1.0
    lam: float = 1.0
    b: float = 1.0
    epsilon: float = 0.0
    D: float = 1.0
    S0: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        for name in ("v_B", "c", "lam", "b", "epsilon", "D", "S0"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def with_epsilon(self, epsilon: float) -> "PhenomParams":
        return replace(self, epsilon=epsilon)


def convention_factor(convention: str) -> float:
    try:
        return {"mass": 2.0, "amplitude": 1.0}[convention]
    except KeyError:
        raise ValueError(f"echo convention must be 'mass' or 'amplitude', got {convention!r}") from None


def predict_1d(p: PhenomParams, t, convention: str = "mass"):
    """Ballistic growth with the leading quadratic noise correction.

    Returns ``(mean_size, echo)``; ``echo = exp(-k eps int Sbar)`` in closed form.
    """
    k = convention_factor(convention)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    eps = p.epsilon
    curv = 0.5 * k * eps * p.c**2 * p.v_B
    mean = p.offset + 1.5 * p.v_B * t - curv * t**2
    integral = p.offset * t + 0.75 * p.v_B * t**2 - curv * t**3 / 3.0
    return mean, np.exp(-k * eps * integral)


def predict_1d_leading_echo(p: PhenomParams, t, convention: str = "mass"):
    """Gaussian leading form ``exp(-(3/4) k eps v_B t^2)``."""
    k = convention_factor(convention)
    t = np.asarray(t, dtype=float)
    return np.exp(-0.75 * k * p.epsilon * p.v_B * t**2)


def plateau_size(p: PhenomParams, convention: str = "mass") -> float:
    if p.epsilon == 0:
        return math.inf
    return p.lam / (convention_factor(convention) * p.epsilon * p.b**2)


def plateau_time(p: PhenomParams, convention: str = "mass") -> float:
    return math.log(plateau_size(p, convention) / p.S0) / p.lam


def predict_all_to_all(p: PhenomParams, t, convention: str = "mass"):
    """Logistic growth towards the plateau.

    Returns ``(mean_size, echo, t_p)``.  The echo integrates in closed form to
    ``(1 + S0 (e^{lam t} - 1) / S_p) ** (-1 / b^2)``, which decays as
    ``exp(-lam t / b^2)`` once the plateau is reached.
    """
    if p.S0 < 1:
        raise ValueError("S0 must be >= 1")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    if p.epsilon == 0:
        return p.S0 * np.exp(p.lam * t), np.ones_like(t), math.inf
    sp = plateau_size(p, convention)
    growth = np.expm1(p.lam * t)  # e^{lam t} - 1
    mean = sp * p.S0 * (growth + 1.0) / (sp + p.S0 * growth)
    log_echo = -np.log1p(p.S0 * growth / sp) / p.b**2
    return mean, np.exp(log_echo), plateau_time(p, convention)


def predict_nstar(p: PhenomParams, geometry: str, a: float = 1.0) -> float:
    """Echo at the time open-system growth departs from unitary growth."""
    if p.epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if geometry in ("brickwork_1d", "1d"):
        return math.exp(-a * p.v_B / p.epsilon)
    if geometry == "all_to_all":
        return math.exp(-1.0 / p.b**2)
    raise ValueError(f"unknown geometry {geometry!r}")


def truncation_size(p: PhenomParams) -> float:
    return math.inf if p.epsilon == 0 else math.sqrt(p.v_B / p.epsilon)


def conserved_delta_mass(p: PhenomParams, t: float) -> float:
    """Weight of the size-one conserved component, ``1/sqrt(D t)``."""
    if t <= 0:
        raise ValueError("t must be positive")
    return 1.0 / math.sqrt(p.D * t)


def predict_conserved_profile(p: PhenomParams, t: float, S):
    """Scrambled tail of the bimodal size profile at size ``S``.

    ``(v_B / sqrt(D)) * (1.5 v_B t - S)^(-3/2)``, damped by
    ``exp(-eps S^2 / v_B)``.  The delta peak at ``S = 1`` is
    :func:`conserved_delta_mass`.
    """
    S = np.asarray(S, dtype=float)
    front = 1.5 * p.v_B * t
    if np.any(S < 1) or np.any(S >= front):
        raise ValueError(f"S must lie in [1, {front})")
    tail = p.v_B / math.sqrt(p.D) * (front - S) ** -1.5
    return tail * np.exp(-p.epsilon * S**2 / p.v_B)


def conserved_mean_size(p: PhenomParams, t: float, points: int = 4000) -> float:
    """Average size of the bimodal profile (delta peak plus damped tail)."""
    front = 1.5 * p.v_B * t
    # stop one unit short of the integrable front singularity
    s = np.linspace(1.0, max(1.0, front - 1.0), points)
    if len(s) < 2 or front <= 2:
        return 1.0
    tail = predict_conserved_profile(p, t, s)
    delta = conserved_delta_mass(p, t)
    mass = delta + np.trapezoid(tail, s)
    return (delta + np.trapezoid(s * tail, s)) / mass


class StiffIntegrationError(RuntimeError):
    pass


def integrate_eq6(unitary_term: Callable[[float, float], float], width_model: Callable[[float, float], float],
                  epsilon: float, t_grid, S0: float = 0.0, convention: str = "mass",
                  rtol: float = 1e-10, atol: float = 1e-12, max_step: float = np.inf) -> np.ndarray:
    """Integrate ``dSbar/dt = unitary(t, S) - k eps width(t, S)``.

    ``width_model`` returns the variance of the size distribution.
    """
    k = convention_factor(convention)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")

    def rhs(t, y):
        return [unitary_term(t, y[0]) - k * epsilon * width_model(t, y[0])]

    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), [S0], t_eval=t_grid, method="DOP853",
                    rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        span = t_grid[-1] - t_grid[0]
        raise StiffIntegrationError(f"{sol.message}; retry with max_step <= {span / 1000:g}")
    return sol.y[0]


def golden_rule_rate(eta: float, tau_th: float, xi_th: float, mean_size: float, prefactor: float = 1.0) -> float:
    """Echo decay rate ``d log N/dt`` for a perturbed backward Hamiltonian."""
    for name, v in (("eta", eta), ("tau_th", tau_th), ("xi_th", xi_th), ("mean_size", mean_size)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    return -prefactor * eta**2 * tau_th * xi_th * mean_size
