"""Least-squares extraction of growth constants from simulated curves."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["FitResult", "FitError", "fit_growth_constants", "nstar_from_curve", "r_squared"]


class FitError(ValueError):
    pass


@dataclass
class FitResult:
    model: str
    params: dict[str, float]
    stderr: dict[str, float]
    covariance: np.ndarray
    window: tuple[float, float]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params,
            "stderr": self.stderr,
            "covariance": np.asarray(self.covariance).tolist(),
            "window": list(self.window),
            **self.extra,
        }


def _select(curve, window):
    t = np.asarray(curve.time, dtype=float)
    lo, hi = window if window is not None else (t[0], t[-1])
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 3:
        raise FitError(f"window {window} holds fewer than three points")
    return mask, (float(lo), float(hi))


def _line(x, y, sigma=None):
    """Weighted straight-line fit; returns (slope, intercept), covariance."""
    if np.ptp(x) == 0:
        raise FitError("degenerate fit window")
    coef, cov = np.polyfit(x, y, 1, w=None if sigma is None else 1.0 / sigma, cov="unscaled" if sigma is not None else True)
    if not np.all(np.isfinite(cov)):
        cov = np.zeros((2, 2))
    return coef, cov


def fit_growth_constants(curve, model: str, window=None, v_B: float | None = None) -> FitResult:
    """Fit one growth law over ``window = (t_lo, t_hi)``.

    Models
    ------
    linear_ballistic
        ``Sbar = offset + 1.5 v_B t``.
    sqrt_width
        ``var = var0 + c^2 v_B t``; needs ``v_B``.
    exponential
        ``log Sbar = log S0 + lam t``; also reports ``b`` as the mean of
        ``sqrt(var) / Sbar`` over the window.
    plateau
        mean of ``Sbar`` over the window.
    """
    mask, win = _select(curve, window)
    t = np.asarray(curve.time, dtype=float)[mask]
    s = np.asarray(curve.mean_size, dtype=float)[mask]
    var = np.asarray(curve.variance, dtype=float)[mask]

    if model == "linear_ballistic":
        (slope, icpt), cov = _line(t, s)
        J = np.diag([1 / 1.5, 1.0])
        cov = J @ cov @ J.T
        params = {"v_B": slope / 1.5, "offset": icpt}
    elif model == "sqrt_width":
        if not v_B:
            raise FitError("sqrt_width needs a positive v_B")
        (slope, icpt), cov = _line(t, var)
        if slope <= 0:
            raise FitError("variance does not grow in the window")
        c = np.sqrt(slope / v_B)
        dc = 0.5 / np.sqrt(slope * v_B)
        cov = np.diag([dc, 1.0]) @ cov @ np.diag([dc, 1.0])
        params = {"c": float(c), "var_offset": icpt}
    elif model == "exponential":
        if np.any(s <= 0):
            raise FitError("exponential fit needs positive sizes")
        (lam, log_s0), cov = _line(t, np.log(s))
        ratio = np.sqrt(var) / s
        params = {"lam": lam, "S0": float(np.exp(log_s0)), "b": float(ratio.mean())}
        b_err = float(ratio.std(ddof=1) / np.sqrt(len(ratio)))
        cov = np.pad(cov, ((0, 1), (0, 1)))
        cov[2, 2] = b_err**2
    elif model == "plateau":
        mean = float(s.mean())
        err = float(s.std(ddof=1) / np.sqrt(len(s)))
        params = {"S_p": mean}
        cov = np.array([[err**2]])
    else:
        raise FitError(f"unknown model {model!r}")

    names = list(params)
    stderr = {k: float(np.sqrt(max(cov[i, i], 0.0))) for i, k in enumerate(names)}
    return FitResult(model, {k: float(v) for k, v in params.items()}, stderr, cov, win)


def r_squared(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    tot = ((y - y.mean()) ** 2).sum()
    return float(1.0 - (resid**2).sum() / tot) if tot > 0 else 1.0


def _smooth_slope(t, y, half_width: int):
    """Local linear-regression derivative, narrowing the window at the ends."""
    out = np.full(len(y), np.nan)
    for i in range(1, len(y) - 1):
        h = min(half_width, i, len(y) - 1 - i)
        sl = slice(i - h, i + h + 1)
        out[i] = np.polyfit(t[sl], y[sl], 1)[0]
    return out


def nstar_from_curve(curve, reference, logarithmic: bool = False, fraction: float = 0.9,
                     half_width: int = 3, t_max: float | None = None) -> tuple[float, float]:
    """Echo at the first time the growth rate falls to ``fraction`` of its unitary value.

    ``reference`` is either the noiseless growth rate (``dSbar/dt``, or
    ``d log Sbar/dt`` when ``logarithmic``) or a noiseless curve on the same
    time grid, whose smoothed rate is used point by point.  Returns
    ``(t_star, log_echo)`` linearly interpolated between grid points.
    """
    t = np.asarray(curve.time, dtype=float)

    def rate_of(c):
        y = np.asarray(c.mean_size, dtype=float)
        return _smooth_slope(t, np.log(y) if logarithmic else y, half_width)

    if np.isscalar(reference):
        ref = float(reference)
    else:
        if not np.array_equal(np.asarray(reference.time, dtype=float), t):
            raise FitError("reference curve must share the time grid")
        ref = rate_of(reference)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = rate_of(curve) / ref
    ok = np.isfinite(rate)
    if t_max is not None:
        ok &= t <= t_max
    idx = np.flatnonzero(ok & (rate <= fraction))
    if len(idx) == 0:
        raise FitError("growth rate never drops to the requested fraction")
    i = idx[0]
    log_echo = np.asarray(curve.log_echo, dtype=float)
    j = i - 1
    while j >= 0 and not ok[j]:
        j -= 1
    if j < 0:
        # crossing before the first resolvable point: interpolate from t = 0
        w = (1.0 - fraction) / (1.0 - rate[i]) if rate[i] < 1 else 1.0
        return float(t[0] + w * (t[i] - t[0])), float(log_echo[0] + w * (log_echo[i] - log_echo[0]))
    w = (rate[j] - fraction) / (rate[j] - rate[i])
    return float(t[j] + w * (t[i] - t[j])), float(log_echo[j] + w * (log_echo[i] - log_echo[j]))
