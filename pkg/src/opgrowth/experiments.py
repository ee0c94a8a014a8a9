"""Named reproduction pipelines and their pass/fail thresholds.

Each experiment takes a plain config dict (defaults merged with user
overrides), a seed and an output directory, writes its CSV and SVG
artifacts, and returns a report with fitted parameters and criterion
records.  Thresholds live in :data:`THRESHOLDS` and are referenced by name
everywhere else, including ``opgrowth check``.
"""
from __future__ import annotations

import json
import math
import os
import platform
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import exact, phenomenology as ph, protocol, ruc, sizes
from .fitting import FitError, fit_growth_constants, nstar_from_curve, r_squared
from .pauli import PauliString, all_strings, random_string, size_superop_eigencheck
from .svg import Plot, write_svg

__all__ = [
    "Threshold",
    "THRESHOLDS",
    "EXPERIMENTS",
    "DEFAULTS",
    "ExperimentSpec",
    "ExperimentError",
    "UnknownExperimentError",
    "evaluate",
    "run_experiment",
    "check_report",
    "load_constants",
    "calibrate_constants",
    "version_string",
]


# --------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class Threshold:
    """A named pass/fail rule ``value <op> limit``.

    ``op`` is one of ``<``, ``<=``, ``>``, ``==`` or ``abs<=`` (the last one
    tests ``|value - target| <= limit``).
    """

    op: str
    limit: float
    criterion: int
    description: str
    target: float = 0.0

    def passes(self, value) -> bool:
        if value is None:
            return False
        v = float(value)
        if math.isnan(v):
            return False
        if self.op == "<":
            return v < self.limit
        if self.op == "<=":
            return v <= self.limit
        if self.op == ">":
            return v > self.limit
        if self.op == "==":
            return v == self.limit
        if self.op == "abs<=":
            return abs(v - self.target) <= self.limit
        raise ValueError(f"unknown comparison {self.op!r}")

    def describe(self) -> str:
        if self.op == "abs<=":
            return f"|x - ({self.target:g})| <= {self.limit:g}"
        return f"x {self.op} {self.limit:g}"


THRESHOLDS: dict[str, Threshold] = {
    "eigen_failures": Threshold("==", 0, 1, "size eigenrelation mismatches (exhaustive n<=6, 1000 random n=64)"),
    "eigen_runtime_s": Threshold("<", 10, 1, "runtime of the eigenrelation sweep"),
    "otoc_size_max_abs_diff": Threshold("<", 1e-10, 2, "mean size: decomposition vs 3n single-site OTOC average"),
    "otoc_size_runtime_s": Threshold("<", 120, 2, "runtime of the size/OTOC identity"),
    "echo_identity_max_residual": Threshold("<", 1e-6, 3, "max |d log N/dt + 2 eps Sbar| on the dt grid"),
    "echo_identity_runtime_s": Threshold("<", 300, 3, "runtime of the echo identity"),
    "width_identity_max_residual": Threshold("<", 1e-6, 4, "max |d Sbar/dt + 2 eps var| with H = 0"),
    "width_identity_oracle_max_diff": Threshold("<", 1e-6, 4, "max |Sbar - two-exponential oracle| with H = 0"),
    "width_identity_runtime_s": Threshold("<", 60, 4, "runtime of the width identity"),
    "ballistic_mean_rel_err": Threshold("<", 0.10, 5, "1D Sbar vs quadratic-corrected ballistic law"),
    "ballistic_log_echo_rel_err": Threshold("<", 0.10, 5, "1D log echo vs its closed form"),
    "ballistic_runtime_s": Threshold("<", 600, 5, "runtime of the 1D experiment"),
    "a2a_gamma": Threshold("abs<=", 0.1, 6, "plateau power-law exponent in eps", target=-1.0),
    "a2a_echo_rate_spread": Threshold("<", 0.15, 6, "(max - min) / mean of post-plateau echo decay rates"),
    "a2a_plateau_shift_sigma": Threshold("<=", 1.0, 6, "max |Sp(n) - Sp(n/2)| in units of summed error bars"),
    "a2a_runtime_s": Threshold("<", 900, 6, "runtime of the all-to-all experiment"),
    "nstar_1d_r2": Threshold(">", 0.95, 7, "R^2 of 1D log N* against 1/eps"),
    "nstar_a2a_spread": Threshold("<", 0.20, 7, "(max - min) / mean of all-to-all N*"),
    "nstar_runtime_s": Threshold("<", 1200, 7, "runtime of the N* scan"),
    "otoc_front_r2": Threshold(">", 0.9, 8, "R^2 of OTOC front arrival time against distance"),
    "otoc_monotone_max_rise": Threshold("<=", 0.0, 8, "largest step-to-step rise of the site-averaged OTOC inside the cone"),
    "otoc_interior_min_depth": Threshold(">", 0.0, 8, "smallest interior-minimum depth over sites at distance >= 2"),
    "otoc_runtime_s": Threshold("<", 600, 8, "runtime of the OTOC experiment"),
    "protocol_max_z": Threshold("<=", 3.0, 9, "max |F - F_oracle| / stderr over mu > 0"),
    "protocol_mu0_abs_diff": Threshold("<=", 1e-12, 9, "|F(mu=0) - (1 + N) / 2|"),
    "protocol_mu0_stderr": Threshold("==", 0.0, 9, "shot-to-shot spread at mu = 0"),
    "protocol_runtime_s": Threshold("<", 300, 9, "runtime of the protocol experiment"),
    "markov_max_z": Threshold("<=", 4.0, 10, "max z-score of Monte-Carlo size mass vs exact transfer matrix"),
    "markov_runtime_s": Threshold("<", 60, 10, "runtime of the Monte-Carlo vs Markov comparison"),
}


def evaluate(name: str, value) -> dict:
    """Criterion record for ``value`` against the threshold called ``name``."""
    th = THRESHOLDS[name]
    v = None if value is None else float(value)
    return {
        "name": name,
        "criterion": th.criterion,
        "value": v,
        "rule": th.describe(),
        "passed": bool(th.passes(v)),
        "description": th.description,
    }


# --------------------------------------------------------------------------
# errors, constants, version


class ExperimentError(RuntimeError):
    code = "experiment_error"


class UnknownExperimentError(ExperimentError, KeyError):
    code = "unknown_experiment"

    def __str__(self):
        return self.args[0] if self.args else "unknown experiment"


def load_constants() -> dict:
    """Stored growth constants of the averaged gate model (fit windows included)."""
    text = resources.files("opgrowth").joinpath("data/constants.json").read_text()
    return json.loads(text)


def calibrate_constants(seed: int = 11, workers: int = 1) -> dict:
    """Measure ``v_B``, ``c`` (1D) and ``lam``, ``b`` (all-to-all) from noiseless runs."""
    d = DEFAULTS["fig2a_1d"]
    c1 = ruc.run(ruc.CircuitConfig(n=d["n"], epsilon=0.0, layers=d["layers"], trajectories=d["trajectories"],
                                   seed=seed, workers=workers))
    lin = fit_growth_constants(c1, "linear_ballistic", tuple(d["fit_window"]))
    wid = fit_growth_constants(c1, "sqrt_width", tuple(d["fit_window"]), v_B=lin.params["v_B"])
    a = DEFAULTS["fig2b_all_to_all"]
    c2 = ruc.run(ruc.CircuitConfig(n=a["n"], geometry="all_to_all", epsilon=0.0, layers=a["fit_window"][1] + 1,
                                   trajectories=a["trajectories"], seed=seed, workers=workers))
    exp = fit_growth_constants(c2, "exponential", tuple(a["fit_window"]))
    return {
        "brickwork_1d": {
            "n": d["n"], "trajectories": d["trajectories"], "seed": seed, "window": list(lin.window),
            "v_B": lin.params["v_B"], "v_B_stderr": lin.stderr["v_B"], "offset": lin.params["offset"],
            "c": wid.params["c"], "c_stderr": wid.stderr["c"],
        },
        "all_to_all": {
            "n": a["n"], "trajectories": a["trajectories"], "seed": seed, "window": list(exp.window),
            "lam": exp.params["lam"], "lam_stderr": exp.stderr["lam"], "S0": exp.params["S0"],
            "b": exp.params["b"], "b_stderr": exp.stderr["b"],
        },
    }


def version_string() -> str:
    from . import __version__

    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


# --------------------------------------------------------------------------
# spec


DEFAULTS: dict[str, dict] = {
    "eq5_eq6_identities": {
        "eigen_n_max": 6, "eigen_random": 1000, "eigen_random_n": 64,
        "otoc_size_n": 6, "otoc_size_times": [0.5, 1.0, 2.0],
        "echo_identity_n": 5, "echo_identity_hamiltonians": 3, "echo_identity_epsilons": [0.01, 0.1], "echo_identity_t_max": 2.0, "dt": 1e-3,
        "width_identity_n": 5, "width_identity_epsilon": 0.1, "width_identity_t_max": 5.0, "width_identity_strings": ["XIIII", "XYZII"],
        "markov_n": 4, "markov_layers": [2, 3, 4], "markov_epsilons": [0.0, 0.05], "markov_trajectories": 20000,
    },
    "fig2a_1d": {
        "n": 200, "trajectories": 10000, "layers": 160, "epsilons": [1e-3, 1e-2],
        "fit_window": [20, 140], "correction_window": [0.05, 0.30], "boundary_fraction": 0.85,
        "convention": "mass",
    },
    "fig2b_all_to_all": {
        "n": 1500, "n_small": 750, "trajectories": 4000, "layers": 40, "epsilons": [1e-3, 3e-3, 1e-2],
        "fit_window": [2, 6], "plateau_start": 25.0, "convention": "mass",
    },
    "nstar_scan": {
        "epsilons": [1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
        "n_1d": 200, "trajectories_1d": 10000, "layers_1d": 160, "boundary_fraction": 0.85,
        "n_all_to_all": 1500, "trajectories_all_to_all": 4000, "layers_all_to_all": 16, "records_per_unit_time": 4,
        "fraction": 0.9, "half_width": 2,
    },
    "fig3_otoc": {
        "n": 8, "hamiltonian": "mixed_field_ising", "eta_light_cone": 0.1, "eta_reversal": 0.3,
        "t_max_light_cone": 4.0, "dt_light_cone": 0.1, "t_max_reversal": 10.0, "dt_reversal": 0.25,
        "front_threshold": 0.5, "min_distance": 2, "normalization": "overlap",
    },
    "protocol_gmu": {
        "n": 6, "t": 2.0, "epsilon": 0.05, "mus": [0.0, 0.25, 0.5, 1.0], "shots": 10000,
        "hamiltonian": "mixed_field_ising", "initial_operator": None,
    },
    "conserved_profile": {
        "v_B": None, "D": 1.0, "epsilons": [0.0, 0.01], "times": [20.0, 40.0, 80.0],
    },
}


@dataclass
class ExperimentSpec:
    name: str
    config: dict = field(default_factory=dict)
    output_dir: Path = Path("opgrowth-out")
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise UnknownExperimentError(f"unknown experiment {self.name!r}; known: {sorted(EXPERIMENTS)}")
        unknown = set(self.config) - set(DEFAULTS[self.name])
        if unknown:
            raise ExperimentError(f"unknown config keys for {self.name}: {sorted(unknown)}")
        self.output_dir = Path(self.output_dir)
        self.seed = int(self.seed)
        if self.workers < 1:
            raise ExperimentError("workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        extra = set(d) - {"name", "config", "output_dir", "seed", "workers"}
        if extra:
            raise ExperimentError(f"unknown spec keys: {sorted(extra)}")
        if "name" not in d:
            raise ExperimentError("spec needs a 'name'")
        return cls(name=d["name"], config=dict(d.get("config", {})),
                   output_dir=Path(d.get("output_dir", Path("opgrowth-out") / d["name"])),
                   seed=d.get("seed", 0), workers=d.get("workers", 1))

    def resolved(self) -> dict:
        cfg = dict(DEFAULTS[self.name])
        cfg.update(self.config)
        return cfg


# --------------------------------------------------------------------------
# helpers


@dataclass
class _Outcome:
    criteria: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    observations: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def _tag(x: float) -> str:
    return f"{x:g}".replace("-", "m").replace(".", "p")


def _prediction_curve(t, mean, echo) -> ruc.GrowthCurve:
    t = np.asarray(t, dtype=float)
    zeros = np.zeros_like(t)
    with np.errstate(divide="ignore"):
        log_echo = np.log(echo)
    return ruc.GrowthCurve(t, np.asarray(mean, float), zeros, np.asarray(echo, float), zeros, log_echo,
                           np.full(len(t), np.inf))


def _trace_curve(trace: exact.SizeTrace) -> ruc.GrowthCurve:
    k = len(trace.times)
    return ruc.GrowthCurve(trace.times, trace.mean_size, trace.variance, trace.echo, np.zeros(k),
                           np.log(trace.echo), np.full(k, np.inf))


def _write_otoc_csv(path, sites, times, values) -> None:
    with open(path, "w") as fh:
        fh.write("site,t,otoc\n")
        for j, site in enumerate(sites):
            for k, t in enumerate(times):
                fh.write(f"{site},{float(t)!r},{float(values[j, k])!r}\n")


def _write_rows(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _hamiltonian(name: str, n: int) -> exact.HamiltonianSpec:
    if name not in exact.PRESETS:
        raise ExperimentError(f"unknown Hamiltonian preset {name!r}; known: {sorted(exact.PRESETS)}")
    return exact.PRESETS[name](n)


def _first_crossing(t, y, level) -> float:
    below = np.flatnonzero(y < level)
    if len(below) == 0:
        return math.nan
    k = below[0]
    if k == 0:
        return float(t[0])
    return float(t[k - 1] + (y[k - 1] - level) / (y[k - 1] - y[k]) * (t[k] - t[k - 1]))


# --------------------------------------------------------------------------
# pipelines


def _identities(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    # size superoperator eigenrelation
    with _Timer() as tm:
        failures = 0
        checked = 0
        for n in range(1, cfg["eigen_n_max"] + 1):
            for p in all_strings(n):
                failures += size_superop_eigencheck(p) != p.size
                checked += 1
        for _ in range(cfg["eigen_random"]):
            p = random_string(cfg["eigen_random_n"], rng)
            failures += size_superop_eigencheck(p) != p.size
            checked += 1
    res.observations["eigen_strings_checked"] = checked
    res.criteria += [evaluate("eigen_failures", failures), evaluate("eigen_runtime_s", tm.elapsed)]

    # mean size from the decomposition vs from single-site OTOCs
    with _Timer() as tm:
        n = cfg["otoc_size_n"]
        H = exact.mixed_field_ising(n)
        start = exact.OperatorState.from_pauli(PauliString.single(n, n // 2, "Y"))
        diffs = []
        for t in cfg["otoc_size_times"]:
            state = exact.evolve(start, H, None, t)
            d = exact.size_distribution(state)
            direct = sizes.mean_size(d)
            via = sizes.mean_size_from_otocs(exact.single_site_otocs(state), n)
            diffs.append(abs(direct - via))
            path = out / f"otoc_size_t{_tag(t)}.csv"
            sizes.write_csv(d, path)
            res.artifacts.append(path.name)
    res.observations["otoc_size_abs_diffs"] = diffs
    res.criteria += [evaluate("otoc_size_max_abs_diff", max(diffs)), evaluate("otoc_size_runtime_s", tm.elapsed)]

    # echo identity under the effective size model
    with _Timer() as tm:
        n = cfg["echo_identity_n"]
        grid = np.arange(0.0, cfg["echo_identity_t_max"] + 0.5 * cfg["dt"], cfg["dt"])
        start = exact.OperatorState.from_pauli(PauliString.single(n, 0, "X"))
        residuals = {}
        for h in range(cfg["echo_identity_hamiltonians"]):
            H = exact.random_hamiltonian(n, rng)
            for eps in cfg["echo_identity_epsilons"]:
                trace = exact.evolve_trace(start, H, exact.LindbladSpec.effective(eps), grid)
                residuals[f"H{h}_eps{eps:g}"] = exact.check_eq5(trace, eps)
                path = out / f"echo_identity_H{h}_eps{_tag(eps)}.csv"
                _trace_curve(trace).write_csv(path)
                res.artifacts.append(path.name)
    res.observations["echo_identity_residuals"] = residuals
    res.criteria += [evaluate("echo_identity_max_residual", max(residuals.values())), evaluate("echo_identity_runtime_s", tm.elapsed)]

    # width identity with H = 0 and a two-size superposition
    with _Timer() as tm:
        n = cfg["width_identity_n"]
        eps = cfg["width_identity_epsilon"]
        strings = [PauliString.from_label(s) for s in cfg["width_identity_strings"]]
        if any(p.n != n for p in strings):
            raise ExperimentError("width_identity_strings must have width_identity_n sites")
        start = exact.OperatorState.from_terms(n, [(p, 1.0) for p in strings], normalize=True)
        grid = np.arange(0.0, cfg["width_identity_t_max"] + 0.5 * cfg["dt"], cfg["dt"])
        trace = exact.evolve_trace(start, None, exact.LindbladSpec.effective(eps), grid)
        w0 = trace.mass[0]
        s = np.arange(n + 1)
        oracle_mass = w0[None, :] * np.exp(-2 * eps * np.outer(grid, s))
        oracle_mean = (oracle_mass * s).sum(1) / oracle_mass.sum(1)
        width_identity_res = exact.check_eq6(trace, eps)
        oracle_diff = float(np.max(np.abs(trace.mean_size - oracle_mean)))
        path = out / "width_identity_trace.csv"
        _trace_curve(trace).write_csv(path)
        res.artifacts.append(path.name)
    res.criteria += [evaluate("width_identity_max_residual", width_identity_res), evaluate("width_identity_oracle_max_diff", oracle_diff),
                     evaluate("width_identity_runtime_s", tm.elapsed)]
    plot = Plot("Mean size with H = 0", "t", "mean size")
    plot.add(grid, trace.mean_size, "exact engine")
    plot.add(grid, oracle_mean, "two-exponential oracle", dashed=True)
    write_svg(plot, out / "width_identity_mean_size.svg")
    res.artifacts.append("width_identity_mean_size.svg")

    # Monte Carlo vs exact transfer matrix
    with _Timer() as tm:
        n = cfg["markov_n"]
        m = cfg["markov_trajectories"]
        layers = max(cfg["markov_layers"])
        initial = PauliString.single(n, n // 2, "X")
        zmax = 0.0
        rows = []
        for k, eps in enumerate(cfg["markov_epsilons"]):
            exact_mass = ruc.markov_size_oracle(n, initial, layers, eps)
            state = ruc.Trajectories.replicate(initial, m)
            gens = ruc.block_generators(seed + 7919 * (k + 1), m)
            for layer in range(layers):
                ruc.step_brickwork(state, layer % 2, eps, gens, workers)
                if layer + 1 not in cfg["markov_layers"]:
                    continue
                w = np.exp(state.log_w + state.log_norm)
                onehot = state.sizes()[:, None] == np.arange(n + 1)[None, :]
                samples = w[:, None] * onehot
                mc = samples.mean(0)
                se = samples.std(0, ddof=1) / math.sqrt(m)
                ref = exact_mass[layer]
                for S in range(n + 1):
                    if se[S] > 0:
                        z = abs(mc[S] - ref[S]) / se[S]
                    else:
                        z = 0.0 if abs(mc[S] - ref[S]) <= 1e-12 else math.inf
                    zmax = max(zmax, z)
                    rows.append((float(eps), layer + 1, S, float(mc[S]), float(se[S]), float(ref[S])))
        _write_rows(out / "markov_mass.csv", ("epsilon", "layers", "S", "mass_mc", "stderr", "mass_exact"), rows)
        res.artifacts.append("markov_mass.csv")
    res.criteria += [evaluate("markov_max_z", zmax), evaluate("markov_runtime_s", tm.elapsed)]
    return res


def _fig2a(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    k = ph.convention_factor(cfg["convention"])
    with _Timer() as tm:
        base = dict(n=cfg["n"], layers=cfg["layers"], trajectories=cfg["trajectories"], seed=seed, workers=workers)
        c0 = ruc.run(ruc.CircuitConfig(epsilon=0.0, **base))
        c0.write_csv(out / "growth_eps0.csv")
        lin = fit_growth_constants(c0, "linear_ballistic", tuple(cfg["fit_window"]))
        wid = fit_growth_constants(c0, "sqrt_width", tuple(cfg["fit_window"]), v_B=lin.params["v_B"])
        v_B, c = lin.params["v_B"], wid.params["c"]
        res.fits = {
            "v_B": v_B, "v_B_ci95": [v_B - 1.96 * lin.stderr["v_B"], v_B + 1.96 * lin.stderr["v_B"]],
            "c": c, "c_ci95": [c - 1.96 * wid.stderr["c"], c + 1.96 * wid.stderr["c"]],
            "offset": lin.params["offset"], "fit_window": list(lin.window),
            "linear_ballistic": lin.to_dict(), "sqrt_width": wid.to_dict(),
        }
        ruc.write_sidecar(out / "growth_eps0.fits.json", res.fits)
        params = ph.PhenomParams(v_B=v_B, c=c, offset=max(lin.params["offset"], 0.0))
        t_cap = cfg["boundary_fraction"] * (cfg["n"] / 2) / v_B
        mean_plot = Plot("1D brickwork: mean size", "t (layers)", "mean size")
        echo_plot = Plot("1D brickwork: echo", "t (layers)", "N(t)", logy=True)
        mean_errs, log_errs, windows = [], [], {}
        for eps in cfg["epsilons"]:
            curve = ruc.run(ruc.CircuitConfig(epsilon=eps, record_distributions=True, **base))
            p = params.with_epsilon(eps)
            mean, echo = ph.predict_1d(p, curve.time, cfg["convention"])
            tag = _tag(eps)
            curve.write_csv(out / f"growth_eps{tag}.csv")
            _prediction_curve(curve.time, mean, echo).write_csv(out / f"prediction_eps{tag}.csv")
            sizes.write_csv(curve.distributions[-1], out / f"size_final_eps{tag}.csv")
            t = curve.time
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = 0.5 * k * eps * c**2 * v_B * t**2 / (1.5 * v_B * t)
            lo, hi = cfg["correction_window"]
            win = (ratio >= lo) & (ratio <= hi) & (t <= t_cap)
            if win.sum() < 3:
                raise FitError(f"eps={eps}: comparison window holds fewer than three points")
            windows[f"{eps:g}"] = [float(t[win][0]), float(t[win][-1])]
            mean_errs.append(float(np.max(np.abs(curve.mean_size[win] - mean[win]) / mean[win])))
            log_pred = np.log(echo[win])
            log_errs.append(float(np.max(np.abs(curve.log_echo[win] - log_pred) / np.abs(log_pred))))
            mean_plot.add(t, curve.mean_size, f"eps={eps:g}", err=curve.stderr_mean_size)
            mean_plot.add(t, mean, f"prediction eps={eps:g}", dashed=True)
            echo_plot.add(t, curve.echo, f"eps={eps:g}")
            echo_plot.add(t, echo, f"prediction eps={eps:g}", dashed=True)
        mean_plot.add(c0.time, c0.mean_size, "eps=0", err=c0.stderr_mean_size)
        write_svg(mean_plot, out / "ballistic_mean_size.svg")
        write_svg(echo_plot, out / "ballistic_echo.svg")
    res.observations.update(comparison_windows=windows, mean_rel_err=mean_errs, log_echo_rel_err=log_errs,
                            boundary_cap=t_cap)
    res.criteria += [evaluate("ballistic_mean_rel_err", max(mean_errs)),
                     evaluate("ballistic_log_echo_rel_err", max(log_errs)),
                     evaluate("ballistic_runtime_s", tm.elapsed)]
    return res


def _plateau_stats(curve: ruc.GrowthCurve, start: float):
    win = curve.time >= start
    if win.sum() < 3:
        raise FitError("plateau window holds fewer than three points; increase layers")
    plateau = fit_growth_constants(curve, "plateau", (start, curve.time[-1]))
    # the error bar of the curve itself, not of the (correlated) time average
    err = float(np.mean(curve.stderr_mean_size[win]))
    slope = np.polyfit(curve.time[win], curve.log_echo[win], 1)[0]
    return plateau.params["S_p"], err, float(-slope)


def _fig2b(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    with _Timer() as tm:
        base = dict(geometry="all_to_all", trajectories=cfg["trajectories"], seed=seed, workers=workers)
        c0 = ruc.run(ruc.CircuitConfig(n=cfg["n"], epsilon=0.0, layers=int(cfg["fit_window"][1]) + 1, **base))
        c0.write_csv(out / "growth_eps0.csv")
        fit = fit_growth_constants(c0, "exponential", tuple(cfg["fit_window"]))
        lam, b = fit.params["lam"], fit.params["b"]
        res.fits = {"lam": lam, "b": b, "S0": fit.params["S0"], "exponential": fit.to_dict()}
        ruc.write_sidecar(out / "growth_eps0.fits.json", res.fits)
        params = ph.PhenomParams(lam=lam, b=b, S0=1.0)
        plot = Plot("All-to-all: mean size", "t", "mean size", logy=True)
        echo_plot = Plot("All-to-all: echo", "t", "N(t)", logy=True)
        table = {}
        for n in (cfg["n"], cfg["n_small"]):
            for eps in cfg["epsilons"]:
                curve = ruc.run(ruc.CircuitConfig(n=n, epsilon=eps, layers=cfg["layers"], **base))
                tag = f"n{n}_eps{_tag(eps)}"
                curve.write_csv(out / f"growth_{tag}.csv")
                sp, err, rate = _plateau_stats(curve, cfg["plateau_start"])
                chain = ruc.all_to_all_size_chain(n, eps, cfg["layers"])
                chain_sp = float(chain.mean_size[chain.time >= cfg["plateau_start"]].mean())
                table[(n, eps)] = (sp, err, rate)
                res.observations[f"plateau_{tag}"] = {"S_p": sp, "error_bar": err, "echo_rate": rate,
                                                      "exact_chain_S_p": chain_sp}
                if n == cfg["n"]:
                    mean, echo, t_p = ph.predict_all_to_all(params.with_epsilon(eps), curve.time, cfg["convention"])
                    _prediction_curve(curve.time, mean, echo).write_csv(out / f"prediction_eps{_tag(eps)}.csv")
                    plot.add(curve.time, curve.mean_size, f"eps={eps:g}", err=curve.stderr_mean_size)
                    plot.add(curve.time, mean, f"prediction eps={eps:g}", dashed=True)
                    echo_plot.add(curve.time, curve.echo, f"eps={eps:g}")
                    echo_plot.add(curve.time, echo, f"prediction eps={eps:g}", dashed=True)
        write_svg(plot, out / "a2a_mean_size.svg")
        write_svg(echo_plot, out / "a2a_echo.svg")
        eps_grid = np.array(cfg["epsilons"], dtype=float)
        big = [table[(cfg["n"], e)] for e in cfg["epsilons"]]
        gamma = float(np.polyfit(np.log(eps_grid), np.log([r[0] for r in big]), 1)[0])
        rates = np.array([r[2] for r in big])
        spread = float((rates.max() - rates.min()) / rates.mean())
        shift = max(abs(table[(cfg["n"], e)][0] - table[(cfg["n_small"], e)][0])
                    / (table[(cfg["n"], e)][1] + table[(cfg["n_small"], e)][1]) for e in cfg["epsilons"])
    res.fits.update(gamma=gamma, echo_rates=rates.tolist())
    res.criteria += [evaluate("a2a_gamma", gamma), evaluate("a2a_echo_rate_spread", spread),
                     evaluate("a2a_plateau_shift_sigma", shift), evaluate("a2a_runtime_s", tm.elapsed)]
    return res


def _nstar(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    rows = []
    with _Timer() as tm:
        base = dict(n=cfg["n_1d"], layers=cfg["layers_1d"], trajectories=cfg["trajectories_1d"], seed=seed,
                    workers=workers)
        ref = ruc.run(ruc.CircuitConfig(epsilon=0.0, **base))
        v_B = fit_growth_constants(ref, "linear_ballistic", (20, min(140, ref.time[-1]))).params["v_B"]
        t_cap = cfg["boundary_fraction"] * (cfg["n_1d"] / 2) / v_B
        inv_eps, log_1d = [], []
        for eps in cfg["epsilons"]:
            curve = ruc.run(ruc.CircuitConfig(epsilon=eps, **base))
            curve.write_csv(out / f"growth_1d_eps{_tag(eps)}.csv")
            t_star, le = nstar_from_curve(curve, ref, fraction=cfg["fraction"], half_width=cfg["half_width"],
                                          t_max=t_cap)
            inv_eps.append(1.0 / eps)
            log_1d.append(le)
            rows.append(("brickwork_1d", float(eps), t_star, le))
        r2 = r_squared(inv_eps, log_1d)
        slope = float(np.polyfit(inv_eps, log_1d, 1)[0])

        base = dict(n=cfg["n_all_to_all"], geometry="all_to_all", layers=cfg["layers_all_to_all"],
                    trajectories=cfg["trajectories_all_to_all"], seed=seed, workers=workers,
                    records_per_unit_time=cfg["records_per_unit_time"])
        ref = ruc.run(ruc.CircuitConfig(epsilon=0.0, **base))
        n_a2a = []
        for eps in cfg["epsilons"]:
            curve = ruc.run(ruc.CircuitConfig(epsilon=eps, **base))
            curve.write_csv(out / f"growth_a2a_eps{_tag(eps)}.csv")
            t_star, le = nstar_from_curve(curve, ref, logarithmic=True, fraction=cfg["fraction"],
                                          half_width=cfg["half_width"])
            n_a2a.append(math.exp(le))
            rows.append(("all_to_all", float(eps), t_star, le))
        n_a2a = np.array(n_a2a)
        spread = float((n_a2a.max() - n_a2a.min()) / n_a2a.mean())
    _write_rows(out / "nstar.csv", ("geometry", "epsilon", "t_star", "log_nstar"), rows)
    plot = Plot("Echo at the departure time", "1/eps", "N*", logy=True)
    plot.add(inv_eps, np.exp(log_1d), "1D brickwork", markers=True)
    plot.add(inv_eps, n_a2a, "all-to-all", markers=True)
    write_svg(plot, out / "nstar.svg")
    res.fits = {"slope_log_nstar_vs_inv_eps": slope, "a_1d": -slope / v_B, "v_B": v_B,
                "log_nstar_1d": log_1d, "nstar_all_to_all": n_a2a.tolist()}
    res.criteria += [evaluate("nstar_1d_r2", r2), evaluate("nstar_a2a_spread", spread),
                     evaluate("nstar_runtime_s", tm.elapsed)]
    return res


def _fig3(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    with _Timer() as tm:
        n = cfg["n"]
        H2 = _hamiltonian(cfg["hamiltonian"], n)
        center = n // 2
        sites = list(range(n))

        # (a) operator with no overlap on the Hamiltonian
        H1 = H2 + exact.transverse_field(n, cfg["eta_light_cone"])
        times = np.arange(0.0, cfg["t_max_light_cone"] + 0.5 * cfg["dt_light_cone"], cfg["dt_light_cone"])
        M = exact.OperatorState.from_pauli(PauliString.single(n, center, "Y"))
        a = exact.otoc_profile(M, H1, H2, times, sites, normalization=cfg["normalization"])
        _write_otoc_csv(out / "otoc_light_cone.csv", sites, times, a)
        dist, fronts = [], []
        for i in sites:
            if i == center:
                continue
            dist.append(abs(i - center))
            fronts.append(_first_crossing(times, a[i], cfg["front_threshold"]))
        if any(math.isnan(f) for f in fronts):
            raise FitError("OTOC front does not reach every site; increase t_max_light_cone")
        front_r2 = r_squared(dist, fronts)
        v_front = 1.0 / np.polyfit(dist, fronts, 1)[0]
        inside = times <= max(fronts)
        avg = a.mean(axis=0)
        max_rise = float(np.max(np.diff(avg[inside])))

        # (b) local energy density
        H1 = H2 + exact.transverse_field(n, cfg["eta_reversal"])
        times_b = np.arange(0.0, cfg["t_max_reversal"] + 0.5 * cfg["dt_reversal"], cfg["dt_reversal"])
        E = exact.local_energy_density(H2, center)
        b = exact.otoc_profile(E, H1, H2, times_b, sites, normalization=cfg["normalization"])
        _write_otoc_csv(out / "otoc_reversal.csv", sites, times_b, b)
        depths = {}
        for i in sites:
            if abs(i - center) < cfg["min_distance"]:
                continue
            interior = b[i, 1:-1]
            depths[i] = float(min(b[i, 0], b[i, -1]) - interior.min())
        depth = min(depths.values())
    pa = Plot("OTOC, non-overlapping operator", "t", "OTOC")
    for i in range(center, n):
        pa.add(times, a[i], f"site {i}")
    write_svg(pa, out / "otoc_light_cone.svg")
    pb = Plot("OTOC, local energy density", "t", "OTOC")
    for i in range(center, n):
        pb.add(times_b, b[i], f"site {i}")
    write_svg(pb, out / "otoc_reversal.svg")
    res.fits = {"front_times": dict(zip(map(str, [i for i in sites if i != center]), fronts)),
                "front_velocity": float(v_front), "interior_min_depths": {str(k): v for k, v in depths.items()}}
    res.criteria += [evaluate("otoc_front_r2", front_r2), evaluate("otoc_monotone_max_rise", max_rise),
                     evaluate("otoc_interior_min_depth", depth), evaluate("otoc_runtime_s", tm.elapsed)]
    return res


def _protocol(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    with _Timer() as tm:
        n = cfg["n"]
        H = _hamiltonian(cfg["hamiltonian"], n)
        label = cfg["initial_operator"]
        M0 = PauliString.from_label(label) if label else PauliString.single(n, 0, "X")
        L = exact.LindbladSpec.effective(cfg["epsilon"]) if cfg["epsilon"] else None
        state = exact.evolve(exact.OperatorState.from_pauli(M0), H, L, cfg["t"])
        results = []
        for k, mu in enumerate(cfg["mus"]):
            pc = protocol.ProtocolConfig(n=n, mu=mu, shots=cfg["shots"], seed=seed + k, state=state)
            results.append(protocol.run_protocol(pc))
        _write_rows(out / "protocol.csv", ("mu", "F_estimate", "stderr", "oracle"),
                    [(float(r.mu), r.F_estimate, r.stderr, r.F_oracle) for r in results])
    zs = [abs(r.F_estimate - r.F_oracle) / r.stderr for r in results if r.mu > 0]
    zero = [r for r in results if r.mu == 0]
    if not zs or not zero:
        raise ExperimentError("protocol_gmu needs mu = 0 and at least one mu > 0")
    mu0 = zero[0]
    norm = exact.echo(state)
    res.fits = {"normalization": norm, "generating_function": {f"{r.mu:g}": r.generating_function for r in results}}
    plot = Plot("Randomized-Pauli echo", "mu", "F")
    plot.add([r.mu for r in results], [r.F_estimate for r in results], "estimate",
             err=[r.stderr for r in results], markers=True)
    mus = np.linspace(0, max(cfg["mus"]), 50)
    plot.add(mus, [0.5 * (1 + protocol.oracle_generating_function(state, m)) for m in mus], "oracle", dashed=True)
    write_svg(plot, out / "protocol.svg")
    res.criteria += [evaluate("protocol_max_z", max(zs)),
                     evaluate("protocol_mu0_abs_diff", abs(mu0.F_estimate - 0.5 * (1 + norm))),
                     evaluate("protocol_mu0_stderr", mu0.stderr),
                     evaluate("protocol_runtime_s", tm.elapsed)]
    return res


def _conserved(cfg: dict, seed: int, out: Path, workers: int) -> _Outcome:
    res = _Outcome()
    v_B = cfg["v_B"] if cfg["v_B"] is not None else load_constants()["brickwork_1d"]["v_B"]
    plot = Plot("Size profile of a conserved density", "S", "P(S)", logy=True)
    for eps in cfg["epsilons"]:
        p = ph.PhenomParams(v_B=v_B, D=cfg["D"], epsilon=eps)
        means = []
        for t in cfg["times"]:
            front = 1.5 * v_B * t
            s = np.arange(1, math.ceil(front))
            s = s[s < front]
            tail = ph.predict_conserved_profile(p, t, s)
            mass = np.zeros(len(s) + 1)
            mass[1:] = tail
            mass[1] += ph.conserved_delta_mass(p, t)
            d = sizes.SizeDistribution(len(s), mass)
            tag = f"eps{_tag(eps)}_t{_tag(t)}"
            sizes.write_csv(d, out / f"profile_{tag}.csv")
            means.append(ph.conserved_mean_size(p, t))
            plot.add(s, tail, f"eps={eps:g}, t={t:g}")
        res.observations[f"eps{eps:g}"] = {
            "times": list(cfg["times"]), "mean_size": means,
            "delta_mass": [ph.conserved_delta_mass(p, t) for t in cfg["times"]],
            "truncation_size": ph.truncation_size(p),
        }
    write_svg(plot, out / "conserved_profile.svg")
    res.fits = {"v_B": v_B, "D": cfg["D"]}
    return res


EXPERIMENTS: dict[str, tuple[Callable, str]] = {
    "fig2a_1d": (_fig2a, "1D brickwork growth, width and echo vs the quadratic-corrected law"),
    "fig2b_all_to_all": (_fig2b, "all-to-all logistic growth: plateau scaling and echo decay"),
    "nstar_scan": (_nstar, "echo at the departure from unitary growth across an eps grid"),
    "fig3_otoc": (_fig3, "two-Hamiltonian OTOC: light cone and reversal for a conserved density"),
    "eq5_eq6_identities": (_identities, "exact identities: size eigenrelation, size/OTOC, echo and width laws, Markov oracle"),
    "protocol_gmu": (_protocol, "randomized-Pauli measurement of the size generating function"),
    "conserved_profile": (_conserved, "bimodal size profile of a conserved density"),
}


# --------------------------------------------------------------------------
# driver


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run one named pipeline, write its artifacts and return the report."""
    fn, _ = EXPERIMENTS[spec.name]
    cfg = spec.resolved()
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "experiment": spec.name,
        "seed": spec.seed,
        "version": version_string(),
        "config": cfg,
        "workers": spec.workers,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    start = time.perf_counter()
    outcome = fn(cfg, spec.seed, out, spec.workers)
    report = {
        "experiment": spec.name,
        "seed": spec.seed,
        "version": manifest["version"],
        "status": "PASS" if all(c["passed"] for c in outcome.criteria) else "FAIL",
        "criteria": outcome.criteria,
        "fits": outcome.fits,
        "observations": outcome.observations,
        "runtime_s": time.perf_counter() - start,
    }
    (out / "report.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    return report


def check_report(report: dict) -> list[dict]:
    """Re-evaluate every criterion value of a stored report against :data:`THRESHOLDS`."""
    records = []
    for c in report.get("criteria", []):
        name = c.get("name")
        if name not in THRESHOLDS:
            raise ExperimentError(f"report names an unknown criterion {name!r}")
        value = c.get("value")
        records.append(evaluate(name, None if value is None else float(value)))
    return records


def default_workers() -> int:
    """Thread count from ``OPGROWTH_THREADS`` (1 when unset)."""
    raw = os.environ.get("OPGROWTH_THREADS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        raise ExperimentError(f"OPGROWTH_THREADS must be an integer, got {raw!r}") from None
