"""End-to-end acceptance suite.

Runs every named pipeline at its default (full-size) configuration with
seed 11 and prints one PASS/FAIL line per criterion.  Thresholds are pinned
here independently of :data:`opgrowth.experiments.THRESHOLDS` so a change
to the shared table cannot silently loosen a criterion.

Run directly with ``python tests/test_acceptance.py`` or through pytest
(``pytest tests/test_acceptance.py -s``).
"""
import math
import sys
import tempfile
from pathlib import Path

import pytest

from opgrowth.experiments import THRESHOLDS, ExperimentSpec, run_experiment

SEED = 11

# criterion -> (experiment, {threshold name: (op, limit)})
CRITERIA = {
    1: ("eq5_eq6_identities", {"eigen_failures": ("==", 0), "eigen_runtime_s": ("<", 10)}),
    2: ("eq5_eq6_identities", {"otoc_size_max_abs_diff": ("<", 1e-10), "otoc_size_runtime_s": ("<", 120)}),
    3: ("eq5_eq6_identities", {"echo_identity_max_residual": ("<", 1e-6), "echo_identity_runtime_s": ("<", 300)}),
    4: ("eq5_eq6_identities", {"width_identity_max_residual": ("<", 1e-6), "width_identity_oracle_max_diff": ("<", 1e-6),
                               "width_identity_runtime_s": ("<", 60)}),
    5: ("fig2a_1d", {"ballistic_mean_rel_err": ("<", 0.10), "ballistic_log_echo_rel_err": ("<", 0.10),
                     "ballistic_runtime_s": ("<", 600)}),
    6: ("fig2b_all_to_all", {"a2a_gamma": ("abs<=", 0.1), "a2a_echo_rate_spread": ("<", 0.15),
                             "a2a_plateau_shift_sigma": ("<=", 1.0), "a2a_runtime_s": ("<", 900)}),
    7: ("nstar_scan", {"nstar_1d_r2": (">", 0.95), "nstar_a2a_spread": ("<", 0.20),
                       "nstar_runtime_s": ("<", 1200)}),
    8: ("fig3_otoc", {"otoc_front_r2": (">", 0.9), "otoc_monotone_max_rise": ("<=", 0.0),
                      "otoc_interior_min_depth": (">", 0.0), "otoc_runtime_s": ("<", 600)}),
    9: ("protocol_gmu", {"protocol_max_z": ("<=", 3.0), "protocol_mu0_abs_diff": ("<=", 1e-12),
                         "protocol_mu0_stderr": ("==", 0.0), "protocol_runtime_s": ("<", 300)}),
    10: ("eq5_eq6_identities", {"markov_max_z": ("<=", 4.0), "markov_runtime_s": ("<", 60)}),
}
GAMMA_TARGET = -1.0

_CACHE: dict[str, dict] = {}


def report_for(name: str, root: Path) -> dict:
    if name not in _CACHE:
        _CACHE[name] = run_experiment(ExperimentSpec(name=name, output_dir=root / name, seed=SEED))
    return _CACHE[name]


def judge(op: str, limit: float, value, target: float = 0.0) -> bool:
    if value is None or not math.isfinite(value):
        return False
    return {
        "==": value == limit,
        "<": value < limit,
        "<=": value <= limit,
        ">": value > limit,
        "abs<=": abs(value - target) <= limit,
    }[op]


def criterion_lines(number: int, report: dict) -> list[tuple[bool, str]]:
    by_name = {c["name"]: c for c in report["criteria"]}
    out = []
    for name, (op, limit) in CRITERIA[number][1].items():
        value = by_name[name]["value"] if name in by_name else None
        target = GAMMA_TARGET if op == "abs<=" else 0.0
        ok = judge(op, limit, value, target)
        rule = f"|x - ({target:g})| <= {limit:g}" if op == "abs<=" else f"x {op} {limit:g}"
        out.append((ok, f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name} = {value!r} ({rule})"))
    return out


@pytest.fixture(scope="module")
def artifact_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, artifact_root, acceptance_log):
    experiment, pinned = CRITERIA[number]
    for name, (op, limit) in pinned.items():
        assert (THRESHOLDS[name].op, THRESHOLDS[name].limit) == (op, limit), f"threshold {name} drifted"
        assert THRESHOLDS[name].criterion == number
    lines = criterion_lines(number, report_for(experiment, artifact_root))
    for _, line in lines:
        print(line)
        acceptance_log.append(line)
    failed = [line for ok, line in lines if not ok]
    assert not failed, "\n".join(failed)


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        results = []
        for number in sorted(CRITERIA):
            for ok, line in criterion_lines(number, report_for(CRITERIA[number][0], Path(tmp))):
                print(line, flush=True)
                results.append(ok)
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
