"""Operator size distributions and their moments."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .pauli import PauliString

__all__ = [
    "SizeDistribution",
    "WeightedEnsemble",
    "UndefinedMomentError",
    "from_ensemble",
    "normalization",
    "mean_size",
    "variance",
    "generating_function",
    "mean_size_from_otocs",
    "write_csv",
    "read_csv",
]


class UndefinedMomentError(ValueError):
    """Raised when a moment is requested of a distribution with zero mass."""


def _pairwise_sum(values: np.ndarray) -> float:
    # np.add.reduce is pairwise for contiguous float arrays; fsum keeps the
    # small-mass tails exact when masses span many decades.
    return math.fsum(np.asarray(values, dtype=float).ravel())


@dataclass(frozen=True)
class SizeDistribution:
    n: int
    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float)
        if mass.shape != (self.n + 1,):
            raise ValueError(f"mass must have length n + 1 = {self.n + 1}, got {mass.shape}")
        if np.any(mass < 0) or not np.all(np.isfinite(mass)):
            raise ValueError("mass entries must be finite and non-negative")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def delta(cls, n: int, s: int, weight: float = 1.0) -> "SizeDistribution":
        mass = np.zeros(n + 1)
        mass[s] = weight
        return cls(n, mass)

    @property
    def sizes(self) -> np.ndarray:
        return np.arange(self.n + 1)

    def scaled(self, factor: float) -> "SizeDistribution":
        return SizeDistribution(self.n, self.mass * factor)

    normalization = property(lambda self: normalization(self))
    mean = property(lambda self: mean_size(self))
    var = property(lambda self: variance(self))


@dataclass
class WeightedEnsemble:
    """Monte-Carlo trajectories ``(string, log_weight)``.

    The ensemble estimates ``sum_R |c_R|^2 R`` with each trajectory carrying
    mass ``exp(log_weight) / M``.
    """

    n: int
    entries: list[tuple[PauliString, float]] = field(default_factory=list)

    def add(self, string: PauliString, log_weight: float = 0.0):
        if string.n != self.n:
            raise ValueError("string qubit count does not match ensemble")
        self.entries.append((string, float(log_weight)))

    def __len__(self):
        return len(self.entries)

    def mean_weight(self) -> float:
        return math.fsum(math.exp(lw) for _, lw in self.entries) / len(self.entries)


def from_ensemble(e: WeightedEnsemble) -> SizeDistribution:
    if not e.entries:
        raise ValueError("empty ensemble")
    sizes = np.fromiter((s.size for s, _ in e.entries), dtype=np.int64, count=len(e))
    weights = np.exp(np.fromiter((lw for _, lw in e.entries), dtype=float, count=len(e)))
    return histogram(e.n, sizes, weights)


def histogram(n: int, sizes: np.ndarray, weights: np.ndarray) -> SizeDistribution:
    """Mass per size from per-trajectory sizes and weights (mean over trajectories)."""
    mass = np.bincount(sizes, weights=weights, minlength=n + 1) / len(sizes)
    return SizeDistribution(n, mass[: n + 1])


def normalization(d: SizeDistribution) -> float:
    return _pairwise_sum(d.mass)


def _checked_norm(d: SizeDistribution) -> float:
    norm = normalization(d)
    if norm <= 0:
        raise UndefinedMomentError("distribution has zero normalization")
    return norm


def mean_size(d: SizeDistribution) -> float:
    norm = _checked_norm(d)
    return _pairwise_sum(d.sizes * d.mass) / norm


def variance(d: SizeDistribution) -> float:
    norm = _checked_norm(d)
    mean = _pairwise_sum(d.sizes * d.mass) / norm
    # centred form avoids cancellation between <S^2> and <S>^2
    return _pairwise_sum((d.sizes - mean) ** 2 * d.mass) / norm


def generating_function(d: SizeDistribution, mu: float) -> float:
    """Normalized generating function ``sum_S P(S) exp(-mu S) / N``."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    norm = _checked_norm(d)
    return _pairwise_sum(d.mass * np.exp(-mu * d.sizes)) / norm


def mean_size_from_otocs(otoc_values: Mapping[PauliString, float], n: int | None = None) -> float:
    """Average size as one quarter of the summed OTOC deficits.

    ``otoc_values`` maps every non-identity single-site Pauli to its normalized
    OTOC; identity terms would contribute zero and are not needed.
    """
    if not otoc_values:
        raise ValueError("empty OTOC map")
    if n is None:
        n = next(iter(otoc_values)).n
    expected = {PauliString.single(n, i, p) for i in range(n) for p in "XYZ"}
    missing = expected - set(otoc_values)
    if missing:
        raise ValueError(f"OTOC map is missing {len(missing)} single-site Paulis, e.g. {next(iter(missing))}")
    return math.fsum(1.0 - otoc_values[p] for p in expected) / 4.0


def write_csv(d: SizeDistribution, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["S", "mass"])
        for s, m in enumerate(d.mass):
            w.writerow([s, repr(float(m))])


def read_csv(path) -> SizeDistribution:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    sizes = [int(r["S"]) for r in rows]
    if sizes != list(range(len(sizes))):
        raise ValueError("S column must run 0..n contiguously")
    return SizeDistribution(len(sizes) - 1, np.array([float(r["mass"]) for r in rows]))


def moments_from_samples(sizes: Sequence[float], weights: Sequence[float]) -> tuple[float, float]:
    """Weighted mean and variance of per-trajectory sizes."""
    w = np.asarray(weights, dtype=float)
    s = np.asarray(sizes, dtype=float)
    total = w.sum()
    if total <= 0:
        raise UndefinedMomentError("all weights vanish")
    mean = float((w * s).sum() / total)
    return mean, float((w * (s - mean) ** 2).sum() / total)
