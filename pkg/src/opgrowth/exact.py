"""Exact Heisenberg-picture evolution in the Pauli basis for small chains.

An operator ``M = sum_R c_R R`` is a dense real vector over all ``4**n``
Pauli strings, indexed by ``x_bits | z_bits << n``.  Hermitian Hamiltonians
built from Pauli terms and Pauli jump operators keep the coefficients real,
so the generator never needs complex arithmetic:

* ``i[hP, R] = 2h * sign * (P R)`` for anticommuting ``P, R`` and zero
  otherwise, a signed permutation gathered term by term;
* a Pauli jump operator ``L`` at rate ``g`` multiplies ``c_R`` by ``-2g``
  when ``L`` anticommutes with ``R``;
* the effective size model multiplies ``c_R`` by ``-eps * size(R)``.

Time stepping uses a truncated Taylor series of the generator, accurate to
the requested tolerance on every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from .pauli import PauliString
from .sizes import SizeDistribution

__all__ = [
    "MAX_QUBITS",
    "IntegrationError",
    "OperatorState",
    "HamiltonianSpec",
    "LindbladSpec",
    "Generator",
    "evolve",
    "evolve_trace",
    "SizeTrace",
    "echo",
    "size_distribution",
    "check_eq5",
    "check_eq6",
    "single_site_otocs",
    "otoc_profile",
    "mixed_field_ising",
    "transverse_field",
    "local_energy_density",
    "random_hamiltonian",
]

MAX_QUBITS = 10


class IntegrationError(RuntimeError):
    pass


@lru_cache(maxsize=16)
def _tables(n: int):
    idx = np.arange(4**n, dtype=np.int64)
    mask = (1 << n) - 1
    x = idx & mask
    z = idx >> n
    sizes = np.bitwise_count(x | z).astype(np.int64)
    y_count = np.bitwise_count(x & z).astype(np.int64)
    for arr in (idx, x, z, sizes, y_count):
        arr.setflags(write=False)
    return idx, x, z, sizes, y_count


def _check_n(n: int):
    if n > MAX_QUBITS:
        raise ValueError(f"exact engine supports n <= {MAX_QUBITS}, got {n}")


@dataclass
class OperatorState:
    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        _check_n(self.n)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (4**self.n,):
            raise ValueError(f"expected {4**self.n} coefficients")

    @classmethod
    def from_pauli(cls, p: PauliString, coeff: float = 1.0) -> "OperatorState":
        _check_n(p.n)
        c = np.zeros(4**p.n)
        c[p.index] = coeff
        return cls(p.n, c)

    @classmethod
    def from_terms(cls, n: int, terms: Iterable[tuple[PauliString, float]], normalize: bool = False):
        c = np.zeros(4**n)
        for p, w in terms:
            c[p.index] += w
        if normalize:
            c /= np.linalg.norm(c)
        return cls(n, c)

    def coefficient(self, p: PauliString) -> float:
        return float(self.coeffs[p.index])

    def to_matrix(self) -> np.ndarray:
        from .pauli import to_matrix

        out = np.zeros((2**self.n, 2**self.n), dtype=complex)
        for i in np.flatnonzero(self.coeffs):
            out += self.coeffs[i] * to_matrix(PauliString.from_index(int(i), self.n))
        return out

    def copy(self) -> "OperatorState":
        return OperatorState(self.n, self.coeffs.copy())


@dataclass
class HamiltonianSpec:
    n: int
    terms: list[tuple[PauliString, float]] = field(default_factory=list)

    def __post_init__(self):
        for p, _ in self.terms:
            if p.n != self.n:
                raise ValueError("Hamiltonian term has the wrong qubit count")

    def __add__(self, other: "HamiltonianSpec") -> "HamiltonianSpec":
        if other.n != self.n:
            raise ValueError("qubit count mismatch")
        return HamiltonianSpec(self.n, _merge(self.terms + other.terms))

    def scaled(self, factor: float) -> "HamiltonianSpec":
        return HamiltonianSpec(self.n, [(p, factor * h) for p, h in self.terms])

    @classmethod
    def from_config(cls, cfg: dict) -> "HamiltonianSpec":
        """Build from ``{"preset": name, ...}`` or ``{"n": n, "terms": [[label, h], ...]}``."""
        cfg = dict(cfg)
        preset = cfg.pop("preset", None)
        if preset is not None:
            try:
                factory = PRESETS[preset]
            except KeyError:
                raise ValueError(f"unknown Hamiltonian preset {preset!r}; choose from {sorted(PRESETS)}") from None
            return factory(**cfg)
        terms = [(PauliString.from_label(label), float(h)) for label, h in cfg["terms"]]
        return cls(int(cfg.get("n", terms[0][0].n if terms else 0)), terms)


def _merge(terms):
    acc: dict[PauliString, float] = {}
    for p, h in terms:
        acc[p] = acc.get(p, 0.0) + h
    return [(p, h) for p, h in acc.items() if h != 0.0]


@dataclass
class LindbladSpec:
    jump_ops: list[tuple[PauliString, float]] = field(default_factory=list)
    effective_size_model: bool = False
    epsilon: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0 or any(rate < 0 for _, rate in self.jump_ops):
            raise ValueError("rates must be non-negative")

    @classmethod
    def effective(cls, epsilon: float) -> "LindbladSpec":
        return cls(effective_size_model=True, epsilon=epsilon)

    @classmethod
    def none(cls) -> "LindbladSpec":
        return cls()


@njit(cache=True)
def _apply_terms(c, out, term_idx, term_coef, signs):
    dim = c.shape[0]
    for k in range(term_idx.shape[0]):
        p = term_idx[k]
        h2 = term_coef[k]
        row = signs[k]
        for t in range(dim):
            s = row[t]
            if s != 0:
                out[t] += h2 * s * c[t ^ p]


class Generator:
    """Matrix-free ``dM/dt = i[H, M] + D(M)`` on the Pauli coefficient vector."""

    def __init__(self, H: HamiltonianSpec | None, L: LindbladSpec | None, n: int | None = None):
        n = H.n if H is not None else n
        if n is None:
            raise ValueError("qubit count required")
        _check_n(n)
        self.n = n
        idx, x, z, sizes, ycount = _tables(n)
        self.idx = idx
        self.terms = []
        for p, h in (H.terms if H is not None else []):
            if h == 0 or p.size == 0:
                continue
            px, pz = p.x_bits, p.z_bits
            anti = (np.bitwise_count((x & pz) ^ (z & px)) & 1).astype(bool)
            # phase exponent of P * R for every R, mod 4
            t_y = np.bitwise_count((x ^ px) & (z ^ pz)).astype(np.int64)
            k = ((px & pz).bit_count() + ycount - t_y + 2 * np.bitwise_count(pz & x)) % 4
            sign = np.zeros(4**n, dtype=np.int8)
            sign[anti & (k == 1)] = -1
            sign[anti & (k == 3)] = 1
            # indexed by the output string T = R ^ P
            self.terms.append((p.index, 2.0 * h, sign[idx ^ p.index]))
        self._term_idx = np.array([t[0] for t in self.terms], dtype=np.int64)
        self._term_coef = np.array([t[1] for t in self.terms], dtype=float)
        self._signs = (np.stack([t[2] for t in self.terms]) if self.terms
                       else np.zeros((0, 4**n), dtype=np.int8))
        diag = np.zeros(4**n)
        L = L or LindbladSpec()
        for p, rate in L.jump_ops:
            if p.n != n:
                raise ValueError("jump operator has the wrong qubit count")
            anti = (np.bitwise_count((x & p.z_bits) ^ (z & p.x_bits)) & 1).astype(bool)
            diag[anti] -= 2.0 * rate
        if L.effective_size_model:
            diag -= L.epsilon * sizes
        self.diag = diag if np.any(diag) else None
        self.norm_bound = sum(abs(h) for _, h, _ in self.terms) + (np.max(-diag) if self.diag is not None else 0.0)

    def __call__(self, c: np.ndarray) -> np.ndarray:
        out = self.diag * c if self.diag is not None else np.zeros_like(c)
        _apply_terms(np.ascontiguousarray(c, dtype=float), out, self._term_idx, self._term_coef, self._signs)
        return out

    def step(self, c: np.ndarray, dt: float, tol: float = 1e-13, max_order: int = 60) -> np.ndarray:
        """Advance by ``dt`` with Taylor substeps of norm at most one."""
        if dt == 0:
            return c.copy()
        nsub = max(1, math.ceil(abs(dt) * self.norm_bound))
        h = dt / nsub
        for _ in range(nsub):
            term = c
            acc = c.copy()
            scale = max(np.linalg.norm(c), 1e-300)
            for k in range(1, max_order + 1):
                term = self(term) * (h / k)
                acc += term
                if np.linalg.norm(term) <= tol * scale:
                    break
            else:
                raise IntegrationError(f"Taylor series did not reach tol={tol} in {max_order} terms")
            c = acc
        return c


def _resolve(state: OperatorState, H, L):
    if H is not None and H.n != state.n:
        raise ValueError("Hamiltonian and state differ in qubit count")
    return Generator(H, L, state.n)


def evolve(state: OperatorState, H: HamiltonianSpec | None, L: LindbladSpec | None, t: float,
           tol: float = 1e-13) -> OperatorState:
    """Integrate the operator to time ``t`` (negative ``t`` runs backwards)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    gen = _resolve(state, H, L)
    return OperatorState(state.n, gen.step(state.coeffs, t, tol))


def evolve_grid(state: OperatorState, H, L, times: Sequence[float], tol: float = 1e-13):
    """Yield ``(t, coeffs)`` along an increasing time grid starting from ``times[0]``."""
    gen = _resolve(state, H, L)
    c = state.coeffs
    prev = 0.0
    for t in times:
        c = gen.step(c, t - prev, tol)
        prev = t
        yield t, c


@dataclass
class SizeTrace:
    """Size-resolved mass ``mass[k, S]`` at each ``times[k]``."""

    times: np.ndarray
    mass: np.ndarray

    @property
    def echo(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @property
    def mean_size(self) -> np.ndarray:
        s = np.arange(self.mass.shape[1])
        return (self.mass * s).sum(axis=1) / self.echo

    @property
    def variance(self) -> np.ndarray:
        s = np.arange(self.mass.shape[1])
        mean = self.mean_size
        return (self.mass * (s[None, :] - mean[:, None]) ** 2).sum(axis=1) / self.echo


def _size_mass(c: np.ndarray, n: int) -> np.ndarray:
    sizes = _tables(n)[3]
    return np.bincount(sizes, weights=c * c, minlength=n + 1)


def evolve_trace(state: OperatorState, H, L, times: Sequence[float], tol: float = 1e-13) -> SizeTrace:
    times = np.asarray(times, dtype=float)
    mass = np.array([_size_mass(c, state.n) for _, c in evolve_grid(state, H, L, times, tol)])
    return SizeTrace(times, mass)


def echo(state: OperatorState) -> float:
    return float(np.dot(state.coeffs, state.coeffs))


def size_distribution(state: OperatorState) -> SizeDistribution:
    return SizeDistribution(state.n, _size_mass(state.coeffs, state.n))


def _derivative(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Fourth-order finite-difference derivative on a uniform grid."""
    h = np.diff(t)
    if len(y) < 5 or not np.allclose(h, h[0], rtol=1e-9, atol=0):
        return np.gradient(y, t, edge_order=2)
    h = h[0]
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)
    d[0] = (-25 * y[0] + 48 * y[1] - 36 * y[2] + 16 * y[3] - 3 * y[4]) / (12 * h)
    d[1] = (-3 * y[0] - 10 * y[1] + 18 * y[2] - 6 * y[3] + y[4]) / (12 * h)
    d[-1] = (25 * y[-1] - 48 * y[-2] + 36 * y[-3] - 16 * y[-4] + 3 * y[-5]) / (12 * h)
    d[-2] = (3 * y[-1] + 10 * y[-2] - 18 * y[-3] + 6 * y[-4] - y[-5]) / (12 * h)
    return d


def check_eq5(trace: SizeTrace, epsilon: float) -> float:
    """Max of ``|d log N/dt + 2 eps Sbar|`` over the grid."""
    dlog = _derivative(np.log(trace.echo), trace.times)
    return float(np.max(np.abs(dlog + 2 * epsilon * trace.mean_size)))


def check_eq6(trace: SizeTrace, epsilon: float) -> float:
    """Max of ``|d Sbar/dt + 2 eps var(S)|`` over the grid."""
    ds = _derivative(trace.mean_size, trace.times)
    return float(np.max(np.abs(ds + 2 * epsilon * trace.variance)))


def _commute_sign(n: int, p: PauliString) -> np.ndarray:
    _, x, z, _, _ = _tables(n)
    return 1 - 2 * (np.bitwise_count((x & p.z_bits) ^ (z & p.x_bits)) & 1).astype(np.int64)


def single_site_otocs(state: OperatorState) -> dict[PauliString, float]:
    """Normalized ``<M P M P> / <M M>`` for every non-identity single-site Pauli."""
    w = state.coeffs**2
    norm = w.sum()
    out = {}
    for i in range(state.n):
        for letter in "XYZ":
            p = PauliString.single(state.n, i, letter)
            out[p] = float(np.dot(w, _commute_sign(state.n, p)) / norm)
    return out


def otoc_profile(M: OperatorState, H1: HamiltonianSpec, H2: HamiltonianSpec, times: Sequence[float],
                 sites: Sequence[int] | None = None, normalization: str = "overlap",
                 tol: float = 1e-13) -> np.ndarray:
    """Site-averaged two-Hamiltonian OTOC, shape ``(len(sites), len(times))``.

    Computes ``(1/4) sum_P <M1(t) P_i M2(t) P_i> / N(t)`` with
    ``M_k(t) = exp(-i H_k t) M exp(i H_k t)``.  Averaging over
    ``P in {I, X, Y, Z}`` keeps exactly the strings acting as identity on
    site ``i``.  ``N(t)`` is ``<M1 M2>`` ("overlap") or ``<M1 M1>`` ("forward").
    """
    if H1.n != H2.n or H1.n != M.n:
        raise ValueError("qubit count mismatch")
    if normalization not in ("overlap", "forward"):
        raise ValueError("normalization must be 'overlap' or 'forward'")
    n = M.n
    sites = list(range(n)) if sites is None else list(sites)
    _, x, z, _, _ = _tables(n)
    support = x | z
    idle = [((support >> i) & 1) == 0 for i in sites]
    out = np.empty((len(sites), len(times)))
    g1 = evolve_grid(M, H1.scaled(-1.0), None, times, tol)
    g2 = evolve_grid(M, H2.scaled(-1.0), None, times, tol)
    for k, ((_, a), (_, b)) in enumerate(zip(g1, g2)):
        ab = a * b
        norm = ab.sum() if normalization == "overlap" else np.dot(a, a)
        for j, mask in enumerate(idle):
            out[j, k] = ab[mask].sum() / norm
    return out


# --------------------------------------------------------------------------
# Hamiltonian presets


def mixed_field_ising(n: int, J: float = 1.0, hx: float = 1.05, hz: float = 0.5) -> HamiltonianSpec:
    """Open chain ``J sum Z_i Z_{i+1} + hx sum X_i + hz sum Z_i``."""
    terms = []
    for i in range(n - 1):
        terms.append((PauliString(n, 0, (1 << i) | (1 << (i + 1))), J))
    for i in range(n):
        terms.append((PauliString.single(n, i, "X"), hx))
        terms.append((PauliString.single(n, i, "Z"), hz))
    return HamiltonianSpec(n, _merge(terms))


def transverse_field(n: int, strength: float = 1.0) -> HamiltonianSpec:
    """``strength * sum_i X_i``, the default perturbation between the two evolutions."""
    return HamiltonianSpec(n, [(PauliString.single(n, i, "X"), strength) for i in range(n)])


def local_energy_density(H: HamiltonianSpec, site: int | None = None) -> OperatorState:
    """Normalized sum of the Hamiltonian terms whose support touches ``site``."""
    site = H.n // 2 if site is None else site
    terms = [(p, h) for p, h in H.terms if (p.support >> site) & 1]
    if not terms:
        raise ValueError(f"no Hamiltonian term touches site {site}")
    return OperatorState.from_terms(H.n, terms, normalize=True)


def random_hamiltonian(n: int, rng: np.random.Generator) -> HamiltonianSpec:
    """Random-coupling chain: all nearest-neighbour two-site terms plus all fields."""
    terms = []
    for i in range(n):
        for letter in "XYZ":
            terms.append((PauliString.single(n, i, letter), float(rng.normal())))
    for i in range(n - 1):
        for a in "XYZ":
            for b in "XYZ":
                label = "I" * i + a + b + "I" * (n - i - 2)
                terms.append((PauliString.from_label(label), float(rng.normal()) / 2))
    return HamiltonianSpec(n, terms)


PRESETS = {
    "mixed_field_ising": mixed_field_ising,
    "transverse_field": transverse_field,
}
