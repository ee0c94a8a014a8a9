"""Monte-Carlo operator spreading in noisy random unitary circuits.

Trajectories are Pauli strings stored one byte per site (``code = x + 2z``,
so 0=I, 1=X, 2=Z, 3=Y) in an ``(M, n)`` array.  Each two-site gate acts on
the pair through the Haar-averaged Pauli-transfer rule: the identity pair
stays put and every other pair jumps to one of the 15 non-identity pairs
uniformly.  Depolarizing noise enters as deterministic log-weights
``2 * size * log(1 - eps)`` per layer (mass convention).

Randomness is drawn per block of ``BLOCK`` trajectories from generators
seeded by ``(seed, block)``; results depend only on the seed, never on the
worker count.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .pauli import PauliString
from .sizes import SizeDistribution, WeightedEnsemble

log = logging.getLogger(__name__)

__all__ = [
    "Geometry",
    "CircuitConfig",
    "GrowthCurve",
    "Trajectories",
    "ResourceError",
    "gate_transfer",
    "gate_transfer_codes",
    "apply_noise_layer",
    "step_brickwork",
    "step_all_to_all",
    "run",
    "resample",
    "guided_ess",
    "block_generators",
    "markov_size_oracle",
    "all_to_all_size_chain",
]

BLOCK = 512
DEFAULT_MEMORY_BUDGET = 2_000_000_000  # bytes of trajectory storage

_X_OF = np.array([0, 1, 0, 1], dtype=np.uint8)
_Z_OF = np.array([0, 0, 1, 1], dtype=np.uint8)


class ResourceError(RuntimeError):
    pass


class Geometry(str, Enum):
    BRICKWORK_1D = "brickwork_1d"
    ALL_TO_ALL = "all_to_all"


@dataclass
class CircuitConfig:
    n: int
    geometry: Geometry = Geometry.BRICKWORK_1D
    epsilon: float = 0.0
    layers: int = 100
    trajectories: int = 1000
    seed: int = 0
    initial_operator: PauliString | None = None
    gates_per_unit_time: int | None = None
    # population control: resample when ESS / M drops below this (0 disables)
    resample_threshold: float = 0.5
    # resampling favours small sizes by size**-resample_guide (0 = plain)
    resample_guide: float | None = None
    record_distributions: bool = False
    # all-to-all only: measurements per unit time (gates are split evenly)
    records_per_unit_time: int = 1
    workers: int = 1
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        self.geometry = Geometry(self.geometry)
        if isinstance(self.initial_operator, str):
            self.initial_operator = PauliString.from_label(self.initial_operator)
        if self.initial_operator is None:
            self.initial_operator = PauliString.single(self.n, self.n // 2, "X")
        if self.resample_guide is None:
            self.resample_guide = 1.0 if self.geometry is Geometry.ALL_TO_ALL else 0.0
        if self.gates_per_unit_time is None:
            self.gates_per_unit_time = max(1, self.n // 2)
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.trajectories < 1:
            raise ValueError("trajectories must be >= 1")
        if self.initial_operator.n != self.n:
            raise ValueError("initial operator has the wrong qubit count")
        if self.n < 2:
            raise ValueError("circuits need at least two qubits")

    @classmethod
    def from_dict(cls, d: dict) -> "CircuitConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown circuit config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.value
        d["initial_operator"] = str(self.initial_operator)
        return d


@dataclass
class GrowthCurve:
    time: np.ndarray
    mean_size: np.ndarray
    variance: np.ndarray
    echo: np.ndarray
    stderr_mean_size: np.ndarray
    log_echo: np.ndarray
    ess: np.ndarray
    distributions: list[SizeDistribution] = field(default_factory=list)

    COLUMNS = ("t", "mean_size", "var_size", "echo", "stderr", "log_echo")

    def write_csv(self, path) -> None:
        rows = np.column_stack(
            [self.time, self.mean_size, self.variance, self.echo, self.stderr_mean_size, self.log_echo]
        )
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def read_csv(cls, path) -> "GrowthCurve":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if tuple(header[:5]) != cls.COLUMNS[:5]:
                raise ValueError(f"unexpected growth-curve header {header}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        log_echo = data[:, 5] if data.shape[1] > 5 else np.log(data[:, 3])
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], log_echo,
                   np.full(len(data), np.nan))


# --------------------------------------------------------------------------
# single-object operations


def gate_transfer(pair: PauliString, rng: np.random.Generator) -> PauliString:
    """Apply the averaged two-site gate to a two-site Pauli string."""
    if pair.n != 2:
        raise ValueError("gate_transfer acts on two-site strings")
    a = pair.letter(0)
    b = pair.letter(1)
    code = "IXZY".index(a) * 4 + "IXZY".index(b)
    out = int(gate_transfer_codes(np.array([code]), rng)[0])
    return PauliString.from_label("IXZY"[out // 4] + "IXZY"[out % 4])


def gate_transfer_codes(pair_codes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized transfer on pair codes ``4*a + b``; zeros stay zero."""
    draws = rng.integers(1, 16, size=pair_codes.shape, dtype=np.uint8)
    return np.where(pair_codes > 0, draws, 0).astype(np.uint8)


def apply_noise_layer(traj: tuple[PauliString, float], epsilon: float) -> tuple[PauliString, float]:
    string, log_weight = traj
    return string, log_weight + 2.0 * string.size * math.log1p(-epsilon)


# --------------------------------------------------------------------------
# ensemble state


@dataclass
class Trajectories:
    """Array form of a weighted ensemble.

    ``log_norm`` carries the mass removed from the per-trajectory weights by
    resampling, so the ensemble mass is ``exp(log_norm) * mean(exp(log_w))``.
    """

    codes: np.ndarray  # (M, n) uint8
    log_w: np.ndarray  # (M,)
    log_norm: float = 0.0

    @classmethod
    def replicate(cls, p: PauliString, m: int) -> "Trajectories":
        row = np.array([((p.x_bits >> i) & 1) | (((p.z_bits >> i) & 1) << 1) for i in range(p.n)],
                       dtype=np.uint8)
        return cls(np.tile(row, (m, 1)), np.zeros(m))

    @classmethod
    def from_ensemble(cls, e: WeightedEnsemble) -> "Trajectories":
        codes = np.array(
            [[((s.x_bits >> i) & 1) | (((s.z_bits >> i) & 1) << 1) for i in range(e.n)] for s, _ in e.entries],
            dtype=np.uint8,
        ).reshape(len(e), e.n)
        return cls(codes, np.array([lw for _, lw in e.entries], dtype=float))

    def to_ensemble(self) -> WeightedEnsemble:
        m, n = self.codes.shape
        e = WeightedEnsemble(n)
        weights = 1 << np.arange(n, dtype=object)
        for row, lw in zip(self.codes, self.log_w):
            x = int(np.dot(_X_OF[row].astype(object), weights)) if n else 0
            z = int(np.dot(_Z_OF[row].astype(object), weights)) if n else 0
            e.add(PauliString(n, x, z), lw + self.log_norm)
        return e

    @property
    def m(self) -> int:
        return self.codes.shape[0]

    @property
    def n(self) -> int:
        return self.codes.shape[1]

    def sizes(self) -> np.ndarray:
        return np.count_nonzero(self.codes, axis=1)

    def log_mass(self) -> float:
        return self.log_norm + float(logsumexp(self.log_w)) - math.log(self.m)

    def size_distribution(self) -> SizeDistribution:
        w = np.exp(self.log_w - self.log_w.max())
        mass = np.bincount(self.sizes(), weights=w, minlength=self.n + 1) / self.m
        return SizeDistribution(self.n, mass * math.exp(self.log_w.max() + self.log_norm))

    def copy(self) -> "Trajectories":
        return Trajectories(self.codes.copy(), self.log_w.copy(), self.log_norm)


def _as_rngs(rng, m: int) -> list[tuple[slice, np.random.Generator]]:
    """Pair each block of rows with a generator."""
    if isinstance(rng, np.random.Generator):
        return [(slice(0, m), rng)]
    out = []
    for b, g in enumerate(rng):
        lo = b * BLOCK
        if lo >= m:
            break
        out.append((slice(lo, min(m, lo + BLOCK)), g))
    if out[-1][0].stop != m:
        raise ValueError("not enough block generators for the ensemble")
    return out


def _brickwork_block(codes: np.ndarray, parity: int, g: np.random.Generator):
    n = codes.shape[1]
    k = (n - parity) // 2
    if k == 0:
        return
    left = codes[:, parity : parity + 2 * k : 2]
    right = codes[:, parity + 1 : parity + 2 * k : 2]
    new = gate_transfer_codes(left * 4 + right, g)
    codes[:, parity : parity + 2 * k : 2] = new >> 2
    codes[:, parity + 1 : parity + 2 * k : 2] = new & 3


def step_brickwork(state, layer_parity, epsilon: float, rng, workers: int = 1):
    """One brickwork layer of gates on pairs ``(p, p+1), (p+2, p+3), ...``.

    Depolarizing noise of strength ``epsilon`` is split into two half-layers
    around the gates: the mass factor is ``(1 - eps) ** (S_before + S_after)``,
    which is the single-layer ``(1 - eps) ** (2 S)`` whenever the gates leave
    the size unchanged.

    ``state`` is a :class:`Trajectories` (updated in place and returned) or a
    :class:`WeightedEnsemble` (a new ensemble is returned).  ``rng`` is one
    generator or a sequence of per-block generators.
    """
    if isinstance(state, WeightedEnsemble):
        return step_brickwork(Trajectories.from_ensemble(state), layer_parity, epsilon, rng).to_ensemble()
    parity = ("even", "odd").index(layer_parity) if isinstance(layer_parity, str) else int(layer_parity) % 2
    blocks = _as_rngs(rng, state.m)
    half = math.log1p(-epsilon) if epsilon > 0 else 0.0
    if half:
        state.log_w += half * state.sizes()

    def work(item):
        sl, g = item
        _brickwork_block(state.codes[sl], parity, g)

    _map(work, blocks, workers)
    if half:
        state.log_w += half * state.sizes()
    return state


def _all_to_all_block(codes, log_w, sizes, epsilon, gates, g):
    m, n = codes.shape
    rows = np.arange(m)
    first = g.integers(0, n, size=(gates, m))
    second = (first + g.integers(1, n, size=(gates, m))) % n
    draws = g.integers(1, 16, size=(gates, m), dtype=np.uint8)
    per_gate = 2.0 * math.log1p(-epsilon) / gates if epsilon > 0 else 0.0
    for k in range(gates):
        i = first[k]
        j = second[k]
        a = codes[rows, i]
        b = codes[rows, j]
        busy = (a | b) > 0
        new = np.where(busy, draws[k], 0)
        na = new >> 2
        nb = new & 3
        codes[rows, i] = na
        codes[rows, j] = nb
        sizes += (na > 0).astype(np.int64) + (nb > 0) - (a > 0) - (b > 0)
        if per_gate:
            log_w += per_gate * sizes


def step_all_to_all(state, epsilon: float, rng, gates_per_unit_time: int | None = None, workers: int = 1):
    """One unit of time: ``gates_per_unit_time`` random-pair gates per trajectory.

    Noise is spread over the gates so the damping over the whole unit is
    ``2 * size * log(1 - eps)`` with the size tracked gate by gate.
    """
    if isinstance(state, WeightedEnsemble):
        return step_all_to_all(Trajectories.from_ensemble(state), epsilon, rng, gates_per_unit_time).to_ensemble()
    gates = max(1, state.n // 2) if gates_per_unit_time is None else gates_per_unit_time
    if gates == 0:
        return state
    blocks = _as_rngs(rng, state.m)
    sizes = state.sizes()

    def work(item):
        sl, g = item
        _all_to_all_block(state.codes[sl], state.log_w[sl], sizes[sl], epsilon, gates, g)

    _map(work, blocks, workers)
    return state


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(fn, items))
    else:
        for item in items:
            fn(item)


def resample(state: Trajectories, rng: np.random.Generator, guide: float = 0.0) -> Trajectories:
    """Systematic resampling; total mass is kept in ``log_norm``.

    Trajectories are picked with probability proportional to
    ``w * size**-guide`` and keep a compensating weight ``size**guide``, so
    ``guide > 0`` enriches small sizes without biasing any weighted average.
    """
    m = state.m
    log_g = guide * np.log(np.maximum(state.sizes(), 1)) if guide else 0.0
    log_r = state.log_w - log_g
    shift = log_r.max()
    r = np.exp(log_r - shift)
    total = r.sum()
    cdf = np.cumsum(r) / total
    cdf[-1] = 1.0
    picks = np.minimum(np.searchsorted(cdf, (rng.random() + np.arange(m)) / m, side="right"), m - 1)
    state.codes = state.codes[picks]
    state.log_norm += shift + math.log(total / m)
    state.log_w = np.asarray(log_g[picks] if guide else np.zeros(m), dtype=float)
    return state


def guided_ess(state: Trajectories, guide: float) -> float:
    log_r = state.log_w - guide * np.log(np.maximum(state.sizes(), 1)) if guide else state.log_w
    r = np.exp(log_r - log_r.max())
    return float(r.sum() ** 2 / (r**2).sum())


def block_generators(seed: int, m: int) -> list[np.random.Generator]:
    nblocks = -(-m // BLOCK)
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,))) for b in range(nblocks)]


# --------------------------------------------------------------------------
# driver


def _record(state: Trajectories):
    sizes = state.sizes().astype(float)
    lw = state.log_w
    w = np.exp(lw - lw.max())
    total = w.sum()
    mean = float((w * sizes).sum() / total)
    var = float((w * (sizes - mean) ** 2).sum() / total)
    stderr = float(math.sqrt((w**2 * (sizes - mean) ** 2).sum()) / total)
    ess = float(total**2 / (w**2).sum())
    return mean, var, state.log_mass(), stderr, ess


def run(config: CircuitConfig) -> GrowthCurve:
    """Evolve ``config.trajectories`` weighted trajectories and record moments.

    One step is a single brickwork layer (1D) or one unit of time
    (all-to-all, optionally recorded ``records_per_unit_time`` times).
    """
    cfg = config
    need = cfg.n * cfg.trajectories
    if need > cfg.memory_budget:
        raise ResourceError(f"{need} bytes of trajectory state exceeds budget {cfg.memory_budget}")
    state = Trajectories.replicate(cfg.initial_operator, cfg.trajectories)
    gens = block_generators(cfg.seed, cfg.trajectories)
    resampler = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2**31,)))

    if cfg.geometry is Geometry.BRICKWORK_1D:
        per_unit = 1
        steps = [lambda k: step_brickwork(state, k % 2, cfg.epsilon, gens, cfg.workers)] * cfg.layers
    else:
        per_unit = max(1, cfg.records_per_unit_time)
        g = cfg.gates_per_unit_time
        # split g gates over the sub-steps; per-gate noise is always eps / g
        chunks = [g * (r + 1) // per_unit - g * r // per_unit for r in range(per_unit)]
        steps = []
        for _ in range(cfg.layers):
            for gates in chunks:
                eps_sub = 1.0 - (1.0 - cfg.epsilon) ** (gates / g)
                steps.append(lambda k, gates=gates, eps_sub=eps_sub:
                             step_all_to_all(state, eps_sub, gens, gates, cfg.workers))

    rec = [_record(state)]
    dists = [state.size_distribution()] if cfg.record_distributions else []
    for k, advance in enumerate(steps):
        advance(k)
        rec.append(_record(state))
        if cfg.record_distributions:
            dists.append(state.size_distribution())
        if cfg.resample_threshold > 0 and (
            guided_ess(state, cfg.resample_guide) < cfg.resample_threshold * state.m
        ):
            resample(state, resampler, cfg.resample_guide)
    mean, var, log_echo, stderr, ess = (np.array(col) for col in zip(*rec))
    return GrowthCurve(
        time=np.arange(len(rec), dtype=float) / per_unit,
        mean_size=mean,
        variance=var,
        echo=np.exp(log_echo),
        stderr_mean_size=stderr,
        log_echo=log_echo,
        ess=ess,
        distributions=dists,
    )


def write_sidecar(path, fits: dict) -> None:
    Path(path).write_text(json.dumps(fits, indent=2, sort_keys=True))


# --------------------------------------------------------------------------
# exact oracle for small chains


def _transfer_matrix_1d(n: int, parity: int) -> np.ndarray:
    """Markov matrix over all ``4**n`` strings (site codes base 4) for one layer."""
    dim = 4**n
    pair = np.zeros((16, 16))
    pair[0, 0] = 1.0
    pair[1:, 1:] = 1.0 / 15.0
    t = np.ones((1, 1))
    site = parity
    factors = []
    if parity == 1:
        factors.append(np.eye(4))
    while site + 1 < n:
        factors.append(pair)
        site += 2
    if site < n:
        factors.append(np.eye(4))
    for f in factors:
        t = np.kron(t, f)
    assert t.shape == (dim, dim)
    return t


def markov_size_oracle(n: int, initial: PauliString, layers: int, epsilon: float) -> list[np.ndarray]:
    """Exact size-resolved mass after each brickwork layer, by transfer matrices.

    States are enumerated as base-4 numbers with site 0 most significant and
    site code ``x + 2z``; this is independent of the array engine above.
    """
    dim = 4**n
    codes = np.array([[(s // 4 ** (n - 1 - i)) % 4 for i in range(n)] for s in range(dim)])
    sizes = np.count_nonzero(codes, axis=1)
    half = (1.0 - epsilon) ** sizes
    start = sum((((initial.x_bits >> i) & 1) | (((initial.z_bits >> i) & 1) << 1)) * 4 ** (n - 1 - i)
                for i in range(n))
    p = np.zeros(dim)
    p[start] = 1.0
    mats = [_transfer_matrix_1d(n, 0), _transfer_matrix_1d(n, 1)]
    out = []
    for layer in range(layers):
        p = half * ((half * p) @ mats[layer % 2])
        out.append(np.bincount(sizes, weights=p, minlength=n + 1))
    return out


def all_to_all_size_chain(n: int, epsilon: float, units: int, initial_size: int = 1,
                          gates_per_unit_time: int | None = None) -> GrowthCurve:
    """Exact size statistics of the all-to-all circuit.

    With uniformly random pairs and the averaged gate, the size alone is a
    Markov chain: a gate on two occupied sites empties one of them with
    probability 6/15, a gate on one occupied site fills the other with
    probability 9/15.  Noise multiplies by ``(1 - eps) ** (2 S / g)`` per
    gate, matching :func:`step_all_to_all`.
    """
    if not 1 <= initial_size <= n:
        raise ValueError("initial_size must lie in [1, n]")
    g = max(1, n // 2) if gates_per_unit_time is None else gates_per_unit_time
    s = np.arange(n + 1, dtype=float)
    both = s * (s - 1) / (n * (n - 1))
    one = 2 * s * (n - s) / (n * (n - 1))
    down = both * 6 / 15
    up = one * 9 / 15
    stay = 1.0 - down - up
    damp = np.exp(2.0 * math.log1p(-epsilon) * s / g) if epsilon > 0 else np.ones(n + 1)
    p = np.zeros(n + 1)
    p[initial_size] = 1.0
    log_z = 0.0
    rows = []

    def record():
        mean = float(p @ s)
        rows.append((mean, float(p @ (s - mean) ** 2), log_z))

    record()
    for _ in range(units):
        for _ in range(g):
            q = stay * p
            q[1:] += up[:-1] * p[:-1]
            q[:-1] += down[1:] * p[1:]
            p = q * damp
        z = p.sum()
        log_z += math.log(z)
        p /= z
        record()
    mean, var, log_echo = (np.array(col) for col in zip(*rows))
    return GrowthCurve(np.arange(units + 1, dtype=float), mean, var, np.exp(log_echo),
                       np.zeros(units + 1), log_echo, np.full(units + 1, np.inf))
