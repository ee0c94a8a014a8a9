"""Bit-packed n-qubit Pauli strings.

Each string is stored as a pair of Python integers ``(x_bits, z_bits)``; site
``i`` holds I/X/Z/Y for ``(x_i, z_i) = (0,0)/(1,0)/(0,1)/(1,1)``.  Python ints
are arbitrary width, so the same code path covers n = 1 and n = 1536.

The operator attached to a bit pair is ``i^(x.z) X^x Z^z``, which makes the
``(1, 1)`` site equal to ``Y = iXZ``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "PauliString",
    "PhasedString",
    "size",
    "multiply",
    "commutes",
    "size_superop_eigencheck",
    "random_string",
    "single_site_paulis",
    "all_strings",
    "to_matrix",
]

_LETTERS = "IXZY"  # indexed by x + 2*z
_CODES = {"I": (0, 0), "X": (1, 0), "Z": (0, 1), "Y": (1, 1)}
_PHASES = (1, 1j, -1, -1j)


@dataclass(frozen=True)
class PauliString:
    n: int
    x_bits: int = 0
    z_bits: int = 0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("qubit count must be non-negative")
        limit = 1 << self.n
        if not (0 <= self.x_bits < limit and 0 <= self.z_bits < limit):
            raise ValueError(f"bitmask exceeds {self.n} sites")

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls(n, 0, 0)

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """Parse a label like ``"YIZX"`` (site 0 leftmost)."""
        x = z = 0
        for i, ch in enumerate(label.upper()):
            try:
                xi, zi = _CODES[ch]
            except KeyError:
                raise ValueError(f"invalid Pauli letter {ch!r} in {label!r}") from None
            x |= xi << i
            z |= zi << i
        return cls(len(label), x, z)

    @classmethod
    def single(cls, n: int, site: int, letter: str) -> "PauliString":
        if not 0 <= site < n:
            raise ValueError(f"site {site} outside 0..{n - 1}")
        xi, zi = _CODES[letter.upper()]
        return cls(n, xi << site, zi << site)

    @classmethod
    def from_index(cls, index: int, n: int) -> "PauliString":
        """Inverse of :attr:`index` (``x_bits | z_bits << n``)."""
        mask = (1 << n) - 1
        return cls(n, index & mask, index >> n)

    @property
    def index(self) -> int:
        return self.x_bits | (self.z_bits << self.n)

    @property
    def support(self) -> int:
        return self.x_bits | self.z_bits

    @property
    def size(self) -> int:
        return self.support.bit_count()

    def letter(self, site: int) -> str:
        return _LETTERS[((self.x_bits >> site) & 1) | (((self.z_bits >> site) & 1) << 1)]

    def __str__(self) -> str:
        return "".join(self.letter(i) for i in range(self.n))

    def __repr__(self) -> str:
        return f"PauliString({str(self)!r})"

    def __mul__(self, other: "PauliString") -> "PhasedString":
        return multiply(self, other)


@dataclass(frozen=True)
class PhasedString:
    """A Pauli string times ``i**k``."""

    string: PauliString
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "k", self.k % 4)

    @property
    def phase(self) -> complex:
        return _PHASES[self.k]

    def __str__(self) -> str:
        return f"{('+', '+i', '-', '-i')[self.k]}{self.string}"


def size(p: PauliString) -> int:
    """Number of non-identity tensor factors."""
    return p.size


def _check_same_n(a: PauliString, b: PauliString):
    if a.n != b.n:
        raise ValueError(f"qubit count mismatch: {a.n} vs {b.n}")


def multiply(a: PauliString, b: PauliString) -> PhasedString:
    _check_same_n(a, b)
    x = a.x_bits ^ b.x_bits
    z = a.z_bits ^ b.z_bits
    k = (
        (a.x_bits & a.z_bits).bit_count()
        + (b.x_bits & b.z_bits).bit_count()
        - (x & z).bit_count()
        + 2 * (a.z_bits & b.x_bits).bit_count()
    )
    return PhasedString(PauliString(a.n, x, z), k)


def commutes(a: PauliString, b: PauliString) -> bool:
    _check_same_n(a, b)
    return ((a.x_bits & b.z_bits).bit_count() + (a.z_bits & b.x_bits).bit_count()) % 2 == 0


def single_site_paulis(n: int) -> Iterator[PauliString]:
    """All 3n non-identity single-site Paulis, site-major."""
    for i in range(n):
        for letter in "XYZ":
            yield PauliString.single(n, i, letter)


def size_superop_eigencheck(p: PauliString) -> int:
    """Eigenvalue of the size superoperator on ``p``.

    ``-sum_P (P p P - p) / 4`` over all single-site Paulis; identity terms
    vanish and each anticommuting P contributes ``2/4``.
    """
    twice = sum(2 for q in single_site_paulis(p.n) if not commutes(p, q))
    if twice % 4:
        raise ArithmeticError(f"non-integer size eigenvalue for {p}")
    return twice // 4


def random_string(n: int, rng: np.random.Generator, non_identity: bool = False) -> PauliString:
    """Uniform over all ``4**n`` strings, or over the non-identity ones."""
    if n < 1:
        raise ValueError("n must be >= 1")
    while True:
        x = int.from_bytes(rng.bytes((n + 7) // 8), "little") & ((1 << n) - 1)
        z = int.from_bytes(rng.bytes((n + 7) // 8), "little") & ((1 << n) - 1)
        if not non_identity or (x | z):
            return PauliString(n, x, z)


def all_strings(n: int) -> Iterator[PauliString]:
    for idx in range(4**n):
        yield PauliString.from_index(idx, n)


_SINGLE = {
    (0, 0): np.eye(2, dtype=complex),
    (1, 0): np.array([[0, 1], [1, 0]], dtype=complex),
    (0, 1): np.array([[1, 0], [0, -1]], dtype=complex),
    (1, 1): np.array([[0, -1j], [1j, 0]], dtype=complex),
}


def to_matrix(p: PauliString) -> np.ndarray:
    """Dense ``2**n x 2**n`` matrix; site 0 is the most significant tensor factor."""
    out = np.ones((1, 1), dtype=complex)
    for i in range(p.n):
        out = np.kron(out, _SINGLE[((p.x_bits >> i) & 1, (p.z_bits >> i) & 1)])
    return out
