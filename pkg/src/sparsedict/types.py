"""Value types shared across the toolkit.

Arrays handed to these types are copied to float64 and frozen
(``writeable=False``) so instances can be shared freely.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

BALL_TOL = 1e-12
MAX_ITERS_CAP = 5_000_000


class DimensionError(ValueError):
    """Array shapes do not agree."""


class FormatError(ValueError):
    """A serialized artifact or image stream could not be decoded."""


class SolverError(RuntimeError):
    """A solver produced non-finite values or failed mid-run."""

    def __init__(self, message, index=None):
        if index is not None:
            message = f"{message} (at index {index})"
        super().__init__(message)
        self.index = index


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GrayImage:
    """Grey-level raster on the [0, 255] scale, not quantized.

    ``pixels`` is stored as an ``(height, width)`` array.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = _frozen(self.pixels, 2)
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"empty image of shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite pixels")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    @classmethod
    def from_unit(cls, arr):
        """Build from an array on the internal [0, 1] scale."""
        return cls(np.asarray(arr, dtype=np.float64) * 255.0)

    def to_unit(self):
        return self.pixels / 255.0


@dataclass(frozen=True)
class Dictionary:
    """An ``m x n`` matrix whose columns are atoms constrained to the unit ball."""

    atoms: np.ndarray
    allow_undercomplete: bool = False

    def __post_init__(self):
        D = _frozen(self.atoms, 2)
        if not np.all(np.isfinite(D)):
            raise ValueError("dictionary contains non-finite entries")
        m, n = D.shape
        if m < 1 or n < 1:
            raise DimensionError(f"empty dictionary of shape {D.shape}")
        if n < m and not self.allow_undercomplete:
            raise DimensionError(
                f"dictionary has fewer atoms ({n}) than dimensions ({m}); "
                "pass allow_undercomplete=True to waive"
            )
        object.__setattr__(self, "atoms", D)

    @property
    def atom_dim(self):
        return self.atoms.shape[0]

    @property
    def n_atoms(self):
        return self.atoms.shape[1]

    @property
    def shape(self):
        return self.atoms.shape


@dataclass(frozen=True)
class LearnAccumulators:
    """Running sums ``A = sum x x^T`` (n x n) and ``B = sum p x^T`` (m x n)."""

    A: np.ndarray
    B: np.ndarray
    k: int = 0

    def __post_init__(self):
        A = _frozen(self.A, 2)
        B = _frozen(self.B, 2)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[1] != n:
            raise DimensionError(f"accumulator shapes A{A.shape}, B{B.shape} disagree")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if not np.allclose(A, A.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(A).max(initial=0.0))):
            raise ValueError("A is not symmetric")
        if self.k == 0 and (np.any(A) or np.any(B)):
            raise ValueError("k = 0 requires A = 0 and B = 0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def zeros(cls, m, n):
        return cls(np.zeros((n, n)), np.zeros((m, n)), 0)

    def add(self, p, x):
        """Return the accumulators after observing patch ``p`` with code ``x``."""
        p = np.asarray(p, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return LearnAccumulators(self.A + np.outer(x, x), self.B + np.outer(p, x), self.k + 1)


class SolverId(str, Enum):
    ISTA = "ista"
    FISTA = "fista"
    FPC_BB = "fpcbb"
    TWIST = "twist"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown solver {value!r}; choose from {[m.value for m in cls]}")


# FPC-BB and TwIST run at a looser tolerance than the slower reference solvers
DEFAULT_EPS = {
    SolverId.ISTA: 1e-7,
    SolverId.FISTA: 1e-7,
    SolverId.FPC_BB: 1e-5,
    SolverId.TWIST: 1e-5,
}


@dataclass(frozen=True)
class SolverSettings:
    mu: float
    eps_rel: float | None = None
    max_iters: int = MAX_ITERS_CAP
    solver_id: SolverId = SolverId.FPC_BB
    record_objective: bool = False

    def __post_init__(self):
        sid = SolverId.parse(self.solver_id)
        object.__setattr__(self, "solver_id", sid)
        if self.eps_rel is None:
            object.__setattr__(self, "eps_rel", DEFAULT_EPS[sid])
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.eps_rel > 0:
            raise ValueError(f"eps_rel must be positive, got {self.eps_rel}")
        if not 1 <= self.max_iters <= MAX_ITERS_CAP:
            raise ValueError(f"max_iters must lie in [1, {MAX_ITERS_CAP}]")


@dataclass
class ValidationResult:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_dictionary(D, shape=None):
    """Report every atom whose norm exceeds the unit ball by more than ``BALL_TOL``.

    ``shape`` optionally gives the declared ``(m, n)``; a mismatch with the
    stored atoms raises ``DimensionError``.
    """
    atoms = D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)
    if shape is not None and tuple(shape) != atoms.shape:
        raise DimensionError(f"declared shape {tuple(shape)} but atoms are {atoms.shape}")
    norms = np.linalg.norm(atoms, axis=0)
    return ValidationResult([int(j) for j in np.flatnonzero(norms > 1.0 + BALL_TOL)])
