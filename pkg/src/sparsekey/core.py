"""Shared data model: data batches, dictionaries, sparse codes, thresholds,
the distortion function and the seeded random source.

All value types are frozen dataclasses wrapping read-only numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Threshold value meaning "constraint disabled" (the unconstrained runs).
INF = math.inf

UNIT_NORM_TOL = 1e-9


class DimensionError(ValueError):
    """Array shapes are incompatible."""


class DataError(ValueError):
    """Input data violates a value invariant (non-finite entries, too short, ...)."""


class BudgetError(ValueError):
    """A sparsity or atom budget cannot be honoured."""


class CapacityError(ValueError):
    """A brute-force routine was asked to enumerate beyond its size bound."""


class ConfigError(ValueError):
    """Configuration is inconsistent."""


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DataBatch:
    """Observed data, one sample per column (n rows x N columns)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.values, dtype=float))
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"data must be a non-empty matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("data contains non-finite entries")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dictionary:
    """Unit-norm atoms stored as columns of an n x m matrix."""

    atoms: np.ndarray
    atom_budget: int

    def __post_init__(self):
        arr = np.asarray(self.atoms, dtype=float)
        if arr.ndim != 2:
            raise DimensionError(f"atoms must be a matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("dictionary contains non-finite entries")
        if int(self.atom_budget) < 1:
            raise BudgetError("atom budget must be a positive integer")
        if arr.shape[1] > self.atom_budget:
            raise BudgetError(f"{arr.shape[1]} atoms exceed the atom budget {self.atom_budget}")
        norms = np.linalg.norm(arr, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise DataError("dictionary columns must have unit Euclidean norm")
        object.__setattr__(self, "atoms", _frozen(arr))
        object.__setattr__(self, "atom_budget", int(self.atom_budget))

    @classmethod
    def from_matrix(cls, matrix, atom_budget: int | None = None) -> "Dictionary":
        """Normalise the columns of ``matrix`` and wrap them."""
        arr = np.asarray(matrix, dtype=float)
        norms = np.linalg.norm(arr, axis=0)
        if np.any(norms == 0):
            raise DataError("cannot normalise a zero column")
        budget = arr.shape[1] if atom_budget is None else atom_budget
        return cls(arr / norms, budget)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def m(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    """Coefficient matrix (m x N) with at most ``sparsity_budget`` nonzeros per column."""

    coefficients: np.ndarray
    sparsity_budget: int

    def __post_init__(self):
        arr = np.asarray(self.coefficients, dtype=float)
        if arr.ndim != 2:
            raise DimensionError(f"coefficients must be a matrix, got shape {arr.shape}")
        if int(self.sparsity_budget) < 1:
            raise BudgetError("sparsity budget must be a positive integer")
        counts = np.count_nonzero(arr, axis=0)
        if counts.size and counts.max() > self.sparsity_budget:
            raise BudgetError(
                f"a column holds {counts.max()} nonzeros, budget is {self.sparsity_budget}"
            )
        object.__setattr__(self, "coefficients", _frozen(arr))
        object.__setattr__(self, "sparsity_budget", int(self.sparsity_budget))

    @property
    def support(self) -> np.ndarray:
        return self.coefficients != 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.coefficients.shape

    def with_values(self, values) -> "SparseCode":
        return SparseCode(values, self.sparsity_budget)


@dataclass(frozen=True)
class SideInfo:
    """Side information with the same shape as the code it constrains."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float)
        if arr.ndim != 2:
            raise DimensionError("side information must be a matrix")
        object.__setattr__(self, "values", _frozen(arr))

    def check_against(self, code: SparseCode) -> None:
        if self.values.shape != code.shape:
            raise DimensionError(
                f"side information shape {self.values.shape} != code shape {code.shape}"
            )


# lambda index -> kind
_LAMBDA_KINDS = (
    "int", "int",                 # atom budget, sparsity budget
    "real", "real",               # side-info and perturbation distortion caps
    "prob", "prob", "prob", "prob",
    "real",                       # key-rate threshold
    "prob",
)

DEFAULT_LAMBDA = (12, 2, 0.05, 0.05, 0.5, 0.25, 0.15, 0.8, 1.0, 0.5)


@dataclass(frozen=True)
class Thresholds:
    """The ten thresholds lambda0..lambda9 plus the small tolerances, drift and slack."""

    lam: tuple = DEFAULT_LAMBDA
    nu1: float = 1e-3
    nu2: float = 1e-3
    gamma0: float = 0.5
    alpha: float = 0.1

    def __post_init__(self):
        if len(self.lam) != 10:
            raise ConfigError(f"expected 10 lambda thresholds, got {len(self.lam)}")
        object.__setattr__(self, "lam", tuple(self.lam))

    def __getitem__(self, i: int):
        return self.lam[i]

    def replace(self, **changes) -> "Thresholds":
        """Copy with keyword changes; ``lambdaK=value`` updates a single threshold."""
        lam = list(self.lam)
        rest = {}
        for key, value in changes.items():
            if key.startswith("lambda") and key[6:].isdigit():
                lam[int(key[6:])] = value
            else:
                rest[key] = value
        return Thresholds(tuple(lam), **{**self._scalars(), **rest})

    def _scalars(self) -> dict:
        return {"nu1": self.nu1, "nu2": self.nu2, "gamma0": self.gamma0, "alpha": self.alpha}


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def validate_config(thresholds: Thresholds) -> list[Violation]:
    """Return every invariant violation of ``thresholds``; an empty list means ok."""
    out: list[Violation] = []
    for i, (value, kind) in enumerate(zip(thresholds.lam, _LAMBDA_KINDS)):
        name = f"lambda{i}"
        if value is None or (isinstance(value, float) and math.isnan(value)):
            out.append(Violation(name, f"λ{i} is undefined"))
            continue
        if kind == "int":
            if int(value) != value or value < 1 or math.isinf(value):
                out.append(Violation(name, f"λ{i} must be a positive integer"))
        elif kind == "prob":
            if not 0.0 <= value <= 1.0:
                out.append(Violation(name, f"λ{i} ∉ [0,1]"))
        elif value < 0:
            out.append(Violation(name, f"λ{i} must be nonnegative"))
    for name in ("nu1", "nu2"):
        value = getattr(thresholds, name)
        if not value > 0:
            out.append(Violation(name, f"{name} must be positive"))
    if not thresholds.gamma0 > 0:
        out.append(Violation("gamma0", "gamma0 must be positive"))
    if not 0.0 < thresholds.alpha < 1.0:
        out.append(Violation("alpha", "alpha ∉ (0,1)"))
    return out


def distortion(a, b, scale: float = 1.0) -> float:
    """Mean squared difference ``scale * mean((a - b)**2)``.

    Accepts arrays or any of the model types carrying a matrix.
    """
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    diff = a - b
    return float(scale * np.mean(diff * diff))


def _as_array(x) -> np.ndarray:
    for attr in ("coefficients", "values", "atoms"):
        if hasattr(x, attr):
            return np.asarray(getattr(x, attr), dtype=float)
    return np.asarray(x, dtype=float)


@dataclass
class RandomSource:
    """Seeded stream of random draws backed by a counter-based generator.

    A ``(seed, stream_id)`` pair keys a Philox generator, so two sources with
    the same pair produce the same sequence on every platform, and distinct
    stream ids give independent streams. Draws advance the source; to hand a
    stream to someone else, derive a new one with :meth:`spawn`.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(self.stream_id) & 0xFFFFFFFFFFFFFFFF

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
            self._gen = np.random.Generator(bitgen)
        return self._gen

    def spawn(self, stream_id: int) -> "RandomSource":
        """Fresh source on the same seed with another stream id."""
        return RandomSource(self.seed, stream_id)

    def child(self, *path: int) -> "RandomSource":
        """Derive a stream id from this stream and an index path (order-sensitive)."""
        sid = self.stream_id
        for p in path:
            sid = _mix64(sid ^ _mix64(int(p) + 0x9E3779B97F4A7C15))
        return RandomSource(self.seed, sid)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self.generator.normal(0.0, scale, size)

    def uniform(self, size=None) -> np.ndarray:
        return self.generator.random(size)

    def exponential(self, size=None) -> np.ndarray:
        return self.generator.standard_exponential(size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)


def _mix64(x: int) -> int:
    # splitmix64 finaliser
    x &= 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return x ^ (x >> 31)


def column_support_counts(code: SparseCode | np.ndarray) -> np.ndarray:
    return np.count_nonzero(_as_array(code), axis=0)


def as_matrix(x: Sequence | np.ndarray) -> np.ndarray:
    return _as_array(x)
