"""Positive harmonic functions on the unit disk and positive-definite kernels.

Poisson integrals of discrete circle measures, the Herglotz kernel, a polar
Laplacian residual for gridded fields, least-squares measure fitting and a
Gram-matrix positive-definiteness check for stationary kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .spd import DomainError

MAX_RHO = 0.95
MAX_ATOMS = 128
MIN_RADIAL, MIN_ANGULAR = 5, 8


@dataclass(frozen=True)
class CircleMeasure:
    """Discrete probability measure: ``weights[k]`` sits at angle ``angles[k]``."""

    angles: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.mod(np.array(self.angles, dtype=float).ravel(), 2 * math.pi)
        w = np.array(self.weights, dtype=float).ravel()
        if a.shape != w.shape or a.size == 0:
            raise ValueError("angles and weights must be nonempty and equally long")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        a.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "angles", a)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n_atoms: int) -> "CircleMeasure":
        return cls(equispaced_angles(n_atoms), np.full(n_atoms, 1.0 / n_atoms))

    @classmethod
    def random(cls, rng, max_atoms: int = 8) -> "CircleMeasure":
        """Random atom count in 1..max_atoms, uniform angles, normalised exponential weights."""
        n = int(rng.choice(max_atoms, 1)[0]) + 1
        angles = 2 * math.pi * rng.uniform(n)
        w = rng.exponential(n)
        return cls(angles, w / w.sum())


def equispaced_angles(n: int) -> np.ndarray:
    return 2 * math.pi * np.arange(n) / n


@dataclass(frozen=True)
class DiskField:
    """Values on a polar grid: ``values[i, j]`` at radius ``rho[i]``, angle ``theta[j]``.

    Radii are uniform from 0 to ``rho_max``; angles are ``2 pi j / n_theta``.
    """

    values: np.ndarray
    rho_max: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("field values must be a matrix")
        if not 0 < self.rho_max <= MAX_RHO:
            raise DomainError(f"rho_max must lie in (0, {MAX_RHO}]")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def rho(self) -> np.ndarray:
        return np.linspace(0.0, self.rho_max, self.values.shape[0])

    @property
    def theta(self) -> np.ndarray:
        return equispaced_angles(self.values.shape[1])

    @classmethod
    def from_function(cls, fn: Callable, n_rho: int, n_theta: int, rho_max: float) -> "DiskField":
        """Sample ``fn(rho, theta)`` (broadcasting) on the grid."""
        rho = np.linspace(0.0, rho_max, n_rho)[:, None]
        theta = equispaced_angles(n_theta)[None, :]
        return cls(np.broadcast_to(fn(rho, theta), (n_rho, n_theta)), rho_max)

    @classmethod
    def poisson(cls, mu: CircleMeasure, n_rho: int, n_theta: int, rho_max: float) -> "DiskField":
        return cls.from_function(lambda r, t: poisson_integral(mu, r, t), n_rho, n_theta, rho_max)


def poisson_kernel(rho, phi):
    """(1 - rho^2) / (1 - 2 rho cos(phi) + rho^2)."""
    rho = np.asarray(rho, dtype=float)
    return (1 - rho**2) / (1 - 2 * rho * np.cos(phi) + rho**2)


def poisson_integral(mu: CircleMeasure, rho, theta):
    """Poisson integral of ``mu`` at polar point(s) ``(rho, theta)``; broadcasts."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(rho < 0) or np.any(rho >= 1):
        raise DomainError("rho must lie in [0, 1)")
    phi = theta[..., None] - mu.angles
    out = np.sum(mu.weights * poisson_kernel(rho[..., None], phi), axis=-1)
    return float(out) if out.ndim == 0 else out


def herglotz_kernel(z, theta_prime):
    """(1 + z e^{-i theta'}) / (1 - z e^{-i theta'}) for |z| < 1."""
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) >= 1):
        raise DomainError("|z| must be < 1")
    u = z * np.exp(-1j * np.asarray(theta_prime, dtype=float))
    out = (1 + u) / (1 - u)
    return complex(out) if out.ndim == 0 else out


def herglotz_half_angle(rho, phi):
    """Herglotz kernel at ``z = rho e^{i theta}`` written with half angles of ``phi = theta - theta'``.

    Numerator and denominator are multiplied by e^{-i phi/2}; at ``rho = 1``
    the expression reduces to ``i cot(phi / 2)``.
    """
    c, s = np.cos(np.asarray(phi) / 2), np.sin(np.asarray(phi) / 2)
    rho = np.asarray(rho, dtype=float)
    num = (1 + rho) * c - 1j * (1 - rho) * s
    den = (1 - rho) * c - 1j * (1 + rho) * s
    return num / den


# --------------------------------------------------------------------------
# discrete Laplacian


def _fd_weights(offsets: Sequence[int], deriv: int) -> np.ndarray:
    """Finite-difference weights on integer ``offsets`` (unit spacing)."""
    x = np.asarray(offsets, dtype=float)
    V = np.vander(x, increasing=True).T
    rhs = np.zeros(len(x))
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(V, rhs)


_CENTRAL = (-2, -1, 0, 1, 2)
_ONE_SIDED = (-4, -3, -2, -1, 0, 1)


def polar_laplacian(field: DiskField) -> np.ndarray:
    """Laplacian estimate at the centre and at every ring except the outermost.

    Angular derivatives are spectral (FFT). Radial derivatives use 4th-order
    stencils: central ones, with ghost rings reflected through the origin
    (``F(-r, t) = F(r, t + pi)``), and a one-sided stencil on the ring next to
    ``rho_max``. The centre value uses the ring means at ``h`` and ``2h``.
    Returns an ``(n_rho - 1, n_theta)`` array; row 0 repeats the centre value.
    """
    F = field.values
    nr, nt = F.shape
    if nr < MIN_RADIAL or nt < MIN_ANGULAR:
        raise ValueError(f"grid must be at least {MIN_RADIAL}x{MIN_ANGULAR}")
    if nt % 2:
        raise ValueError("angular count must be even for the reflection through the origin")
    h = field.rho_max / (nr - 1)
    rho = field.rho

    modes = np.fft.fftfreq(nt, 1.0 / nt)
    # differences from the ring mean / centre row keep constants exact
    dev = F - F.mean(axis=1, keepdims=True)
    f_tt = np.real(np.fft.ifft(-(modes**2) * np.fft.fft(dev, axis=1), axis=1))

    half = nt // 2
    ghost = np.roll(F[1:3][::-1], -half, axis=1)  # rows at -2h, -h
    G = np.vstack([ghost, F])  # G[i + 2] = F[i]

    out = np.empty((nr - 1, nt))
    w2c, w1c = _fd_weights(_CENTRAL, 2), _fd_weights(_CENTRAL, 1)
    w2o, w1o = _fd_weights(_ONE_SIDED, 2), _fd_weights(_ONE_SIDED, 1)
    for i in range(1, nr - 1):
        if i + 2 <= nr - 1:
            rows = G[[i + 2 + o for o in _CENTRAL]] - F[i]
            f_rr, f_r = w2c @ rows, w1c @ rows
        else:
            rows = F[[i + o for o in _ONE_SIDED]] - F[i]
            f_rr, f_r = w2o @ rows, w1o @ rows
        out[i] = f_rr / h**2 + f_r / (h * rho[i]) + f_tt[i] / rho[i] ** 2
    m1, m2 = F[1].mean(), F[2].mean()
    c = F[0].mean()
    out[0] = (16 * (m1 - c) - (m2 - c)) / (3 * h**2)
    return out


def harmonic_residual(field: DiskField) -> float:
    """Largest absolute Laplacian estimate over the non-boundary nodes."""
    return float(np.max(np.abs(polar_laplacian(field))))


def second_order_bound(field: DiskField, factor: float = 10.0) -> float:
    """``factor * h^2`` with ``h`` the radial spacing."""
    h = field.rho_max / (field.values.shape[0] - 1)
    return factor * h * h


def positivity_check(field: DiskField) -> bool:
    """True iff every grid value is strictly positive."""
    return bool(np.all(field.values > 0))


# --------------------------------------------------------------------------
# measure fitting


@dataclass(frozen=True)
class MeasureFit:
    measure: CircleMeasure
    residual: float
    history: tuple[float, ...]


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    k = idx[u - css / idx > 0][-1]
    return np.maximum(v - css[k - 1] / k, 0.0)


def fit_measure(
    boundary_samples: Sequence[tuple[float, float]],
    n_atoms: int,
    iters: int,
    rho: float = 0.9,
) -> MeasureFit:
    """Least-squares weights on ``n_atoms`` equispaced atoms matching samples at radius ``rho``.

    Minimises the mean squared gap between the Poisson integral and the
    sampled values by projected gradient on the simplex, starting from
    uniform weights with step ``1 / L``. The residual is non-increasing.
    """
    samples = np.asarray(boundary_samples, dtype=float).reshape(-1, 2)
    if samples.shape[0] == 0:
        raise ValueError("no samples")
    if not 1 <= n_atoms <= MAX_ATOMS:
        raise ValueError(f"n_atoms must lie in 1..{MAX_ATOMS}")
    if not 0 <= rho <= MAX_RHO:
        raise DomainError(f"rho must lie in [0, {MAX_RHO}]")
    theta, y = samples[:, 0], samples[:, 1]
    atoms = equispaced_angles(n_atoms)
    A = poisson_kernel(rho, theta[:, None] - atoms[None, :])
    n = len(y)
    lip = 2.0 * np.linalg.norm(A, 2) ** 2 / n
    w = np.full(n_atoms, 1.0 / n_atoms)

    def resid(w):
        r = A @ w - y
        return float(r @ r / n)

    history = [resid(w)]
    for _ in range(iters):
        grad = 2.0 * A.T @ (A @ w - y) / n
        w_new = project_simplex(w - grad / lip)
        val = resid(w_new)
        if val > history[-1]:
            break
        w = w_new
        history.append(val)
    w = w / w.sum()
    return MeasureFit(CircleMeasure(atoms, w), history[-1], tuple(history))


# --------------------------------------------------------------------------
# positive-definite kernels


@dataclass(frozen=True)
class BochnerResult:
    positive_definite: bool
    min_eigenvalue: float


def bochner_check(kernel: Callable, probe_points: Sequence[float], tol: float = 1e-10) -> BochnerResult:
    """Gram matrix K[i, j] = kernel(x_i - x_j); PSD iff min eigenvalue >= -tol."""
    x = np.asarray(probe_points, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two probe points")
    diff = x[:, None] - x[None, :]
    K = np.asarray(np.vectorize(kernel, otypes=[float])(diff), dtype=float)
    if not np.all(np.isfinite(K)):
        raise DomainError("kernel returned non-finite values")
    lam = float(np.linalg.eigvalsh(0.5 * (K + K.T)).min())
    return BochnerResult(lam >= -tol, lam)
