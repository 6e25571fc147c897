"""Affine-invariant geometry on symmetric positive definite matrices.

Log/exp maps, tangent projection, an eigen-based translation/rotation split
and a proportional-distortion (relaxability) test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import logm

from .core import RandomSource, distortion

SYMMETRY_TOL = 1e-10
EIGEN_FLOOR = 1e-12
MAX_SIZE = 16


class DomainError(ValueError):
    """Input is outside the domain of the map (not SPD, |z| >= 1, ...)."""


class DegenerateFrameError(ValueError):
    """Repeated eigenvalues leave the eigenvector frame undetermined."""

    def __init__(self, message: str, translation: np.ndarray | None = None):
        super().__init__(message)
        self.translation = translation


class InconsistencyError(ValueError):
    """A pair with zero distortion maps to a pair with nonzero distortion."""


@dataclass(frozen=True)
class SPDMatrix:
    values: np.ndarray

    def __post_init__(self):
        M = np.array(self.values, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] > MAX_SIZE:
            raise DomainError(f"expected a square matrix of size <= {MAX_SIZE}")
        if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.abs(M).max()):
            raise DomainError("matrix is not symmetric")
        M = 0.5 * (M + M.T)
        if np.linalg.eigvalsh(M).min() <= 0:
            raise DomainError("matrix is not positive definite")
        M.setflags(write=False)
        object.__setattr__(self, "values", M)

    @property
    def size(self) -> int:
        return self.values.shape[0]


def _spd(x) -> np.ndarray:
    return x.values if isinstance(x, SPDMatrix) else SPDMatrix(x).values


def _eig_fn(M: np.ndarray, fn) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V * fn(w)) @ V.T


def sqrtm_spd(M) -> np.ndarray:
    return _eig_fn(_spd(M), np.sqrt)


def invsqrtm_spd(M) -> np.ndarray:
    return _eig_fn(_spd(M), lambda w: 1.0 / np.sqrt(w))


def logm_spd(M: np.ndarray) -> np.ndarray:
    """Matrix log of a symmetric matrix with eigenvalues floored at 1e-12."""
    S = 0.5 * (M + M.T)
    return _eig_fn(S, lambda w: np.log(np.maximum(w, EIGEN_FLOOR)))


def expm_sym(M: np.ndarray) -> np.ndarray:
    S = 0.5 * (M + M.T)
    return _eig_fn(S, np.exp)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def riemannian_log(base, point) -> np.ndarray:
    """Tangent vector at ``base`` pointing to ``point``:
    base^{1/2} log(base^{-1/2} point base^{-1/2}) base^{1/2}."""
    B, P = _spd(base), _spd(point)
    if B.shape != P.shape:
        raise DomainError("size mismatch")
    w, V = np.linalg.eigh(B)
    root = (V * np.sqrt(w)) @ V.T
    inv_root = (V / np.sqrt(w)) @ V.T
    whitened = _sym(inv_root @ P @ inv_root)
    return _sym(root @ logm_spd(whitened) @ root)


def riemannian_exp(base, tangent) -> np.ndarray:
    """Inverse of :func:`riemannian_log` at ``base``."""
    B = _spd(base)
    T = np.asarray(tangent, dtype=float)
    w, V = np.linalg.eigh(B)
    root = (V * np.sqrt(w)) @ V.T
    inv_root = (V / np.sqrt(w)) @ V.T
    return _sym(root @ expm_sym(inv_root @ T @ inv_root) @ root)


def tangent_project(ambient_grad, base=None) -> np.ndarray:
    """Orthogonal projection onto symmetric matrices, the SPD tangent space."""
    G = np.asarray(ambient_grad, dtype=float)
    if base is not None and _spd(base).shape != G.shape:
        raise DomainError("size mismatch")
    return _sym(G)


def graph_spd(laplacian: np.ndarray, shift: float = 0.1) -> SPDMatrix:
    """SPD matrix of a graph: Laplacian + shift * I."""
    L = np.asarray(laplacian, dtype=float)
    return SPDMatrix(L + shift * np.eye(L.shape[0]))


# --------------------------------------------------------------------------
# translation / rotation split


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    out = np.mod(np.asarray(a, dtype=float) + math.pi, 2 * math.pi) - math.pi
    out = np.where(out == -math.pi, math.pi, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PoseDecomposition:
    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float)
        r = np.array(self.rotation, dtype=float)
        if np.any(r <= -math.pi) or np.any(r > math.pi):
            raise ValueError("rotation angles must lie in (-pi, pi]")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)


def decompose(sigma) -> PoseDecomposition:
    """Split an SPD matrix into log-eigenvalues and eigenframe rotation angles.

    Eigenvalues are sorted in descending order; each eigenvector is signed so
    its largest-magnitude entry is positive, and if the resulting frame is a
    reflection the last vector is flipped. The rotation vector holds the
    strictly-lower entries (row-major) of the real matrix logarithm of that
    frame, wrapped into (-pi, pi]; for 2x2 this is the rotation angle.
    """
    S = _spd(sigma)
    w, V = np.linalg.eigh(S)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    translation = np.log(w)
    n = S.shape[0]
    if n == 1:
        return PoseDecomposition(translation, np.zeros(0))
    gaps = -np.diff(w)
    if np.any(gaps <= SYMMETRY_TOL * max(1.0, w[0])):
        raise DegenerateFrameError("repeated eigenvalues: frame is not unique", translation)
    for j in range(n):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] < 0:
            V[:, j] = -V[:, j]
    if np.linalg.det(V) < 0:
        V[:, -1] = -V[:, -1]
    L = np.real(logm(V))
    rows, cols = np.tril_indices(n, -1)
    return PoseDecomposition(translation, wrap_angle(L[rows, cols]))


def pose_with_brownian(
    mean_pose: PoseDecomposition,
    scales: tuple[float, float],
    rng: RandomSource,
    offset: tuple[float, float] = (0.0, 0.0),
) -> PoseDecomposition:
    """Mean pose plus Gaussian components (translation scale, rotation scale).

    ``offset`` adds a deterministic shift to each part before wrapping.
    """
    s_t, s_r = scales
    if s_t < 0 or s_r < 0:
        raise ValueError("scales must be nonnegative")
    t = mean_pose.translation + offset[0] + rng.normal(mean_pose.translation.shape, scale=1.0) * s_t
    r = mean_pose.rotation + offset[1] + rng.normal(mean_pose.rotation.shape, scale=1.0) * s_r
    return PoseDecomposition(t, wrap_angle(r) if r.size else r)


# --------------------------------------------------------------------------
# relaxability


def _ratios(pairs, f) -> list[float]:
    out = []
    for a, b in pairs:
        base = distortion(np.atleast_1d(a), np.atleast_1d(b))
        image = distortion(np.atleast_1d(f(a)), np.atleast_1d(f(b)))
        if base == 0:
            if image != 0:
                raise InconsistencyError("zero-distortion pair has a distorted image")
            continue
        out.append(image / base)
    return out


def _proportional(ratios: list[float], tol: float) -> float | None:
    if len(ratios) < 2:
        raise ValueError("need at least two pairs with nonzero distortion")
    r = np.asarray(ratios)
    mean = float(r.mean())
    if mean == 0:
        return 0.0 if np.all(r == 0) else None
    spread = float((r.max() - r.min()) / abs(mean))
    return mean if spread <= tol else None


def relaxability_check(
    pairs_T: Sequence[tuple],
    pairs_R: Sequence[tuple],
    f: Callable,
    tol: float = 1e-9,
) -> tuple[float, float] | None:
    """Proportional-distortion test for a map ``f`` on translation and rotation pairs.

    Returns ``(eta_T, eta_R)``, the mean ratios D(f(a), f(b)) / D(a, b), when
    the relative spread (max - min) / mean of each list's ratios is at most
    ``tol``; otherwise ``None``.
    """
    eta_t = _proportional(_ratios(pairs_T, f), tol)
    eta_r = _proportional(_ratios(pairs_R, f), tol)
    if eta_t is None or eta_r is None:
        return None
    return eta_t, eta_r
