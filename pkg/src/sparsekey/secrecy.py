"""Secret-key rate from overlapping sparsity patterns, chance-constraint
estimators with Hoeffding radii, outage and an empirical alpha-key verifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CapacityError, RandomSource
from .graphon import entropy, mutual_information


@dataclass(frozen=True)
class SparsityPattern:
    indices: tuple[int, ...]
    universe: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValueError("pattern indices must be distinct")
        if idx and (idx[0] < 0 or idx[-1] >= self.universe):
            raise ValueError("pattern index outside the universe")
        object.__setattr__(self, "indices", idx)

    @property
    def sigma(self) -> int:
        return len(self.indices)

    def overlap(self, other: "SparsityPattern") -> int:
        return len(set(self.indices) & set(other.indices))


@dataclass(frozen=True)
class ChannelState:
    snr: float
    eve_degradation: float = 0.25

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if not 0.0 <= self.eve_degradation <= 1.0:
            raise ValueError("eve_degradation must lie in [0, 1]")


@dataclass(frozen=True)
class KeySession:
    key_a: np.ndarray
    key_b: np.ndarray
    transcript: np.ndarray
    alphabet_size: int

    def __post_init__(self):
        a, b, t = (np.asarray(x, dtype=np.int64).ravel() for x in (self.key_a, self.key_b, self.transcript))
        if a.size == 0 or a.size != b.size:
            raise ValueError("keys must be nonempty and equally long")
        if t.size != a.size:
            raise ValueError("transcript must pair one symbol with each key symbol")
        if self.alphabet_size < 1:
            raise ValueError("alphabet size must be positive")
        object.__setattr__(self, "key_a", a)
        object.__setattr__(self, "key_b", b)
        object.__setattr__(self, "transcript", t)


# --------------------------------------------------------------------------
# patterns


def _check_pattern_args(sigma: int, psi: float, universe: int) -> None:
    if sigma < 1 or sigma > universe:
        raise ValueError("sigma must lie in 1..universe")
    if not 0.0 <= psi <= 1.0:
        raise ValueError("psi must lie in [0, 1]")
    if universe - sigma < sigma:
        raise CapacityError("universe too small to refill Eve's pattern")


def sample_pattern_batch(sigma: int, psi: float, universe: int, n: int, rng: RandomSource):
    """``n`` pattern pairs as boolean masks of shape (n, universe).

    Alice-Bob's pattern is the first ``sigma`` entries of a uniform random
    permutation; each of its indices is kept for Eve with probability ``psi``
    and Eve's pattern is refilled to ``sigma`` from the next entries of the
    same permutation, i.e. uniformly from the complement.
    """
    _check_pattern_args(sigma, psi, universe)
    perm = np.argsort(rng.uniform((n, universe)), axis=1)
    keep = rng.uniform((n, sigma)) < psi
    rows = np.arange(n)[:, None]
    ab = np.zeros((n, universe), dtype=bool)
    ab[rows, perm[:, :sigma]] = True
    ae = np.zeros((n, universe), dtype=bool)
    ae[rows, perm[:, :sigma]] = keep
    fill = sigma - keep.sum(axis=1)
    take = np.arange(sigma)[None, :] < fill[:, None]
    ae[rows, perm[:, sigma : 2 * sigma]] |= take
    return ab, ae


def sample_patterns(sigma: int, psi: float, universe: int, rng: RandomSource) -> tuple[SparsityPattern, SparsityPattern]:
    ab, ae = sample_pattern_batch(sigma, psi, universe, 1, rng)
    return (
        SparsityPattern(tuple(np.flatnonzero(ab[0])), universe),
        SparsityPattern(tuple(np.flatnonzero(ae[0])), universe),
    )


def empirical_overlap(ab: np.ndarray, ae: np.ndarray) -> float:
    """Pooled estimate of Pr(j in S_ae | j in S_ab)."""
    return float((ab & ae).sum() / ab.sum())


# --------------------------------------------------------------------------
# key rate


def mi_bob(omega):
    """0.5 log2(1 + omega)."""
    return 0.5 * np.log2(1.0 + np.asarray(omega, dtype=float))


def mi_eve(omega, kappa_e: float):
    """0.5 log2(1 + kappa_e * omega)."""
    if not 0.0 <= kappa_e <= 1.0:
        raise ValueError("kappa_e must lie in [0, 1]")
    return 0.5 * np.log2(1.0 + kappa_e * np.asarray(omega, dtype=float))


def key_rate(psi: float, sigma: int, omega_path: Sequence[float], kappa_e: float) -> float:
    """Time average of (1 - psi) sigma I1(w/sigma) + psi sigma (I1(w/sigma) - I2(w/sigma))."""
    w = np.asarray(omega_path, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("omega path is empty")
    if np.any(w <= 0):
        raise ValueError("snr values must be positive")
    i1, i2 = mi_bob(w / sigma), mi_eve(w / sigma, kappa_e)
    per_step = (1 - psi) * sigma * i1 + psi * sigma * (i1 - i2)
    return float(np.mean(per_step))


def key_rate_batch(psi, sigma: int, omega, kappa_e: float) -> np.ndarray:
    """Per-sample rates for arrays of psi and snr (instantaneous, no time average)."""
    w = np.asarray(omega, dtype=float)
    i1, i2 = mi_bob(w / sigma), mi_eve(w / sigma, kappa_e)
    psi = np.asarray(psi, dtype=float)
    return sigma * i1 - psi * sigma * i2


# --------------------------------------------------------------------------
# chance constraints


def hoeffding_bound(n: int, eps: float) -> float:
    """exp(-2 n eps^2): tail bound for an empirical frequency off by eps."""
    if n < 1 or not eps >= 0:
        raise ValueError("need n >= 1 and eps >= 0")
    return math.exp(-2.0 * n * eps * eps)


def hoeffding_radius(n: int, delta: float = 0.05) -> float:
    """Deviation eps with hoeffding_bound(n, eps) == delta."""
    return math.sqrt(math.log(1.0 / delta) / (2.0 * n))


@dataclass(frozen=True)
class ChanceVerdict:
    satisfied: bool
    empirical_prob: float
    n_samples: int
    radius: float

    def __iter__(self):
        yield self.satisfied
        yield self.empirical_prob


def chance_constraint(samples, threshold: float, level: float, direction: str) -> ChanceVerdict:
    """Empirical Pr(sample >= threshold) compared with ``level``.

    ``direction`` is ``"at-least"`` (prob >= level) or ``"at-most"`` (prob <= level).
    The verdict carries the 95% Hoeffding radius of the estimate.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("no samples")
    p = float(np.mean(s >= threshold))
    if direction == "at-least":
        ok = p >= level
    elif direction == "at-most":
        ok = p <= level
    else:
        raise ValueError("direction must be 'at-least' or 'at-most'")
    return ChanceVerdict(ok, p, s.size, hoeffding_radius(s.size))


def outage(rate_samples, lambda8: float) -> float:
    """1 - empirical Pr(rate >= lambda8)."""
    s = np.asarray(rate_samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("no samples")
    return 1.0 - float(np.mean(s >= lambda8))


# --------------------------------------------------------------------------
# alpha-secret key


@dataclass(frozen=True)
class AlphaKeyReport:
    agree: bool
    leakage: bool
    uniformity: bool
    agreement_rate: float
    leakage_bits: float
    entropy_bits: float
    n_samples: int

    def __iter__(self):
        yield self.agree
        yield self.leakage
        yield self.uniformity


def alpha_key_check(session: KeySession, alpha: float) -> AlphaKeyReport:
    """Plug-in checks of agreement, leakage to the transcript and near-uniformity."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    k = session.alphabet_size
    a, b, t = session.key_a, session.key_b, session.transcript
    if a.max() >= k or b.max() >= k or min(a.min(), b.min()) < 0:
        raise ValueError("key symbol outside the alphabet")
    n = a.size
    agree_rate = float(np.mean(a == b))
    _, t_codes = np.unique(t, return_inverse=True)
    joint = np.zeros((k, t_codes.max() + 1))
    np.add.at(joint, (a, t_codes), 1.0)
    leak = mutual_information(joint / n)
    h = entropy(np.bincount(a, minlength=k) / n)
    return AlphaKeyReport(
        agree=agree_rate >= 1 - alpha,
        leakage=leak <= alpha,
        uniformity=h >= math.log2(k) - alpha,
        agreement_rate=agree_rate,
        leakage_bits=leak,
        entropy_bits=h,
        n_samples=n,
    )
