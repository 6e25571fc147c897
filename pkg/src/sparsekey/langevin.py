"""Ornstein-Uhlenbeck evolution of the sparse coefficients and the xi / delta-xi
perturbation channel.

The drift is linear mean reversion ``-gamma0 * state``; noise enters as
Gaussian increments (discrete Brownian motion) in an Euler-Maruyama scheme.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataError, DimensionError, RandomSource, SparseCode, distortion

INVERSE_CLAMP = 1e-6


@dataclass(frozen=True)
class LangevinParams:
    gamma0: float
    noise_scale: float
    dt: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.gamma0 * self.dt < 1:
            raise ValueError("explicit scheme needs gamma0 * dt < 1")

    @property
    def contraction(self) -> float:
        return 1.0 - self.gamma0 * self.dt

    @property
    def stationary_variance(self) -> float:
        """Continuous-time stationary variance noise^2 / (2 gamma0)."""
        return self.noise_scale**2 / (2.0 * self.gamma0)


@dataclass(frozen=True)
class LangevinPath:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, *state_shape)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) != len(self.states):
            raise DimensionError("times and states disagree in length")
        if len(times) > 1:
            steps = np.diff(times)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise DataError("times must be strictly increasing with uniform spacing")
        states = np.array(self.states, dtype=float)
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class PerturbationWindow:
    xi: float
    delta_xi: float

    def __post_init__(self):
        if not (self.xi > 0 and self.delta_xi > 0):
            raise ValueError("xi and delta_xi must both be positive")

    @property
    def radius(self) -> float:
        return self.xi + self.delta_xi

    def interval(self, t: float = 0.0) -> tuple[float, float]:
        return t - self.radius, t + self.radius


def _values(state) -> np.ndarray:
    return state.coefficients if isinstance(state, SparseCode) else np.asarray(state, dtype=float)


def _advance(state: np.ndarray, params: LangevinParams, gauss: np.ndarray) -> np.ndarray:
    return state * params.contraction + params.noise_scale * math.sqrt(params.dt) * gauss


def ou_step(state, params: LangevinParams, rng: RandomSource) -> np.ndarray:
    """One Euler-Maruyama step: state * (1 - gamma0 dt) + noise * sqrt(dt) * G."""
    s = _values(state)
    return _advance(s, params, rng.normal(s.shape))


def simulate_path(initial, params: LangevinParams, n_steps: int, rng: RandomSource, t0: float = 0.0) -> LangevinPath:
    """Path of ``n_steps + 1`` states from repeated :func:`ou_step` calls.

    All Gaussian draws are taken in one block; the generator fills it in the
    same order as successive per-step calls would.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    s = np.array(_values(initial), dtype=float)
    gauss = rng.normal((n_steps,) + s.shape)
    states = np.empty((n_steps + 1,) + s.shape)
    states[0] = s
    for k in range(n_steps):
        s = _advance(s, params, gauss[k])
        states[k + 1] = s
    times = t0 + params.dt * np.arange(n_steps + 1)
    return LangevinPath(times, states)


def residual_6b(path: LangevinPath, params: LangevinParams) -> float:
    """Normalised mean squared defect of a path against the OU drift.

    The defect of each increment is ``(s[k+1] - s[k]) - (-gamma0 * s[k] * dt)``.
    Its mean square is divided by the increment variance ``noise^2 * dt``, so a
    path generated by :func:`simulate_path` scores close to 1. With zero noise
    the raw mean squared defect is returned.
    """
    if len(path) < 2:
        raise DataError("path needs at least two states")
    s = path.states
    defect = (s[1:] - s[:-1]) + params.gamma0 * s[:-1] * params.dt
    msd = float(np.mean(defect * defect))
    var = params.noise_scale**2 * params.dt
    return msd / var if var > 0 else msd


def picard_window(lipschitz: float, bound: float) -> float:
    """Existence radius min(1 / (2 L), bound) for a drift with Lipschitz constant L."""
    if not (lipschitz > 0 and bound > 0):
        raise ValueError("lipschitz and bound must be positive")
    return min(1.0 / (2.0 * lipschitz), bound)


def clamped_inverse(u: np.ndarray) -> np.ndarray:
    """Elementwise 1/u with |u| floored at 1e-6 (sign kept, zero maps to +)."""
    safe = np.where(np.abs(u) < INVERSE_CLAMP, np.where(u < 0, -INVERSE_CLAMP, INVERSE_CLAMP), u)
    return 1.0 / safe


@dataclass(frozen=True)
class SleDraws:
    """Standard Gaussian draws behind one :func:`sle_perturb` call."""

    noise1: np.ndarray
    noise2: np.ndarray

    @classmethod
    def draw(cls, shape, rng: RandomSource) -> "SleDraws":
        return cls(rng.normal(shape), rng.normal(shape))


def sle_perturb_with(code: SparseCode, window: PerturbationWindow, draws: SleDraws, delta_xi: float | None = None):
    """Deterministic core of :func:`sle_perturb` given the Gaussian draws.

    ``delta_xi`` overrides the window's step (used for relative-magnitude arms).
    Returns ``(code_xi, code_xi_dxi, forcing)`` where ``forcing`` is the
    clamped inverse term on the support.
    """
    C = code.coefficients
    mask = code.support
    root = math.sqrt(window.xi)
    code_xi = C + root * draws.noise1 * mask
    forcing = clamped_inverse(code_xi + root * draws.noise2) * mask
    step = window.delta_xi if delta_xi is None else delta_xi
    code_dxi = code_xi + step * forcing
    return _keep_support(code_xi, mask), _keep_support(code_dxi, mask), forcing


def _keep_support(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask & (values == 0), np.finfo(float).tiny, values)


def sle_perturb(code: SparseCode, window: PerturbationWindow, rng: RandomSource) -> tuple[SparseCode, SparseCode]:
    """Boundary-to-boundary stochastic perturbation of a code.

    ``code_xi = code + sqrt(xi) * n1`` on the support, then
    ``code_xi_dxi = code_xi + delta_xi * F`` with
    ``F = 1 / (code_xi + w2)`` elementwise, ``w2 ~ N(0, xi)`` the second walk
    at time xi. Entries of ``code_xi + w2`` closer to zero than 1e-6 are
    clamped before inversion. Both outputs keep the input support.
    """
    draws = SleDraws.draw(code.shape, rng)
    a, b, _ = sle_perturb_with(code, window, draws)
    return code.with_values(a), code.with_values(b)


def constraint_6e(code_xi, code_dxi, lambda3: float) -> bool:
    """True iff distortion(code_xi, code_dxi) <= lambda3 (inf disables the cap)."""
    return distortion(code_xi, code_dxi) <= lambda3
