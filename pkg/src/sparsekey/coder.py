"""Sparse coding under an l0 budget, dictionary updates and the perturbation map.

The encoder is orthogonal greedy pursuit with a least-squares refit after
every atom. Dictionary learning alternates encoding with projected gradient
steps on the atoms; :func:`alternate` is the shared loop, also driven by the
penalised solver in :mod:`sparsekey.optimizer`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from .core import (
    BudgetError,
    DataBatch,
    DataError,
    Dictionary,
    DimensionError,
    RandomSource,
    SideInfo,
    SparseCode,
    Thresholds,
    distortion,
)

_RESIDUAL_RTOL = 1e-12
MAX_HALVINGS = 50


@dataclass(frozen=True)
class PerturbationModel:
    """Isotropic Gaussian perturbation of the supported code entries."""

    sigma_theta: float = 0.0
    kind: str = "additive-gaussian"

    def __post_init__(self):
        if self.kind != "additive-gaussian":
            raise ValueError(f"unsupported perturbation kind {self.kind!r}")
        if not self.sigma_theta >= 0:
            raise ValueError("sigma_theta must be nonnegative")


class MonteCarloEstimate(NamedTuple):
    mean: float
    stderr: float
    n_samples: int


@dataclass(frozen=True)
class P1Solution:
    dictionary: Dictionary
    code: SparseCode
    objective_history: list[float]
    expected_distortion: MonteCarloEstimate | None = None


# --------------------------------------------------------------------------
# encoding


def _data_matrix(x) -> np.ndarray:
    arr = x.values if isinstance(x, DataBatch) else np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise DataError("data contains non-finite entries")
    return arr


def sparse_encode(dictionary: Dictionary, x, budget: int, *, return_residuals: bool = False):
    """Greedy pursuit code with at most ``budget`` atoms per column.

    Each step adds the atom most correlated with the current residual (ties go
    to the lowest index) and refits all selected coefficients by least
    squares, so the per-column residual norm never increases. A column stops
    early once its residual vanishes. Columns are processed as one batch;
    the result is identical to encoding them one at a time.

    With ``return_residuals=True`` also returns an array of shape
    ``(budget + 1, N)`` holding the residual norm of every column after
    0, 1, ... selected atoms (a stopped column repeats its last value).
    """
    X = _data_matrix(x)
    D = dictionary.atoms
    if D.shape[0] != X.shape[0]:
        raise DimensionError(f"dictionary has n={D.shape[0]}, data has n={X.shape[0]}")
    m = D.shape[1]
    N = X.shape[1]
    if budget < 1 or budget > m:
        raise BudgetError(f"sparsity budget {budget} outside [1, {m}]")

    gram = D.T @ D
    proj = D.T @ X  # (m, N)
    scale = np.maximum(1.0, np.linalg.norm(X, axis=0))
    cols = np.arange(N)
    support = np.zeros((N, 0), dtype=int)
    coef = np.zeros((N, 0))
    R = X.copy()
    norms = np.linalg.norm(R, axis=0)
    trail = [norms.copy()]
    active = norms > _RESIDUAL_RTOL * scale
    for _ in range(budget):
        corr = np.abs(D.T @ R)
        if support.shape[1]:
            corr[support.T, cols] = -1.0
        pick = np.argmax(corr, axis=0)
        active &= corr[pick, cols] > _RESIDUAL_RTOL * scale
        # every column records a distinct new slot; stopped columns keep a zero coefficient
        support = np.concatenate([support, pick[:, None]], axis=1)
        coef = np.concatenate([coef, np.zeros((N, 1))], axis=1)
        idx = np.flatnonzero(active)
        if idx.size:
            sup = support[idx]
            sub = gram[sup[:, :, None], sup[:, None, :]]
            rhs = proj[sup, idx[:, None]]
            new_coef = _batched_lstsq(sub, rhs, D, X[:, idx], sup)
            new_R = X[:, idx] - np.einsum("nik,ik->ni", D[:, sup], new_coef)
            new_norms = np.linalg.norm(new_R, axis=0)
            # least squares on a larger support cannot do worse beyond round-off
            take = new_norms <= norms[idx]
            took = idx[take]
            coef[took] = new_coef[take]
            R[:, took] = new_R[:, take]
            norms[took] = new_norms[take]
            active[idx[~take]] = False
            active &= norms > _RESIDUAL_RTOL * scale
        trail.append(norms.copy())

    coeffs = np.zeros((m, N))
    coeffs[support.T, cols] = coef.T
    code = SparseCode(coeffs, budget)
    if return_residuals:
        return code, np.array(trail)
    return code


def _batched_lstsq(sub, rhs, D, X, support):
    try:
        return np.linalg.solve(sub, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        out = np.empty(rhs.shape)
        for j in range(rhs.shape[0]):
            out[j] = np.linalg.lstsq(D[:, support[j]], X[:, j], rcond=None)[0]
        return out


# --------------------------------------------------------------------------
# perturbation


def perturb_code(code: SparseCode, model: PerturbationModel, rng: RandomSource) -> SparseCode:
    """Add i.i.d. N(0, sigma_theta^2) noise to the supported entries only."""
    noise = rng.normal(code.shape, scale=1.0)
    if model.sigma_theta == 0:
        return code
    values = code.coefficients + model.sigma_theta * noise * code.support
    # keep the support even if a perturbed entry lands exactly on zero
    values = np.where(code.support & (values == 0), np.finfo(float).tiny, values)
    return code.with_values(values)


def perturbation_distortion_mean(code: SparseCode, model: PerturbationModel) -> float:
    """Closed-form expectation of distortion(perturb(code), code)."""
    size = code.coefficients.size
    if size == 0:
        return 0.0
    return float(np.count_nonzero(code.coefficients)) / size * model.sigma_theta**2


def expected_distortion(
    code: SparseCode,
    model: PerturbationModel,
    n_samples: int = 1024,
    rng: RandomSource | None = None,
    *,
    chunk: int = 4096,
) -> MonteCarloEstimate:
    """Monte Carlo mean of distortion(perturb(code), code) with its standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if model.sigma_theta == 0:
        return MonteCarloEstimate(0.0, 0.0, n_samples)
    if rng is None:
        rng = RandomSource(0)
    nnz = int(np.count_nonzero(code.coefficients))
    size = code.coefficients.size
    samples = np.empty(n_samples)
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        g = rng.normal((k, nnz), scale=model.sigma_theta)
        samples[done:done + k] = np.sum(g * g, axis=1) / size
        done += k
    stderr = float(np.std(samples, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0
    return MonteCarloEstimate(float(np.mean(samples)), stderr, n_samples)


# --------------------------------------------------------------------------
# dictionary update


def reconstruction_error(D: np.ndarray, X: np.ndarray, C: np.ndarray) -> float:
    """Squared Frobenius residual ||X - D C||^2."""
    R = X - D @ C
    return float(np.sum(R * R))


def _normalise_columns(D: np.ndarray, X: np.ndarray, C: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(D, axis=0)
    dead = norms < 1e-12
    if np.any(dead):
        # re-seed with the worst reconstructed data columns, worst first
        resid = np.linalg.norm(X - D @ C, axis=0)
        order = np.argsort(-resid, kind="stable")
        candidates = [i for i in order if np.linalg.norm(X[:, i]) > 0]
        D = D.copy()
        for slot, col in enumerate(np.flatnonzero(dead)):
            if slot < len(candidates):
                D[:, col] = X[:, candidates[slot]]
            else:
                D[:, col] = 0.0
                D[col % D.shape[0], col] = 1.0
        norms = np.linalg.norm(D, axis=0)
    return D / norms


def dictionary_update(dictionary: Dictionary, x, code: SparseCode, step: float) -> Dictionary:
    """One projected gradient step on ||x - D code||^2 over unit-norm atoms.

    The step starts at ``step`` and is halved until the objective at the
    renormalised point does not exceed the current one; if no halving works
    the dictionary is returned unchanged. Atoms whose update vanishes are
    re-seeded with the worst-reconstructed data column.
    """
    X = _data_matrix(x)
    D = dictionary.atoms
    C = code.coefficients
    if D.shape[0] != X.shape[0] or D.shape[1] != C.shape[0] or C.shape[1] != X.shape[1]:
        raise DimensionError("inconsistent shapes for dictionary update")
    if not step > 0:
        raise ValueError("step must be positive")
    R = X - D @ C
    grad = -2.0 * R @ C.T
    if not np.any(grad):
        return dictionary
    f0 = float(np.sum(R * R))
    t = float(step)
    for _ in range(MAX_HALVINGS):
        cand = _normalise_columns(D - t * grad, X, C)
        if reconstruction_error(cand, X, C) <= f0:
            return Dictionary(cand, dictionary.atom_budget)
        t *= 0.5
    return dictionary


def reseed_unused_atoms(dictionary: Dictionary, X: np.ndarray, C: np.ndarray) -> Dictionary:
    """Point atoms that no column uses at the worst-reconstructed data columns.

    Unused atoms carry zero coefficients, so the objective is unchanged.
    """
    unused = np.flatnonzero(~np.any(C != 0, axis=1))
    if unused.size == 0:
        return dictionary
    D = dictionary.atoms.copy()
    resid = np.linalg.norm(X - D @ C, axis=0)
    order = [i for i in np.argsort(-resid, kind="stable") if resid[i] > 1e-12]
    for slot, col in enumerate(unused[: len(order)]):
        D[:, col] = X[:, order[slot]] - D @ C[:, order[slot]]
    D[:, unused[: len(order)]] /= np.linalg.norm(D[:, unused[: len(order)]], axis=0)
    return Dictionary(D, dictionary.atom_budget)


def initial_dictionary(x, n_atoms: int, rng: RandomSource) -> Dictionary:
    """Normalised random data columns, topped up with Gaussian atoms if needed."""
    X = _data_matrix(x)
    n, N = X.shape
    usable = np.flatnonzero(np.linalg.norm(X, axis=0) > 0)
    order = rng.generator.permutation(usable)
    picked = order[:n_atoms]
    atoms = np.zeros((n, n_atoms))
    atoms[:, : len(picked)] = X[:, picked]
    if len(picked) < n_atoms:
        atoms[:, len(picked):] = rng.normal((n, n_atoms - len(picked)))
    return Dictionary.from_matrix(atoms, n_atoms)


def initial_iterate(x, thresholds: Thresholds, rng: RandomSource) -> tuple[Dictionary, SparseCode]:
    """Starting dictionary (lambda0 atoms) and its greedy code (lambda1 budget)."""
    n_atoms, budget = int(thresholds[0]), int(thresholds[1])
    if budget > n_atoms:
        raise BudgetError(f"sparsity budget {budget} exceeds atom budget {n_atoms}")
    D0 = initial_dictionary(x, n_atoms, rng)
    return D0, sparse_encode(D0, x, budget)


# --------------------------------------------------------------------------
# alternating loop


class Penalty(Protocol):
    def begin_iteration(self, k: int, atoms: np.ndarray, code: np.ndarray) -> None: ...
    def value(self, code: np.ndarray) -> float: ...
    def grad(self, code: np.ndarray) -> np.ndarray: ...


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    previous: float
    fit: float
    encode_accepted: bool
    step_accepted: bool
    refreshed: bool = False


@dataclass
class AlternationResult:
    dictionary: Dictionary
    code: SparseCode
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = "iterations"


def fit_objective(D: np.ndarray, X: np.ndarray, C: np.ndarray, model: PerturbationModel) -> float:
    """Mean squared reconstruction error plus the expected perturbation distortion."""
    recon = reconstruction_error(D, X, C) / X.size
    if model.sigma_theta == 0:
        return recon
    return recon + np.count_nonzero(C) / C.size * model.sigma_theta**2


STALL_RTOL = 1e-3


def alternate(
    x,
    dictionary: Dictionary,
    code: SparseCode,
    model: PerturbationModel,
    iters: int,
    penalty: Penalty | None = None,
    tol: float = 0.0,
    patience: int = 10,
) -> AlternationResult:
    """Alternate greedy encoding, a dictionary step and a code step.

    Every sub-step is accepted only if the (penalised) objective does not
    increase, so the recorded objective is non-increasing whenever the
    penalty itself is unchanged between iterations. When an iteration makes
    less than 0.1% relative progress, atoms are tentatively swapped for
    residual directions of badly reconstructed columns; a swap is kept only
    if it lowers the objective.

    Stops after ``iters`` iterations, once the relative change of an
    iteration drops below ``tol`` (``tol=0`` disables this), once the fit is
    exact to round-off, or after ``patience`` consecutive stalled iterations
    in which no swap helped.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    X = _data_matrix(x)
    budget = code.sparsity_budget
    D = dictionary
    C = code.coefficients
    floor = 1e-15 * max(float(np.mean(X * X)), 1e-300)

    def total(Dm, Cm):
        f = fit_objective(Dm, X, Cm, model)
        return f + penalty.value(Cm) if penalty is not None else f

    records = []
    reason = "iterations"
    idle = 0
    for k in range(iters):
        if penalty is not None:
            penalty.begin_iteration(k, D.atoms, C)
        before = total(D.atoms, C)

        enc = sparse_encode(D, X, budget).coefficients
        encode_ok = total(D.atoms, enc) <= before
        if encode_ok:
            C = enc

        norm_c = np.linalg.norm(C, 2)
        if norm_c > 0:
            D = dictionary_update(D, X, SparseCode(C, budget), step=1.0 / (2.0 * norm_c**2))
        D = reseed_unused_atoms(D, X, C)

        C, step_ok = _code_step(D.atoms, X, C, total, penalty)
        after = total(D.atoms, C)

        refreshed = False
        stalled = before - after < STALL_RTOL * before and after > floor
        if stalled:
            D, C, refreshed = _refresh_atoms(D, X, C, budget, after, total)
            if refreshed:
                after = total(D.atoms, C)
        idle = idle + 1 if stalled and not refreshed else 0

        records.append(
            IterationRecord(
                k, after, before, fit_objective(D.atoms, X, C, model), encode_ok, step_ok, refreshed
            )
        )
        if fit_objective(D.atoms, X, C, model) <= floor and (penalty is None or after <= floor):
            reason = "exact"
            break
        if tol > 0 and not refreshed and abs(before - after) <= tol * max(abs(before), 1e-300):
            reason = "tolerance"
            break
        if patience and idle >= patience:
            reason = "stalled"
            break
    return AlternationResult(D, SparseCode(C, budget), records, reason)


def _refresh_atoms(D: Dictionary, X, C, budget, current, total, n_worst: int = 3):
    """Try replacing an atom by a residual direction; first improvement wins.

    Atoms are tried from least to most used (ties by index), each against the
    residuals of the ``n_worst`` worst-reconstructed columns.
    """
    usage = np.count_nonzero(C, axis=1)
    R = X - D.atoms @ C
    rnorm = np.linalg.norm(R, axis=0)
    worst = [j for j in np.argsort(-rnorm, kind="stable")[:n_worst] if rnorm[j] > 0]
    for a in np.argsort(usage, kind="stable"):
        for j in worst:
            atoms = D.atoms.copy()
            atoms[:, a] = R[:, j] / rnorm[j]
            trial = Dictionary(atoms, D.atom_budget)
            code = sparse_encode(trial, X, budget).coefficients
            if total(atoms, code) < current:
                return trial, code, True
    return D, C, False


def _code_step(D, X, C, total, penalty):
    mask = C != 0
    if not mask.any():
        return C, False
    grad = -2.0 * D.T @ (X - D @ C) / X.size
    if penalty is not None:
        grad = grad + penalty.grad(C)
    grad = grad * mask
    if not np.any(grad):
        return C, False
    lip = 2.0 * np.linalg.norm(D, 2) ** 2 / X.size
    t = 1.0 / lip
    f0 = total(D, C)
    for _ in range(MAX_HALVINGS):
        cand = C - t * grad
        # stay on the current support
        cand = np.where(mask & (cand == 0), np.finfo(float).tiny, cand) * mask
        if total(D, cand) <= f0:
            return cand, True
        t *= 0.5
    return C, False


def solve_p1(
    x,
    thresholds: Thresholds,
    model: PerturbationModel,
    iters: int,
    rng: RandomSource,
    *,
    restarts: int = 1,
    n_mc: int = 1024,
    tol: float = 0.0,
) -> P1Solution:
    """Sparse dictionary learning under the atom and sparsity budgets.

    The objective tracked per iteration is the mean squared reconstruction
    error plus the closed-form expected perturbation distortion; the Monte
    Carlo estimate of the latter for the final code is attached.

    With ``restarts > 1`` further runs start from ``rng.child(r)`` and the
    run with the lowest final objective is kept (earliest on ties). The first
    run always starts from ``rng`` itself.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        src = rng if r == 0 else rng.child(r)
        D0, C0 = initial_iterate(x, thresholds, src)
        res = alternate(x, D0, C0, model, iters, tol=tol)
        if best is None or res.records[-1].objective < best.records[-1].objective:
            best = res
        if best.stop_reason == "exact":
            break
    est = expected_distortion(best.code, model, n_mc, rng)
    return P1Solution(best.dictionary, best.code, [r.objective for r in best.records], est)


def lowpass_side_info(x, dictionary: Dictionary, budget: int, block: int = 2) -> SideInfo:
    """Side information: the code of a blockwise-averaged copy of the data.

    Each column is split into contiguous blocks of ``block`` rows and every
    entry replaced by its block mean before encoding.
    """
    X = _data_matrix(x)
    if block < 1:
        raise ValueError("block must be >= 1")
    smooth = np.empty_like(X)
    for start in range(0, X.shape[0], block):
        sl = slice(start, min(start + block, X.shape[0]))
        smooth[sl] = X[sl].mean(axis=0, keepdims=True)
    return SideInfo(sparse_encode(dictionary, smooth, budget).coefficients)


def incoherent_dictionary(n: int, m: int, rng: RandomSource, coherence: float, iters: int = 500) -> Dictionary:
    """Unit-norm frame whose off-diagonal Gram entries are pushed below ``coherence``.

    Alternates clipping the Gram matrix with a rank-n projection; returns the
    best frame found if the target is not reachable.
    """
    D = rng.normal((n, m))
    D /= np.linalg.norm(D, axis=0)
    best, best_mu = D, _coherence(D)
    for _ in range(iters):
        if best_mu < coherence:
            break
        G = np.clip(D.T @ D, -coherence * 0.999, coherence * 0.999)
        np.fill_diagonal(G, 1.0)
        w, V = np.linalg.eigh(G)
        D = (V[:, -n:] * np.sqrt(np.maximum(w[-n:], 0.0))).T
        D /= np.linalg.norm(D, axis=0)
        mu = _coherence(D)
        if mu < best_mu:
            best, best_mu = D, mu
    return Dictionary(best, m)


def _coherence(D: np.ndarray) -> float:
    G = np.abs(D.T @ D)
    np.fill_diagonal(G, 0.0)
    return float(G.max()) if G.size > 1 else 0.0


def planted_instance(
    n: int, m: int, budget: int, N: int, rng: RandomSource, noise: float = 0.0
) -> tuple[DataBatch, Dictionary, SparseCode]:
    """Low-coherence dictionary, exactly ``budget``-sparse code and data D @ C (+ noise).

    The dictionary coherence is driven below 0.9/(2*budget - 1), the regime in
    which greedy pursuit recovers every planted support exactly.
    Coefficient magnitudes lie in [1, 2) with random signs.
    """
    D = incoherent_dictionary(n, m, rng, 0.9 / (2 * budget - 1))
    C = np.zeros((m, N))
    for j in range(N):
        idx = rng.choice(m, budget)
        mags = 1.0 + rng.uniform(budget)
        signs = np.where(rng.uniform(budget) < 0.5, -1.0, 1.0)
        C[idx, j] = signs * mags
    X = D.atoms @ C
    if noise > 0:
        X = X + rng.normal(X.shape, scale=noise)
    return DataBatch(X), D, SparseCode(C, budget)
