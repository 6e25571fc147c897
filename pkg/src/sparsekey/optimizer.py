"""Constrained sparse-key problems and the penalised greedy solver.

A problem bundles the hard constraints (sparsity budget 6.a, side-information
distortion 6.c, sampling window 6.d, perturbation distortion 6.e), the
Langevin residual weight 6.b and an optional set of chance constraints
(7.f overlap tail, 8.h SNR tail, 9.f key-rate tail).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coder import PerturbationModel, alternate, reconstruction_error
from .core import (
    ConfigError,
    DataBatch,
    Dictionary,
    RandomSource,
    SideInfo,
    SparseCode,
    Thresholds,
    column_support_counts,
    distortion,
    validate_config,
)
from .langevin import LangevinParams, PerturbationWindow, SleDraws, sle_perturb_with
from .secrecy import chance_constraint, key_rate_batch, sample_pattern_batch

VARIANTS = {
    "P2": (),
    "P3": ("7.f",),
    "P3prime": ("7.f", "8.h"),
    "P3doubleprime": ("9.f",),
}

DEFAULT_PENALTY_WEIGHT = 10.0
DOUBLING_PATIENCE = 10
SOLVER_TOL = 1e-6
HARD_ORDER = ("6.a", "6.c", "6.d", "6.e")


@dataclass(frozen=True)
class ChannelModel:
    """Key-agreement channel: pattern sizes, overlap, SNR and Eve's degradation.

    Per Monte Carlo draw the fading gain is ``g ~ Exp(1)`` and the effective
    SNR is ``snr * g / (1 + snr * e)`` with ``e`` the relative distortion of
    the current iterate (reconstruction error over data energy).
    """

    sigma: int = 8
    universe: int = 64
    psi: float = 0.3
    snr: float = 10.0
    kappa_e: float = 0.25

    def __post_init__(self):
        if not self.snr > 0:
            raise ConfigError("snr must be positive")
        if not 0.0 <= self.kappa_e <= 1.0:
            raise ConfigError("kappa_e must lie in [0, 1]")
        if not 0.0 <= self.psi <= 1.0:
            raise ConfigError("psi must lie in [0, 1]")
        if not 1 <= self.sigma <= self.universe // 2:
            raise ConfigError("need 1 <= sigma <= universe / 2")


def effective_snr(snr: float, gain, rel_distortion: float):
    """snr * gain / (1 + snr * rel_distortion)."""
    return snr * np.asarray(gain, dtype=float) / (1.0 + snr * rel_distortion)


@dataclass(frozen=True)
class ConstraintSet:
    variant: str
    thresholds: Thresholds
    data: DataBatch
    side_info: SideInfo | None
    window: PerturbationWindow
    langevin: LangevinParams
    channel: ChannelModel
    dynamic_weight: float = 0.0
    probabilistic: tuple[str, ...] = ()
    hard: tuple[str, ...] = HARD_ORDER
    model: PerturbationModel = PerturbationModel()
    n_mc: int = 1000


def build_problem(
    variant: str,
    thresholds: Thresholds,
    data,
    side_info: SideInfo | None = None,
    *,
    window: PerturbationWindow = PerturbationWindow(0.01, 0.05),
    langevin: LangevinParams | None = None,
    channel: ChannelModel = ChannelModel(),
    dynamic_weight: float = 0.0,
    model: PerturbationModel = PerturbationModel(),
    n_mc: int = 1000,
) -> ConstraintSet:
    """Assemble a problem; the variant fixes the probabilistic constraint set."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    problems = validate_config(thresholds)
    if problems:
        raise ConfigError("; ".join(str(p) for p in problems))
    if dynamic_weight < 0:
        raise ConfigError("dynamic_weight must be nonnegative")
    if n_mc < 100:
        raise ConfigError("n_mc must be >= 100")
    data = data if isinstance(data, DataBatch) else DataBatch(data)
    if langevin is None:
        langevin = LangevinParams(thresholds.gamma0, 1.0, 0.1)
    return ConstraintSet(
        variant, thresholds, data, side_info, window, langevin, channel,
        dynamic_weight, VARIANTS[variant], HARD_ORDER, model, n_mc,
    )


# --------------------------------------------------------------------------
# penalty


@dataclass
class ChanceReport:
    probs: dict
    satisfied: dict
    key_rate: float
    times: tuple[float, float]
    center: float = 0.0


class ProblemPenalty:
    """Penalty terms of a problem, with draws fixed for the whole solve.

    * 6.b: ``dynamic_weight * max(0, r - 1)`` with ``r`` the normalised
      Ornstein-Uhlenbeck defect of the move from the iteration's starting code.
    * 6.c: ``w_c * max(0, D(code, side_info) - lambda2)^2``.
    * 6.e: ``w_e * max(0, D(code_xi, code_xi_dxi) - lambda3)^2`` using one
      fixed set of Gaussian draws.

    ``w_c`` and ``w_e`` start at 10 and double after 10 consecutive
    iterations with the constraint violated. Chance constraints are evaluated
    at the start of each iteration on a stream derived from the iteration index.
    """

    def __init__(self, problem: ConstraintSet, rng: RandomSource, shape):
        self.p = problem
        self.rng = rng
        self.draws = SleDraws.draw(shape, rng.child(1))
        self.weights = {"6.c": DEFAULT_PENALTY_WEIGHT, "6.e": DEFAULT_PENALTY_WEIGHT}
        self.streak = {"6.c": 0, "6.e": 0}
        self.anchor = None
        self.reports: list[ChanceReport] = []
        self.weight_log: list[dict] = []

    # -- terms -------------------------------------------------------------
    def side_gap(self, C) -> float:
        if self.p.side_info is None or math.isinf(self.p.thresholds[2]):
            return 0.0
        return distortion(C, self.p.side_info) - self.p.thresholds[2]

    def perturb_terms(self, C):
        code = SparseCode(C, max(1, int(column_support_counts(C).max(initial=1))))
        a, b, forcing = sle_perturb_with(code, self.p.window, self.draws)
        return distortion(a, b), forcing

    def perturb_gap(self, C) -> float:
        if math.isinf(self.p.thresholds[3]):
            return 0.0
        return self.perturb_terms(C)[0] - self.p.thresholds[3]

    def _dyn(self, C):
        if self.p.dynamic_weight == 0 or self.anchor is None:
            return 0.0, None
        lp = self.p.langevin
        d = C - self.anchor * lp.contraction
        var = lp.noise_scale**2 * lp.dt
        scale = var if var > 0 else 1.0
        r = float(np.mean(d * d)) / scale
        floor = 1.0 if var > 0 else 0.0
        return r - floor, 2.0 * d / (C.size * scale)

    # -- Penalty protocol --------------------------------------------------
    def begin_iteration(self, k: int, atoms, code) -> None:
        C = np.asarray(code)
        for name, gap in (("6.c", self.side_gap(C)), ("6.e", self.perturb_gap(C))):
            self.streak[name] = self.streak[name] + 1 if gap > 0 else 0
            if self.streak[name] >= DOUBLING_PATIENCE:
                self.weights[name] *= 2.0
                self.streak[name] = 0
        self.weight_log.append(dict(self.weights))
        self.anchor = C.copy()
        self.reports.append(self.chance(k, atoms, C))

    def value(self, code) -> float:
        C = np.asarray(code)
        total = 0.0
        gc = self.side_gap(C)
        if gc > 0:
            total += self.weights["6.c"] * gc * gc
        ge = self.perturb_gap(C)
        if ge > 0:
            total += self.weights["6.e"] * ge * ge
        ex, _ = self._dyn(C)
        if ex > 0:
            total += self.p.dynamic_weight * ex
        return total

    def grad(self, code) -> np.ndarray:
        C = np.asarray(code)
        g = np.zeros_like(C)
        gc = self.side_gap(C)
        if gc > 0:
            A = self.p.side_info.values
            g += self.weights["6.c"] * 2 * gc * 2 * (C - A) / C.size
        if not math.isinf(self.p.thresholds[3]):
            d, forcing = self.perturb_terms(C)
            ge = d - self.p.thresholds[3]
            if ge > 0:
                step = self.p.window.delta_xi
                g += self.weights["6.e"] * 2 * ge * (-2.0 * step**2 * forcing**3 / C.size)
        ex, dg = self._dyn(C)
        if ex > 0:
            g += self.p.dynamic_weight * dg
        return g

    # -- chance constraints ------------------------------------------------
    def chance(self, k: int, atoms, C, stream: int = 2) -> ChanceReport:
        return evaluate_chance(self.p, atoms, C, self.rng.child(stream, k), center=float(k))


def evaluate_chance(problem: ConstraintSet, atoms, C, rng: RandomSource, center: float = 0.0) -> ChanceReport:
    """Monte Carlo probabilities of the 7.f / 8.h / 9.f events at an iterate."""
    ch, th, n = problem.channel, problem.thresholds, problem.n_mc
    X = problem.data.values
    rel = reconstruction_error(np.asarray(atoms), X, np.asarray(C)) / (float(np.sum(X * X)) or 1.0)
    ab, ae = sample_pattern_batch(ch.sigma, ch.psi, ch.universe, n, rng)
    psi_hat = (ab & ae).sum(axis=1) / ch.sigma
    gain = rng.exponential(n)
    lo, hi = problem.window.interval(center)
    times = lo + (hi - lo) * rng.uniform(n)
    omega = effective_snr(ch.snr, gain, rel)
    rates = key_rate_batch(psi_hat, ch.sigma, omega, ch.kappa_e)
    verdicts = {
        "7.f": chance_constraint(psi_hat, th[4], th[5], "at-most"),
        "8.h": chance_constraint(omega / ch.snr, th[6], th[7], "at-least"),
        "9.f": chance_constraint(rates, th[8], th[9], "at-least"),
    }
    return ChanceReport(
        {k: v.empirical_prob for k, v in verdicts.items()},
        {k: v.satisfied for k, v in verdicts.items()},
        float(np.mean(rates)),
        (float(times.min()), float(times.max())),
        center,
    )


# --------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    previous: float
    fit: float
    accepted: bool
    key_rate: float
    chance_probs: dict
    chance_ok: dict
    weights: dict


@dataclass
class SolveTrace:
    records: list[TraceRecord]
    dictionary: Dictionary
    code: SparseCode
    status: str
    violated: tuple[str, ...]
    hard_status: dict
    final_chance: ChanceReport
    stop_reason: str = "iterations"
    restored: bool = False

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.records]

    @property
    def key_rates(self) -> list[float]:
        return [r.key_rate for r in self.records]

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def check_hard(problem: ConstraintSet, code: SparseCode, draws: SleDraws, report: ChanceReport) -> dict:
    """Re-check 6.a / 6.c / 6.d / 6.e at a final iterate."""
    th = problem.thresholds
    C = code.coefficients
    out = {"6.a": bool(column_support_counts(C).max(initial=0) <= th[1])}
    if problem.side_info is None or math.isinf(th[2]):
        out["6.c"] = True
    else:
        out["6.c"] = distortion(C, problem.side_info) <= th[2]
    lo, hi = problem.window.interval(report.center)
    out["6.d"] = bool(report.times[0] >= lo and report.times[1] <= hi)
    a, b, _ = sle_perturb_with(code, problem.window, draws)
    out["6.e"] = distortion(a, b) <= th[3]
    return out


def certify(problem: ConstraintSet, code: SparseCode, draws: SleDraws, report: ChanceReport):
    """Hard-constraint map and the names of every violated constraint of the variant."""
    hard = check_hard(problem, code, draws, report)
    violated = tuple(k for k in HARD_ORDER if not hard[k])
    violated += tuple(k for k in problem.probabilistic if not report.satisfied[k])
    return hard, violated


def greedy_solve(
    problem: ConstraintSet,
    init: tuple[Dictionary, SparseCode],
    iters: int,
    rng: RandomSource,
    *,
    patience: int = 10,
) -> SolveTrace:
    """Penalised alternating descent with Monte Carlo chance-constraint checks.

    Each iteration encodes greedily under the sparsity budget, takes a
    dictionary step and a code step on objective plus penalties; a sub-step
    is kept only if the penalised objective does not increase. Stops on a
    relative change below 1e-6 or after ``iters`` iterations. The status is
    ``"feasible"`` when the final iterate passes every hard constraint and
    every chance constraint of the variant, otherwise ``"infeasible"`` with
    the failing constraints listed in ``violated``.
    """
    D0, C0 = init
    if column_support_counts(C0).max(initial=0) > problem.thresholds[1]:
        raise ValueError("initial code violates the sparsity budget")
    penalty = ProblemPenalty(problem, rng, C0.shape)
    res = alternate(problem.data, D0, C0, problem.model, iters, penalty=penalty, tol=SOLVER_TOL, patience=patience)
    records = [
        TraceRecord(
            r.iteration, r.objective, r.previous, r.fit, r.encode_accepted or r.step_accepted,
            rep.key_rate, rep.probs, rep.satisfied, w,
        )
        for r, rep, w in zip(res.records, penalty.reports, penalty.weight_log)
    ]
    code, restored = restore_side_info(problem, res.code)
    final = penalty.chance(len(records), res.dictionary.atoms, code.coefficients, stream=3)
    hard, violated = certify(problem, code, penalty.draws, final)
    status = "infeasible" if violated else "feasible"
    return SolveTrace(records, res.dictionary, code, status, violated, hard, final, res.stop_reason, restored)


def restore_side_info(problem: ConstraintSet, code: SparseCode) -> tuple[SparseCode, bool]:
    """Smallest move toward the side information (on the support) that meets 6.c.

    With ``C_t = C + t (A - C)`` on the support the distortion is
    ``(1 - t)^2 d_on + d_off``, so ``t`` has a closed form. Returns the code
    unchanged if 6.c already holds or cannot be met on this support.
    """
    lam = problem.thresholds[2]
    if problem.side_info is None or math.isinf(lam):
        return code, False
    C, A, mask = code.coefficients, problem.side_info.values, code.support
    d_on = float(np.sum(((C - A) * mask) ** 2)) / C.size
    d_off = float(np.sum((A * ~mask) ** 2)) / C.size
    target = lam * (1.0 - 1e-9)
    if d_on + d_off <= lam or d_off > target or d_on == 0:
        return code, False
    t = 1.0 - math.sqrt((target - d_off) / d_on)
    moved = C + t * (A - C) * mask
    return code.with_values(np.where(mask & (moved == 0), np.finfo(float).tiny, moved)), True


# --------------------------------------------------------------------------
# ratio traces


@dataclass(frozen=True)
class RatioTrace:
    values: tuple[float, ...]
    flagged: tuple[bool, ...]


ZERO_DENOMINATOR = -1.0


def _pad(seq, n):
    seq = list(seq)
    return seq + [seq[-1]] * (n - len(seq))


def normalized_ratio_trace(constrained, unconstrained) -> RatioTrace:
    """Elementwise ratio of two histories, padding the shorter by its last value.

    Accepts :class:`SolveTrace` objects (objective histories) or sequences.
    0/0 counts as 1; a nonzero over zero gives ``-1`` and is flagged.
    """
    a = constrained.objectives if isinstance(constrained, SolveTrace) else list(constrained)
    b = unconstrained.objectives if isinstance(unconstrained, SolveTrace) else list(unconstrained)
    if not a or not b:
        raise ValueError("histories must be nonempty")
    n = max(len(a), len(b))
    values, flags = [], []
    for x, y in zip(_pad(a, n), _pad(b, n)):
        if y == 0:
            values.append(1.0 if x == 0 else ZERO_DENOMINATOR)
            flags.append(x != 0)
        else:
            values.append(x / y)
            flags.append(False)
    return RatioTrace(tuple(values), tuple(flags))
