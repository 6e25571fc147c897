"""Experiment configuration, seeded runners producing CSV traces, and the
verifier report.

Configuration is a flat TOML document; every key may be overridden by an
environment variable ``SPARSEKEY_<KEY>`` (upper case, value in TOML syntax).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import graphon, positivity, secrecy, spd
from .coder import PerturbationModel, lowpass_side_info, planted_instance, sparse_encode
from .core import (
    INF,
    ConfigError,
    Dictionary,
    RandomSource,
    SideInfo,
    Thresholds,
    validate_config,
)
from .langevin import LangevinParams, PerturbationWindow, SleDraws, sle_perturb_with
from .optimizer import (
    VARIANTS,
    ChannelModel,
    SolveTrace,
    build_problem,
    effective_snr,
    greedy_solve,
    normalized_ratio_trace,
)

ENV_PREFIX = "SPARSEKEY_"

FIG3_COLUMNS = ("iteration", "objective_constrained", "objective_unconstrained", "ratio")
FIG4_COLUMNS = ("iteration", "keyrate_constrained", "keyrate_unconstrained", "ratio")
FIG7_COLUMNS = ("iteration", "keyrate_with_6a", "keyrate_without_6a", "ratio")
FIG8_COLUMNS = ("lambda8_normalized", "outage_15pct", "outage_5pct", "ratio")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    variant: str = "P2"
    # dimensions and data
    n: int = 8
    m: int = 12
    n_columns: int = 200
    noise: float = 0.01
    warm_start: float = 0.3
    side_info: str = "noisy"
    side_noise: float = 0.6
    iters: int = 60
    n_mc: int = 1000
    # thresholds
    lambda0: float = 12
    lambda1: float = 2
    lambda2: float = 0.05
    lambda3: float = 0.05
    lambda4: float = 0.5
    lambda5: float = 0.25
    lambda6: float = 0.15
    lambda7: float = 0.8
    lambda8: float = 1.0
    lambda9: float = 0.5
    nu1: float = 1e-3
    nu2: float = 1e-3
    gamma0: float = 0.5
    alpha: float = 0.1
    # channel
    sigma: int = 8
    universe: int = 64
    psi: float = 0.3
    snr: float = 10.0
    kappa_e: float = 0.25
    # dynamics and perturbation
    noise_scale: float = 1.0
    dt: float = 0.1
    dynamic_weight: float = 0.01
    xi: float = 0.01
    delta_xi: float = 0.05
    sigma_theta: float = 0.0
    # fig8
    fig8_arms: tuple = (0.15, 0.05)
    fig8_samples: int = 10000
    fig8_points: int = 41
    # graphs
    host_graph: str = "0-1,1-2,2-3,3-0,0-2"
    candidate_pairs: tuple = (("0-1", "0-1,1-2"), ("0-1,1-2", "0-1,1-2,2-0"), ("0-1,1-2", "1-2,2-0"))
    out: str = ""
    parallel: bool = False

    def __post_init__(self):
        if "fig8_arms" in self.__dict__:
            object.__setattr__(self, "fig8_arms", tuple(float(a) for a in self.fig8_arms))
        object.__setattr__(self, "candidate_pairs", tuple(tuple(p) for p in self.candidate_pairs))
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {sorted(VARIANTS)}")
        problems = validate_config(self.thresholds)
        if problems:
            raise ConfigError("; ".join(str(p) for p in problems))
        if self.lambda0 != self.m:
            raise ConfigError("lambda0 (atom budget) must equal m")
        if self.lambda1 > self.m:
            raise ConfigError("lambda1 exceeds the number of atoms")
        if self.side_info not in ("noisy", "lowpass"):
            raise ConfigError("side_info must be 'noisy' or 'lowpass'")
        if self.side_noise < 0 or self.warm_start < 0 or self.noise < 0:
            raise ConfigError("noise levels must be nonnegative")
        if min(self.n_mc, self.fig8_samples) < 100:
            raise ConfigError("sample counts must be >= 100")
        if min(self.n, self.m, self.n_columns, self.iters, self.fig8_points) < 1:
            raise ConfigError("dimensions and counts must be positive")
        if len(self.fig8_arms) != 2 or min(self.fig8_arms) <= 0:
            raise ConfigError("fig8_arms must hold two positive fractions")
        if not self.seed >= 0:
            raise ConfigError("seed must be a nonnegative integer")
        try:
            self.channel
            self.langevin
            self.window
            PerturbationModel(self.sigma_theta)
            graphon.SmallGraph.parse(self.host_graph)
            for a, b in self.candidate_pairs:
                graphon.SmallGraph.parse(a), graphon.SmallGraph.parse(b)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def thresholds(self) -> Thresholds:
        lam = tuple(getattr(self, f"lambda{i}") for i in range(10))
        lam = tuple(int(v) if i < 2 and float(v).is_integer() else v for i, v in enumerate(lam))
        return Thresholds(lam, self.nu1, self.nu2, self.gamma0, self.alpha)

    @property
    def channel(self) -> ChannelModel:
        return ChannelModel(self.sigma, self.universe, self.psi, self.snr, self.kappa_e)

    @property
    def langevin(self) -> LangevinParams:
        return LangevinParams(self.gamma0, self.noise_scale, self.dt)

    @property
    def window(self) -> PerturbationWindow:
        return PerturbationWindow(self.xi, self.delta_xi)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    default = _FIELDS[name].default
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        return value if isinstance(value, (int, float)) else int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _parse_env_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw


def load_config(path: str | os.PathLike | None = None, env: dict | None = None, **overrides) -> ExperimentConfig:
    """Defaults, then the TOML file, then ``SPARSEKEY_*`` variables, then ``overrides``."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                values.update(tomllib.load(fh))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    env = os.environ if env is None else env
    for key, raw in env.items():
        if key.startswith(ENV_PREFIX):
            values[key[len(ENV_PREFIX):].lower()] = _parse_env_value(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


# --------------------------------------------------------------------------
# CSV


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.12g" % float(x)


@dataclass(frozen=True)
class CsvTrace:
    header: tuple[str, ...]
    rows: tuple[tuple, ...]
    status: str = "feasible"
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if any(len(r) != len(self.header) for r in self.rows):
            raise ValueError("rows must match the header width")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([format_number(v) for v in row])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_csv().encode("ascii"))

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


# --------------------------------------------------------------------------
# experiment setup


@dataclass(frozen=True)
class Setup:
    data: object
    true_dictionary: Dictionary
    side_info: object
    init_dictionary: Dictionary


def make_setup(cfg: ExperimentConfig) -> Setup:
    """Planted data, side information and a perturbed warm-start dictionary.

    ``side_info = "noisy"`` uses the planted code plus N(0, side_noise^2) on
    its support; ``"lowpass"`` encodes a blockwise-averaged copy of the data.
    """
    root = RandomSource(cfg.seed)
    x, D, C = planted_instance(cfg.n, cfg.m, int(cfg.lambda1), cfg.n_columns, root.child(10), cfg.noise)
    if cfg.side_info == "lowpass":
        side = lowpass_side_info(x, D, int(cfg.lambda1))
    else:
        jitter_c = root.child(12).normal(C.shape, scale=cfg.side_noise)
        side = SideInfo(C.coefficients + jitter_c * C.support)
    jitter = root.child(11).normal(D.atoms.shape, scale=cfg.warm_start)
    D0 = Dictionary.from_matrix(D.atoms + jitter, cfg.m)
    return Setup(x, D, side, D0)


def solve(cfg: ExperimentConfig, setup: Setup | None = None, *, variant: str | None = None, **lam) -> SolveTrace:
    """One greedy solve under ``cfg`` with optional threshold overrides (``lambda2=...``)."""
    setup = setup or make_setup(cfg)
    th = cfg.thresholds.replace(**lam)
    problem = build_problem(
        variant or cfg.variant, th, setup.data, setup.side_info,
        window=cfg.window, langevin=cfg.langevin, channel=cfg.channel,
        dynamic_weight=cfg.dynamic_weight, model=PerturbationModel(cfg.sigma_theta), n_mc=cfg.n_mc,
    )
    budget = int(th[1])
    code = sparse_encode(setup.init_dictionary, setup.data, budget)
    return greedy_solve(problem, (setup.init_dictionary, code), cfg.iters, RandomSource(cfg.seed).child(20))


def _arms(cfg: ExperimentConfig, *thunks):
    """Evaluate independent solver arms, concurrently when ``cfg.parallel``.

    Each arm derives its own streams from the seed, so results do not
    depend on scheduling.
    """
    if not cfg.parallel:
        return [t() for t in thunks]
    with ThreadPoolExecutor(max_workers=len(thunks)) as pool:
        return [f.result() for f in [pool.submit(t) for t in thunks]]


def _ratio_rows(a: list, b: list) -> list[tuple]:
    ratio = normalized_ratio_trace(a, b)
    n = len(ratio.values)
    pad = lambda s: list(s) + [s[-1]] * (n - len(s))  # noqa: E731
    return [(i, x, y, r) for i, (x, y, r) in enumerate(zip(pad(a), pad(b), ratio.values))]


def _status(*traces: SolveTrace) -> str:
    bad = sorted({v for t in traces for v in t.violated})
    return "feasible" if not bad else "infeasible:" + ",".join(bad)


def run_fig3(cfg: ExperimentConfig) -> CsvTrace:
    """Objective per iteration with finite lambda2/lambda3 against the unconstrained run."""
    setup = make_setup(cfg)
    con, unc = _arms(cfg, lambda: solve(cfg, setup), lambda: solve(cfg, setup, lambda2=INF, lambda3=INF))
    return CsvTrace(FIG3_COLUMNS, tuple(_ratio_rows(con.objectives, unc.objectives)), _status(con))


def run_fig4(cfg: ExperimentConfig) -> CsvTrace:
    """Mean key rate per iteration under P3'' against the unconstrained run."""
    setup = make_setup(cfg)
    con, unc = _arms(
        cfg,
        lambda: solve(cfg, setup, variant="P3doubleprime"),
        lambda: solve(cfg, setup, variant="P3doubleprime", lambda2=INF, lambda3=INF),
    )
    return CsvTrace(FIG4_COLUMNS, tuple(_ratio_rows(con.key_rates, unc.key_rates)), _status(con))


def run_fig7(cfg: ExperimentConfig) -> CsvTrace:
    """Mean key rate with the sparsity budget lambda1 against lambda1 = m."""
    setup = make_setup(cfg)
    with_a, without = _arms(cfg, lambda: solve(cfg, setup), lambda: solve(cfg, setup, lambda1=cfg.m))
    return CsvTrace(FIG7_COLUMNS, tuple(_ratio_rows(with_a.key_rates, without.key_rates)), _status(with_a))


def perturbed_rates(cfg: ExperimentConfig, trace: SolveTrace, setup: Setup, fractions, n_samples: int, rng: RandomSource, chunk: int = 500):
    """Key-rate samples when the code is perturbed with a relative step size.

    For each sample the perturbation step is scaled so that the change of
    the code has Frobenius norm ``fraction * ||code||``. Every fraction uses
    the same draws. Returns one array of rates per fraction.
    """
    X = setup.data.values
    D = trace.dictionary.atoms
    C = trace.code
    energy = float(np.sum(X * X))
    fit = float(np.sum((X - D @ C.coefficients) ** 2)) / energy
    c_norm = float(np.linalg.norm(C.coefficients))
    window = cfg.window
    ch = cfg.channel
    pert = np.empty(n_samples)
    done = 0
    while done < n_samples:
        k = min(chunk, n_samples - done)
        for i in range(k):
            draws = SleDraws.draw(C.shape, rng)
            _, _, forcing = sle_perturb_with(C, window, draws)
            f_norm = float(np.linalg.norm(forcing))
            delta = D @ forcing
            pert[done + i] = (float(np.sum(delta * delta)) / f_norm**2 if f_norm > 0 else 0.0)
        done += k
    ab, ae = secrecy.sample_pattern_batch(ch.sigma, ch.psi, ch.universe, n_samples, rng)
    psi_hat = (ab & ae).sum(axis=1) / ch.sigma
    gain = rng.exponential(n_samples)
    out = []
    for frac in fractions:
        rel = fit + (frac * c_norm) ** 2 * pert / energy
        omega = effective_snr(ch.snr, gain, 0.0) / (1.0 + ch.snr * rel)
        out.append(secrecy.key_rate_batch(psi_hat, ch.sigma, omega, ch.kappa_e))
    return out


def run_fig8(cfg: ExperimentConfig) -> CsvTrace:
    """Outage against the normalised rate threshold for two perturbation sizes."""
    setup = make_setup(cfg)
    trace = solve(cfg, setup)
    big, small = perturbed_rates(
        cfg, trace, setup, cfg.fig8_arms, cfg.fig8_samples, RandomSource(cfg.seed).child(30)
    )
    top = float(max(big.max(), small.max()))
    lo = float(min(big.min(), small.min()))
    sweep = np.linspace(lo, top, cfg.fig8_points)
    o_big = [secrecy.outage(big, t) for t in sweep]
    o_small = [secrecy.outage(small, t) for t in sweep]
    ratio = normalized_ratio_trace(o_big, o_small)
    norm = sweep / top if top > 0 else sweep
    rows = tuple(zip(norm, o_big, o_small, ratio.values))
    flagged = any(b < s - 0.02 for b, s in zip(o_big, o_small))
    notes = ("15%-arm outage below 5%-arm beyond tolerance",) if flagged else ()
    return CsvTrace(FIG8_COLUMNS, rows, _status(trace), notes)


# --------------------------------------------------------------------------
# verifiers


def _brute_hom(f: graphon.SmallGraph, g: graphon.SmallGraph) -> int:
    count = 0
    for phi in itertools.product(range(g.n_vertices), repeat=f.n_vertices):
        if all(g.adjacency[phi[u], phi[v]] for u, v in f.edges):
            count += 1
    return count


def verify_graphon(cfg: ExperimentConfig) -> dict:
    host = graphon.SmallGraph.parse(cfg.host_graph)
    pairs = [(graphon.SmallGraph.parse(a), graphon.SmallGraph.parse(b)) for a, b in cfg.candidate_pairs]
    patterns = [p for pair in pairs for p in pair] + [graphon.SmallGraph.parse("0-1")]
    mismatches = sum(graphon.hom_count(f, host) != _brute_hom(f, host) for f in patterns)
    k_ok = all(
        abs(graphon.hom_density(graphon.SmallGraph.parse("0-1"), graphon.SmallGraph.complete(k)) - (k - 1) / k) < 1e-15
        for k in range(2, 7)
    )
    best = graphon.minimize_density_gap(pairs, host, cfg.nu1)
    return {
        "passed": mismatches == 0 and k_ok,
        "hom_mismatches": mismatches,
        "edge_in_complete_closed_form": k_ok,
        "best_pair_index": best.index,
        "best_gap": best.gap,
        "best_within_nu1": best.within_tolerance,
    }


def verify_spd(cfg: ExperimentConfig) -> dict:
    rng = RandomSource(cfg.seed).child(40)
    worst_zero = worst_round = 0.0
    for _ in range(20):
        A = rng.normal((4, 4))
        B = rng.normal((4, 4))
        base = A @ A.T + 0.5 * np.eye(4)
        point = B @ B.T + 0.5 * np.eye(4)
        worst_zero = max(worst_zero, float(np.abs(spd.riemannian_log(base, base)).max()))
        back = spd.riemannian_exp(base, spd.riemannian_log(base, point))
        worst_round = max(worst_round, float(np.linalg.norm(back - point)))
    eta = spd.relaxability_check(
        [(np.array([0.0, 1.0]), np.array([1.0, 3.0])), (np.array([2.0]), np.array([-1.0]))],
        [(np.array([0.1]), np.array([0.4])), (np.array([1.0, 0.0]), np.array([0.0, 1.0]))],
        lambda v: 3.0 * np.asarray(v),
    )
    g1, g2 = (graphon.SmallGraph.parse(s) for s in cfg.candidate_pairs[0])
    size = max(g1.n_vertices, g2.n_vertices)
    s1 = spd.graph_spd(_padded_laplacian(g1, size))
    s2 = spd.graph_spd(_padded_laplacian(g2, size))
    tangent = spd.riemannian_log(s1, s2)
    ok = worst_zero <= 1e-12 and worst_round < 1e-8 and eta is not None and abs(eta[0] - 9.0) < 1e-12
    return {
        "passed": bool(ok),
        "log_at_base_max": worst_zero,
        "roundtrip_max": worst_round,
        "scaling_eta": list(eta) if eta is not None else None,
        "graph_tangent_norm": float(np.linalg.norm(tangent)),
    }


def _padded_laplacian(g: graphon.SmallGraph, size: int) -> np.ndarray:
    L = np.zeros((size, size))
    L[: g.n_vertices, : g.n_vertices] = g.laplacian()
    return L


def verify_positivity(cfg: ExperimentConfig) -> dict:
    rng = RandomSource(cfg.seed).child(41)
    worst, bound, positive = 0.0, 0.0, True
    for _ in range(10):
        mu = positivity.CircleMeasure.random(rng)
        fld = positivity.DiskField.poisson(mu, 64, 128, 0.6)
        worst = max(worst, positivity.harmonic_residual(fld))
        bound = positivity.second_order_bound(fld)
        positive &= positivity.positivity_check(fld)
    z = 0.7 * np.exp(1j * 0.3)
    herglotz_gap = abs(positivity.herglotz_kernel(z, 1.1).real - positivity.poisson_kernel(0.7, 0.3 - 1.1))
    probes = 3.0 * rng.uniform(10)
    gauss = positivity.bochner_check(lambda d: math.exp(-d * d / 2), probes)
    bad = positivity.bochner_check(lambda d: 1.0 if d == 0 else -1.0, [0.0, 1.0, 2.0])
    ok = worst <= bound and positive and herglotz_gap < 1e-12 and gauss.positive_definite and not bad.positive_definite
    return {
        "passed": bool(ok),
        "harmonic_residual_max": worst,
        "second_order_bound": bound,
        "strictly_positive": bool(positive),
        "herglotz_real_gap": herglotz_gap,
        "gaussian_min_eigenvalue": gauss.min_eigenvalue,
        "counterexample_min_eigenvalue": bad.min_eigenvalue,
    }


def verify_secrecy(cfg: ExperimentConfig) -> dict:
    rng = RandomSource(cfg.seed).child(42)
    ch = cfg.channel
    omega = ch.snr * rng.exponential(200) + 1e-9
    r = secrecy.key_rate(ch.psi, ch.sigma, omega, ch.kappa_e)
    expanded = ch.sigma * float(np.mean(secrecy.mi_bob(omega / ch.sigma))) - ch.psi * ch.sigma * float(
        np.mean(secrecy.mi_eve(omega / ch.sigma, ch.kappa_e))
    )
    ab, ae = secrecy.sample_pattern_batch(ch.sigma, ch.psi, ch.universe, 20000, rng)
    overlap = secrecy.empirical_overlap(ab, ae)
    keys = (4 * rng.uniform(10000)).astype(int)
    beta = (4 * rng.uniform(10000)).astype(int)
    report = secrecy.alpha_key_check(secrecy.KeySession(keys, keys, beta, 4), cfg.alpha)
    ok = abs(r - expanded) < 1e-12 and abs(overlap - ch.psi) < 0.02 and all(report)
    return {
        "passed": bool(ok),
        "key_rate": r,
        "identity_gap": abs(r - expanded),
        "overlap_estimate": overlap,
        "alpha_key": [bool(v) for v in report],
    }


VERIFIERS = {
    "graphon": verify_graphon,
    "spd-riemannian": verify_spd,
    "positivity": verify_positivity,
    "secrecy": verify_secrecy,
}


def run_verifiers(cfg: ExperimentConfig) -> dict:
    """Run every verifier; an exception marks that module as failed."""
    modules = {}
    for name, fn in VERIFIERS.items():
        try:
            modules[name] = fn(cfg)
        except Exception as exc:  # reported, never swallowed silently
            modules[name] = {"passed": False, "error": f"{type(exc).__name__}: {exc}"}
    failing = [k for k, v in modules.items() if not v["passed"]]
    return {"passed": not failing, "failing": failing, "seed": cfg.seed, "modules": modules}
