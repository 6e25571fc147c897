"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 infeasible solve,
3 verifier failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import graphon, secrecy
from .core import ConfigError, RandomSource
from .experiments import (
    CsvTrace,
    load_config,
    run_fig3,
    run_fig4,
    run_fig7,
    run_fig8,
    run_verifiers,
    solve,
)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VERIFIER = 0, 1, 2, 3

SOLVE_COLUMNS = ("iteration", "objective", "previous", "fit", "accepted", "key_rate")


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def cmd_solve(cfg, args) -> int:
    trace = solve(cfg)
    rows = tuple(
        (r.iteration, r.objective, r.previous, r.fit, r.accepted, r.key_rate) for r in trace.records
    )
    _emit(CsvTrace(SOLVE_COLUMNS, rows).to_csv(), args.out)
    print(f"status: {trace.status}" + (f" ({', '.join(trace.violated)})" if trace.violated else ""), file=sys.stderr)
    return EXIT_OK if trace.feasible else EXIT_INFEASIBLE


def cmd_keyrate(cfg, args) -> int:
    ch = cfg.channel
    if args.omega:
        omega = np.asarray(args.omega, dtype=float)
    else:
        omega = ch.snr * RandomSource(cfg.seed).child(50).exponential(cfg.n_mc)
    rate = secrecy.key_rate(ch.psi, ch.sigma, omega, ch.kappa_e)
    doc = {
        "key_rate": rate,
        "psi": ch.psi,
        "sigma": ch.sigma,
        "kappa_e": ch.kappa_e,
        "n_steps": int(omega.size),
        "outage_at_lambda8": secrecy.outage(
            secrecy.key_rate_batch(ch.psi, ch.sigma, omega, ch.kappa_e), cfg.lambda8
        ),
    }
    _emit(_json(doc), args.out)
    return EXIT_OK


def cmd_graphon(cfg, args) -> int:
    host = graphon.SmallGraph.parse(cfg.host_graph)
    pairs = [(graphon.SmallGraph.parse(a), graphon.SmallGraph.parse(b)) for a, b in cfg.candidate_pairs]
    best = graphon.minimize_density_gap(pairs, host, cfg.nu1)
    doc = {
        "host": str(host),
        "best_pair": [str(g) for g in best.pair],
        "best_index": best.index,
        "gap": best.gap,
        "within_nu1": best.within_tolerance,
        "gaps": list(best.gaps),
    }
    _emit(_json(doc), args.out)
    return EXIT_OK


def cmd_verify(cfg, args) -> int:
    report = run_verifiers(cfg)
    _emit(_json(report), args.out)
    if not report["passed"]:
        print(f"verifier failure: {', '.join(report['failing'])}", file=sys.stderr)
        return EXIT_VERIFIER
    return EXIT_OK


def _figure(runner):
    def run(cfg, args) -> int:
        trace = runner(cfg)
        _emit(trace.to_csv(), args.out)
        for note in trace.notes:
            print(f"warning: {note}", file=sys.stderr)
        if trace.status != "feasible":
            print(f"status: {trace.status}", file=sys.stderr)
            return EXIT_INFEASIBLE
        return EXIT_OK

    return run


COMMANDS = {
    "solve": (cmd_solve, "run the penalised solver and write its trace as CSV"),
    "keyrate": (cmd_keyrate, "evaluate the secret-key rate for the configured channel"),
    "graphon": (cmd_graphon, "scan candidate graph pairs for the smallest density gap"),
    "verify": (cmd_verify, "run every verifier and write a JSON report"),
    "fig3": (_figure(run_fig3), "objective trace, constrained vs unconstrained"),
    "fig4": (_figure(run_fig4), "key-rate trace under P3'', constrained vs unconstrained"),
    "fig7": (_figure(run_fig7), "key-rate trace with vs without the sparsity budget"),
    "fig8": (_figure(run_fig8), "outage vs normalised rate threshold for two perturbation sizes"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the configured seed")
    common.add_argument("--out", metavar="PATH", help="output file (default: stdout)")
    parser = argparse.ArgumentParser(prog="sparsekey", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name.startswith("fig"):
            p.add_argument("--parallel", action="store_true", default=None, help="run the solver arms concurrently")
        if name == "keyrate":
            p.add_argument("--omega", type=float, nargs="+", help="SNR path (default: fading draws)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, parallel=getattr(args, "parallel", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = COMMANDS[args.command][0]
    try:
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
