"""Command-line front end: market I/O, simulation and analysis subcommands.

Exit codes: 0 success, 1 usage or configuration problem, 2 analysis failure
(state space too large, solver did not converge, chain reducible).
"""
from __future__ import annotations

import argparse
import csv
import gzip
import json
import statistics
import sys
from typing import Optional, Sequence

import numpy as np

from .chain import (
    build_chain,
    classify_states,
    fit_elementary_slopes,
    posm_mass,
    stationary_distribution,
    stationary_residual,
)
from .errors import (
    GridTooSmallError,
    InvalidEpsilonError,
    MarketFormatError,
    MatchLearnError,
    NotConvergedError,
    ReducibleError,
    TooLargeError,
)
from .learning import RuleParams
from .market import (
    enumerate_stable_matches,
    gale_shapley,
    is_stable,
    load_market,
    random_market,
    save_market,
)
from .simulate import SimConfig, batch_run, run

DEFAULT_RESISTANCE_GRID = (0.1, 0.05, 0.02, 0.01)
SLOPE_TOLERANCE = 0.1


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _open_out(path: str):
    if path.endswith(".gz"):
        return gzip.open(path, "wt", encoding="utf-8", newline="")
    return open(path, "w", encoding="utf-8", newline="")


def _write_rows(path: Optional[str], header: list[str], rows: list[list], fmt: str) -> None:
    if fmt == "json":
        payload = [dict(zip(header, row)) for row in rows]
        text = json.dumps(payload, indent=2) + "\n"
        if path:
            with _open_out(path) as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return
    if path:
        fh = _open_out(path)
    else:
        fh = sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path:
            fh.close()


def _params_from_args(args, epsilon: float) -> RuleParams:
    return RuleParams(
        epsilon=epsilon,
        revert_keeps_baseline_utility=args.dd3_revert_keeps_baseline,
        exclude_baseline_from_experiments=not args.no_dd2_exclude_baseline,
    )


def _add_rule_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--dd3-revert-keeps-baseline",
        action="store_true",
        help="failed content experiments keep the old baseline utility instead of overwriting it",
    )
    parser.add_argument(
        "--no-dd2-exclude-baseline",
        action="store_true",
        help="content experiments may redraw the current baseline acceptor",
    )


def cmd_gs(args) -> int:
    market = load_market(args.market)
    posm = gale_shapley(market)
    pairs = " ".join(f"({p},{a})" for p, a in sorted(posm.pairs))
    stable = is_stable(market, posm)
    optimal = None
    count = None
    try:
        stable_matches = enumerate_stable_matches(market)
        count = len(stable_matches)
        optimal = all(
            market.proposer_value(p, posm.proposer_partner[p])
            >= market.proposer_value(p, mu.proposer_partner[p])
            for mu in stable_matches
            for p in market.proposers
        )
    except TooLargeError:
        print("warning: market too large for exhaustive optimality check", file=sys.stderr)
    line = f"{pairs}; stable: {str(stable).lower()}"
    if optimal is not None:
        line += f"; optimal: {str(optimal).lower()} ({count} stable match{'es' if count != 1 else ''})"
    print(line)
    return 0


def cmd_simulate(args) -> int:
    market = load_market(args.market)
    header = [
        "epsilon",
        "seed",
        "posm_frequency",
        "stable_frequency",
        "time_to_first_posm",
        "mean_welfare",
        "modal_match",
    ]
    rows = []
    for eps in args.epsilon:
        params = _params_from_args(args, eps)
        config = SimConfig(market, params, steps=args.steps, seed=0, window=args.window)
        metrics = batch_run(config, args.seed, jobs=args.jobs)
        for seed, m in zip(args.seed, metrics):
            rows.append(
                [
                    _fmt(eps),
                    seed,
                    _fmt(m.posm_frequency),
                    "" if m.stable_frequency is None else _fmt(m.stable_frequency),
                    "" if m.time_to_first_posm is None else m.time_to_first_posm,
                    _fmt(m.mean_welfare),
                    m.modal_match,
                ]
            )
        median = statistics.median(m.posm_frequency for m in metrics)
        print(f"epsilon={_fmt(eps)}: median posm_frequency={_fmt(median)} over {len(metrics)} seeds")
        if args.trace_dir:
            from pathlib import Path

            Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
            for seed in args.seed:
                cfg = SimConfig(
                    market, params, steps=args.steps, seed=int(seed), window=args.window,
                    record_trace=True, backend="reference",
                )
                trace = run(cfg)
                _write_trace(Path(args.trace_dir) / f"trace_eps{_fmt(eps)}_seed{seed}.csv", trace)
    _write_rows(args.out, header, rows, args.format)
    return 0


def _write_trace(path, trace) -> None:
    with _open_out(str(path)) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "actions", "match", "utilities", "moods"])
        for rec in trace.records:
            writer.writerow(
                [
                    rec.t,
                    "|".join(ev.action if ev.action is not None else "-" for ev in rec.events),
                    rec.outcome.describe(),
                    "|".join(_fmt(u) for u in rec.utilities),
                    "|".join(s.mood.value for s in rec.states),
                ]
            )


def cmd_chain(args) -> int:
    market = load_market(args.market)
    params = _params_from_args(args, args.epsilon[0])
    rows_out = []
    masses = []
    for eps in args.epsilon:
        chain = build_chain(market, params.with_epsilon(eps))
        pi = stationary_distribution(chain)
        partition = classify_states(market, chain.states)
        mass = posm_mass(chain, pi, partition)
        top = chain.states[int(np.argmax(pi))]
        top_desc = " ".join(
            f"{p}=({s.mood.value},{s.baseline_action or '-'},{_fmt(s.baseline_utility)})"
            for p, s in zip(market.proposers, top)
        )
        rows_out.append([_fmt(eps), _fmt(mass), top_desc, _fmt(stationary_residual(chain, pi))])
        masses.append((eps, mass))
        if args.dump_chain:
            _dump_chain(args.dump_chain, chain, pi)
    ordered = sorted(masses, key=lambda t: t[0], reverse=True)
    monotone = all(b[1] >= a[1] - 1e-9 for a, b in zip(ordered, ordered[1:]))
    print(f"posm mass nondecreasing as epsilon falls: {str(monotone).lower()}")
    _write_rows(args.out, ["epsilon", "posm_mass", "top_state", "residual"], rows_out, args.format)
    return 0


def _dump_chain(prefix: str, chain, pi) -> None:
    eps_tag = _fmt(chain.epsilon)
    coo = chain.matrix.tocoo()
    with _open_out(f"{prefix}_eps{eps_tag}_transitions.csv") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "col", "prob"])
        for i, j, v in zip(coo.row, coo.col, coo.data):
            writer.writerow([int(i), int(j), _fmt(float(v))])
    legend = {
        str(i): [
            {
                "proposer": p,
                "mood": s.mood.value,
                "baseline_action": s.baseline_action,
                "baseline_utility": s.baseline_utility,
            }
            for p, s in zip(chain.market.proposers, state)
        ]
        for i, state in enumerate(chain.states)
    }
    with open(f"{prefix}_eps{eps_tag}_states.json", "w", encoding="utf-8") as fh:
        json.dump(legend, fh, indent=2)
        fh.write("\n")
    with _open_out(f"{prefix}_eps{eps_tag}_pi.csv") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["state_index", "probability"])
        for i, v in enumerate(pi):
            writer.writerow([i, _fmt(float(v))])


def cmd_resistance(args) -> int:
    market = load_market(args.market)
    if market.n != 2 or market.m != 2:
        print("error: resistance slope fits are defined for 2x2 markets", file=sys.stderr)
        return 1
    params = _params_from_args(args, args.epsilon[0])
    fits = fit_elementary_slopes(market, params, args.epsilon, max_per_kind=args.max_per_kind)
    rows = []
    all_pass = True
    for f in fits:
        ok = f.abs_error <= SLOPE_TOLERANCE
        all_pass = all_pass and ok
        rows.append(
            [f.kind, _fmt(f.value), _fmt(f.theory), _fmt(f.fitted), _fmt(f.abs_error), "pass" if ok else "fail"]
        )
    _write_rows(
        args.out, ["kind", "delta_u", "theory", "fitted_slope", "abs_error", "status"], rows, args.format
    )
    print(f"slope fits within +-{SLOPE_TOLERANCE}: {str(all_pass).lower()}")
    return 0


def cmd_gen_market(args) -> int:
    market = random_market(args.n, args.m, args.seed, mode=args.mode)
    if args.mode == "rank":
        # write ordinal lists so the rank convention is visible in the file
        doc = {
            "proposers": list(market.proposers),
            "acceptors": list(market.acceptors),
            "proposer_prefs": {
                p: sorted(market.acceptors, key=lambda a: -market.proposer_prefs[p][a])
                for p in market.proposers
            },
            "acceptor_prefs": {
                a: sorted(market.proposers, key=lambda p: -market.acceptor_prefs[a][p])
                for a in market.acceptors
            },
        }
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        save_market(market, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gs = sub.add_parser("gs", help="print the proposer-optimal stable match of a market file")
    p_gs.add_argument("--market", required=True)
    p_gs.set_defaults(func=cmd_gs)

    p_sim = sub.add_parser("simulate", help="Monte Carlo runs of the learning rule")
    p_sim.add_argument("--market", required=True)
    p_sim.add_argument("--epsilon", type=float, action="append", required=True)
    p_sim.add_argument("--steps", type=int, required=True)
    p_sim.add_argument("--seed", type=int, action="append", required=True)
    p_sim.add_argument("--window", type=float, default=0.5)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--format", choices=("csv", "json"), default="csv")
    p_sim.add_argument("--jobs", type=int, default=1)
    p_sim.add_argument("--trace-dir", default=None, help="also write full per-step traces here")
    _add_rule_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_chain = sub.add_parser("chain", help="exact stationary analysis over an epsilon sweep")
    p_chain.add_argument("--market", required=True)
    p_chain.add_argument("--epsilon", type=float, action="append", required=True)
    p_chain.add_argument("--out", default=None)
    p_chain.add_argument("--format", choices=("csv", "json"), default="csv")
    p_chain.add_argument("--dump-chain", default=None, help="prefix for transition/state/pi exports")
    _add_rule_flags(p_chain)
    p_chain.set_defaults(func=cmd_chain)

    p_res = sub.add_parser("resistance", help="log-log slope fits of elementary transitions")
    p_res.add_argument("--market", required=True)
    p_res.add_argument(
        "--epsilon", type=float, action="append", default=None,
        help=f"epsilon grid (default {DEFAULT_RESISTANCE_GRID})",
    )
    p_res.add_argument("--max-per-kind", type=int, default=4)
    p_res.add_argument("--out", default=None)
    p_res.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_rule_flags(p_res)
    p_res.set_defaults(func=cmd_resistance)

    p_gen = sub.add_parser("gen-market", help="write a seeded random market file")
    p_gen.add_argument("--n", type=int, required=True)
    p_gen.add_argument("--m", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--mode", choices=("rank", "uniform"), default="rank")
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_market)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if getattr(args, "epsilon", 0) is None and args.command == "resistance":
        args.epsilon = list(DEFAULT_RESISTANCE_GRID)
    try:
        return args.func(args)
    except (TooLargeError, NotConvergedError, ReducibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        MarketFormatError,
        InvalidEpsilonError,
        GridTooSmallError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except MatchLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
