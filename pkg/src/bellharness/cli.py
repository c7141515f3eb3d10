"""``bellharness`` command line.

Exit codes: 0 success, 1 replay mismatch, 2 usage, 3 protocol violation or
connection failure, 4 timeout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import fourier, stats
from .harness import (DEFAULT_SEED_LAMBDA, DEFAULT_SEED_SETTINGS, ConfigError, RunConfig, RunLog,
                      replay_verify, run_in_process)
from .model import SettingGrid, StrategyPair, get_strategy, strategy_names
from .protocol import E_TIMEOUT, ProtocolError

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_PROTOCOL, EXIT_TIMEOUT = 0, 1, 2, 3, 4
SEED_ENV = "BELLHARNESS_SEED"

log = logging.getLogger("bellharness")


class UsageError(Exception):
    pass


def _emit(args, doc: dict, text: str) -> None:
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable))
    else:
        print(text)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"address must look like host:port, got {text!r}")
    return host, int(port)


def _seeds(args) -> tuple[int, int]:
    base = args.seed
    if base is None and os.environ.get(SEED_ENV):
        try:
            base = int(os.environ[SEED_ENV], 0)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer") from None
    lam = DEFAULT_SEED_LAMBDA if base is None else base
    sett = DEFAULT_SEED_SETTINGS if base is None else base
    if args.seed_lambda is not None:
        lam = args.seed_lambda
    if args.seed_settings is not None:
        sett = args.seed_settings
    return lam, sett


def _config_from_args(args, **overrides) -> RunConfig:
    grid = SettingGrid(args.grid)
    seed_lambda, seed_settings = _seeds(args)
    kw = dict(
        N=args.n, seed_lambda=seed_lambda, seed_settings=seed_settings, M=args.grid,
        setting_mode=args.mode, alice=args.a, bob=args.b, oracle=args.oracle,
        memory_mode=args.memory, virtual_source=args.virtual_source,
    )
    if args.alice_deg:
        kw["alice_settings"] = tuple(grid.index_of_degrees(d) for d in args.alice_deg)
    if args.bob_deg:
        kw["bob_settings"] = tuple(grid.index_of_degrees(d) for d in args.bob_deg)
    if args.mode == "fixed-delta":
        kw["delta"] = grid.offset_of_degrees(args.delta_deg)
    kw.update(overrides)
    return RunConfig(**kw)


def _run_summary(run: RunLog, orientation: str) -> tuple[dict, str]:
    corr = stats.estimate_correlations(run)
    lines = [f"trials: {len(run)}  digest: {run.digest_hex}"
             + ("  [nonlocal source]" if run.nonlocal_source else "")]
    doc = {"N": len(run), "digest": run.digest_hex, "nonlocal": run.nonlocal_source,
           "config": run.config.to_dict(), "correlations": corr.to_dict()}
    cells = "  ".join(f"rho{a}{b}={corr[(a, b)]:+.4f} (n={corr.counts[(a, b)]})"
                      if corr[(a, b)] is not None else f"rho{a}{b}=absent" for a, b in stats.CELLS)
    lines.append(cells)
    try:
        S = stats.chsh_score(corr)
        doc["chsh"] = S
        lines.append(f"CHSH S = {S:+.4f}")
    except stats.MissingCellError as exc:
        doc["chsh"] = None
        lines.append(f"CHSH S unavailable: {exc}")
    verdict = stats.bell_test(stats.success_count(run, flip_bob=orientation == "anti"))
    doc["bell_test"] = verdict.to_dict()
    doc["orientation"] = orientation
    lines.append(f"successes {verdict.S_N}/{verdict.N} = {verdict.success_rate:.4f}  "
                 f"p-value (Bin(N, 3/4) bound) = {verdict.p_value:.3g}  "
                 f"[log10 p = {verdict.log10_p_value:.2f}]")
    return doc, "\n".join(lines)


def cmd_simulate(args) -> int:
    if args.sweep_deg:
        if args.mode != "fixed-delta":
            raise UsageError("--sweep-deg needs --mode fixed-delta")
        grid = SettingGrid(args.grid)
        rows, docs = [], []
        for deg in args.sweep_deg:
            cfg = _config_from_args(args, delta=grid.offset_of_degrees(deg))
            run = _execute(cfg, args)
            xy = run.x * run.y
            rows.append((deg, float(xy.mean())))
            docs.append({"theta_deg": deg, "correlation": float(xy.mean()), "digest": run.digest_hex})
        if args.curve_csv:
            fourier.write_indexed_csv(args.curve_csv, [np.radians(d) for d, _ in rows],
                                      [v for _, v in rows])
        text = "\n".join(f"theta={d:7.2f} deg  E[xy]={v:+.5f}  -cos={-np.cos(np.radians(d)):+.5f}"
                         for d, v in rows)
        _emit(args, {"sweep": docs}, text)
        return EXIT_OK
    cfg = _config_from_args(args)
    run = _execute(cfg, args)
    if args.out:
        run.save(args.out)
    doc, text = _run_summary(run, args.orientation)
    _emit(args, doc, text)
    return EXIT_OK


def _execute(cfg: RunConfig, args) -> RunLog:
    if args.transport == "sockets":
        from .net import run_sockets
        return run_sockets(cfg, timeout=args.timeout)
    return run_in_process(cfg)


def cmd_spectrum(args) -> int:
    strat = get_strategy(args.strategy)
    if strat.memory_mode:
        raise UsageError(f"strategy {args.strategy!r} uses memory and has no Fourier representation")
    seed = _seeds(args)[0]
    grid = SettingGrid(args.grid)
    corr, report = fourier.expected_correlation(strat, seed, args.n_lambda, grid)
    k_hat, residual = fourier.cosine_fit(corr)
    if args.csv:
        corr.to_csv(args.csv)
    if args.report:
        report.to_json(args.report)
    doc = {"strategy": strat.name, "n_lambda": args.n_lambda, "seed": seed,
           "report": report.to_dict(), "cosine_fit": {"k_hat": k_hat, "residual": residual}}
    text = (f"strategy {strat.name}, {args.n_lambda} hidden variables, M={grid.M}\n"
            f"Parseval residual {report.parseval_residual:.3e}\n"
            f"mass at k=+-1 {report.mass_pm1:.6f}  off-harmonic mass {report.off_harmonic_mass:.6f}\n"
            f"power[0] {report.power[0]:.6f}\n"
            f"cosine fit: k_hat={k_hat:.6f} residual={residual:.6f}")
    _emit(args, doc, text)
    return EXIT_OK


def cmd_certificate(args) -> int:
    if not 0.0 <= args.k <= 1.0:
        raise UsageError(f"k must lie in [0, 1], got {args.k}")
    rep = fourier.impossibility_certificate(args.k, SettingGrid(args.grid))
    text = (f"target C = -{args.k:g} cos(theta) on M={rep.M}: "
            f"{'FEASIBLE' if rep.feasible else 'INFEASIBLE'}\n"
            f"required mass per side {rep.required_mass_per_side:.6f}, "
            f"grid max {rep.max_mass_per_side:.6f} "
            f"({'exhaustive' if rep.exhaustive else 'half-circle table, not exhaustive'})\n"
            f"Parseval deficit {rep.parseval_deficit:.6f}\n"
            + "\n".join(f"  - {r}" for r in rep.reasons))
    _emit(args, rep.to_dict(), text)
    return EXIT_OK


def cmd_chsh(args) -> int:
    if args.log:
        run = RunLog.load(args.log)
        doc, text = _run_summary(run, args.orientation)
        _emit(args, doc, text)
        return EXIT_OK
    if not args.rho:
        raise UsageError("give --log or --rho r11 r12 r21 r22")
    if any(abs(r) > 1 for r in args.rho):
        raise UsageError("correlations must lie in [-1, 1]")
    corr = stats.ChshCorrelations(*args.rho)
    S = stats.chsh_score(corr)
    _emit(args, {"correlations": corr.to_dict(), "chsh": S},
          f"CHSH S = {S:+.6f}  (local bound |S| <= 2{', violated' if abs(S) > 2 else ''})")
    return EXIT_OK


def cmd_fine(args) -> int:
    if args.table:
        table = stats.ProbabilityTable.from_json(args.table)
    elif args.example:
        cfg = RunConfig(N=1, M=args.grid)
        grid = cfg.grid
        if args.example == "singlet":
            table = stats.singlet_table([grid.angle(j) for j in cfg.alice_settings],
                                        [grid.angle(j) for j in cfg.bob_settings])
        else:
            table = stats.strategy_table(StrategyPair.from_names("sign", "antipodal"),
                                         cfg.alice_settings, cfg.bob_settings, grid)
    else:
        raise UsageError("give --table FILE or --example singlet|sign")
    if args.write_table:
        table.to_json(args.write_table)
    rep = stats.fine_check(table)
    lines = [f"verdict: {rep.verdict}"]
    for c in rep.constraints:
        lines.append(f"  {'ok  ' if c.passed else 'FAIL'} {c.name:28s} value={c.value:+.6f} "
                     f"slack={c.slack:+.6f}")
    if not rep.lhv_representable:
        lines.append(f"binding: {rep.binding.name}")
    _emit(args, {**rep.to_dict(), "binding": rep.binding.name}, "\n".join(lines))
    return EXIT_OK


def cmd_boole(args) -> int:
    try:
        res = stats.boole_check(args.p, args.q, args.r, method=args.method)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if res.feasible:
        text = "feasible; witness " + ", ".join(
            f"P({''.join('+' if v > 0 else '-' for v in atom)})={w:.4f}"
            for atom, w in res.witness.items() if w > 0)
    else:
        text = "infeasible; violated: " + "; ".join(res.violated)
    _emit(args, res.to_dict(), text)
    return EXIT_OK


def cmd_replay(args) -> int:
    run = RunLog.load(args.log)
    res = replay_verify(run)
    _emit(args, {"ok": res.ok, "first_mismatch": res.first_mismatch, "reason": res.reason},
          "replay OK: bit-identical" if res.ok else f"replay MISMATCH: {res.reason}")
    return EXIT_OK if res.ok else EXIT_MISMATCH


def cmd_serve(args) -> int:
    from .net import Referee
    cfg = _config_from_args(args, transport="sockets")
    referee = Referee(cfg, _parse_address(args.listen), timeout=args.timeout,
                      accept_timeout=args.accept_timeout)
    print(f"listening on {referee.address[0]}:{referee.address[1]}", file=sys.stderr, flush=True)
    run = referee.run()
    if args.out:
        run.save(args.out)
    doc, text = _run_summary(run, args.orientation)
    names = referee.strategy_names
    if names.get("alice") and names.get("bob"):
        try:
            local = run_in_process(replace(cfg, alice=names["alice"], bob=names["bob"]))
        except ConfigError:
            local = None
        if local is not None:
            doc["in_process_digest"] = local.digest_hex
            doc["transport_equivalent"] = local.digest == run.digest
            text += (f"\nin-process digest {local.digest_hex}: "
                     f"{'match' if local.digest == run.digest else 'MISMATCH'}")
    _emit(args, doc, text)
    return EXIT_OK


def cmd_station(args) -> int:
    from .net import run_source, run_station
    address = _parse_address(args.connect)
    if args.role == "source":
        n = run_source(address, timeout=args.timeout)
    else:
        if not args.strategy:
            raise UsageError("stations need --strategy")
        get_strategy(args.strategy)
        n = run_station(address, args.role, args.strategy, timeout=args.timeout)
    _emit(args, {"role": args.role, "trials": n}, f"{args.role}: served {n} trials")
    return EXIT_OK


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--a", default="sign", help="Alice's strategy (default: sign)")
    p.add_argument("--b", default="antipodal",
                   help="Bob's strategy; 'antipodal' negates Alice's (default)")
    p.add_argument("--oracle", choices=["singlet"], help="use the nonlocal singlet sampler instead")
    p.add_argument("--mode", choices=["fourpoint", "fixed-delta", "uniform"], default="fourpoint")
    p.add_argument("--delta-deg", type=float, default=0.0, help="setting offset for fixed-delta")
    p.add_argument("--alice-deg", type=float, nargs=2, metavar=("A1", "A2"))
    p.add_argument("--bob-deg", type=float, nargs=2, metavar=("B1", "B2"))
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--grid", type=int, default=360)
    p.add_argument("--seed", type=lambda s: int(s, 0), help=f"seed for both streams (env {SEED_ENV})")
    p.add_argument("--seed-lambda", type=lambda s: int(s, 0))
    p.add_argument("--seed-settings", type=lambda s: int(s, 0))
    p.add_argument("--memory", action="store_true", help="let stations see their own history")
    p.add_argument("--virtual-source", action="store_true",
                   help="stations derive lambda from the shared seed instead of a source process")
    p.add_argument("--orientation", choices=["anti", "direct"], default="anti",
                   help="score (x, -y) [anti, default] or (x, y) [direct] in the success count")
    p.add_argument("--timeout", type=float, default=30.0, help="per-trial deadline in seconds")
    p.add_argument("--out", help="write the run log (JSON lines) here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellharness",
                                     description="Distributed Bell-test harness and analysis tools.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "run an experiment and test it")
    _run_flags(p)
    p.add_argument("--transport", choices=["in-process", "sockets"], default="in-process")
    p.add_argument("--sweep-deg", type=float, nargs="+",
                   help="fixed-delta only: run once per offset and report E[xy]")
    p.add_argument("--curve-csv", help="with --sweep-deg, write the correlation curve here")

    p = add("spectrum", cmd_spectrum, "average power spectrum of a strategy")
    p.add_argument("--strategy", default="sign", help=f"one of {', '.join(strategy_names())}")
    p.add_argument("--n-lambda", type=int, default=10000)
    p.add_argument("--grid", type=int, default=360)
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.add_argument("--seed-lambda", type=lambda s: int(s, 0))
    p.add_argument("--seed-settings", type=lambda s: int(s, 0))
    p.add_argument("--csv", help="write the correlation function as CSV")
    p.add_argument("--report", help="write the spectrum report as JSON")

    p = add("certificate", cmd_certificate, "spectral impossibility certificate for -k cos")
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=360)

    p = add("chsh", cmd_chsh, "CHSH score of a run log or of four correlations")
    p.add_argument("--log")
    p.add_argument("--rho", type=float, nargs=4, metavar=("R11", "R12", "R21", "R22"))
    p.add_argument("--orientation", choices=["anti", "direct"], default="anti")

    p = add("fine", cmd_fine, "Fine's-theorem check of a probability table")
    p.add_argument("--table", help="JSON file with key pxy_ab")
    p.add_argument("--example", choices=["singlet", "sign"],
                   help="analytic table at the default CHSH angles")
    p.add_argument("--grid", type=int, default=360)
    p.add_argument("--write-table", help="also save the analysed table")

    p = add("boole", cmd_boole, "three-event feasibility")
    p.add_argument("p", type=float)
    p.add_argument("q", type=float)
    p.add_argument("r", type=float)
    p.add_argument("--method", choices=["inequalities", "lp"], default="inequalities")

    p = add("replay", cmd_replay, "re-run a logged configuration and compare")
    p.add_argument("--log", required=True)

    p = add("serve", cmd_serve, "run the referee over TCP")
    _run_flags(p)
    p.add_argument("--listen", default="127.0.0.1:9000")
    p.add_argument("--accept-timeout", type=float, default=120.0)

    p = add("station", cmd_station, "connect a station or the source to a referee")
    p.add_argument("--connect", default="127.0.0.1:9000")
    p.add_argument("--role", choices=["alice", "bob", "source"], required=True)
    p.add_argument("--strategy", help="built-in strategy name; prefix '-' to negate "
                                      "(write --strategy=-sign)")
    p.add_argument("--timeout", type=float, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (UsageError, ConfigError, KeyError) as exc:
        print(f"bellharness: error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        if exc.code == E_TIMEOUT:
            print(f"bellharness: timeout: {exc}", file=sys.stderr)
            return EXIT_TIMEOUT
        print(f"bellharness: protocol violation: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ValueError as exc:
        print(f"bellharness: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TimeoutError as exc:
        print(f"bellharness: timeout: {exc}", file=sys.stderr)
        return EXIT_TIMEOUT
    except OSError as exc:
        print(f"bellharness: connection failed: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
