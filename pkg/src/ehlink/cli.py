"""Command line interface.

Subcommands: run (named experiments), sweep, compare, solve (policy table),
analyze (fixed-power drop probability).  Exit codes: 0 success, 2 config
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import average_pdp, build_xi
from .config import SimConfig, parse_config, validate_config
from .exceptions import ConfigError, EhlinkError
from .experiments import EXPERIMENTS, RHO_GRID, run_experiment
from .policy import (build_mdp, load_policy_table, quantize_and_tabulate,
                     relative_value_iteration, save_policy_table)
from .sim import CSV_HEADER, compare_schemes, sweep


def _add_common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=".", help="output directory or file")
    p.add_argument("--replications", type=int)
    p.add_argument("--policy", help="equal | greedy | mlph | equal:<mW>")
    p.add_argument("--beta", type=int)
    p.add_argument("--rho", help="comma-separated grid, default 0.1..0.9")
    p.add_argument("--horizon", type=int, help="slot horizon per trial")
    p.add_argument("--frames", type=int, help="frames per trial")


def _load_config(args) -> SimConfig:
    cfg = parse_config(args.config) if args.config else SimConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.replications:
        over["replications"] = args.replications
    if args.beta:
        over["beta"] = args.beta
    if args.policy:
        pol = args.policy
        if pol.startswith("equal:"):
            over["policy"] = "equal"
            over["p_out_mw"] = float(pol.split(":", 1)[1])
        else:
            over["policy"] = pol
    if args.horizon:
        over["horizon_slots"] = args.horizon
    if args.frames:
        over["n_frames"] = args.frames
    cfg = replace(cfg, **over)
    validate_config(cfg)
    return cfg


def _rho_grid(args):
    if not args.rho:
        return RHO_GRID
    try:
        grid = tuple(float(x) for x in args.rho.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad --rho grid: {exc}") from None
    for r in grid:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"rho {r} outside [0, 1]")
    return grid


def _write_rows(rows, out, default_name):
    text = "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"
    out = Path(out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / default_name
    out.write_text(text)
    return out


def cmd_run(args) -> int:
    cfg = _load_config(args)
    path = run_experiment(args.experiment, args.out, base=cfg,
                          frames=args.frames,
                          replications=args.replications)
    print(f"wrote {path} and {path.with_suffix('.gp')}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    rows = sweep(cfg, _rho_grid(args),
                 horizon_slots=args.horizon)
    path = _write_rows(rows, args.out, "sweep.csv")
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    schemes = []
    for item in args.schemes.split(","):
        parts = item.strip().split(":")
        arq = parts[0]
        if arq not in ("nak", "nakx"):
            raise ConfigError(f"scheme {item!r}: expected nak|nakx prefix")
        beta = 1 if arq == "nak" else max(cfg.beta, 2)
        policy = parts[1] if len(parts) > 1 else cfg.policy
        power = float(parts[2]) if len(parts) > 2 else None
        schemes.append((beta, policy, power))
    rows = compare_schemes(cfg, schemes, _rho_grid(args),
                           horizon_slots=args.horizon)
    path = _write_rows(rows, args.out, "compare.csv")
    print(f"wrote {path}")
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args)
    grid = _rho_grid(args)
    units = cfg.units()
    channel = cfg.channel()
    pep = cfg.pep_table(channel, units)
    vis, mdps = [], []
    for rho in grid:
        mdp = build_mdp(channel, pep, units.bmax_tx, units.harvest_tx,
                        cfg.k_max, rho, rho, cost_mode=cfg.cost_mode,
                        idle_cost=cfg.idle_cost)
        vis.append(relative_value_iteration(mdp))
        mdps.append(mdp)
    table = quantize_and_tabulate(vis, cfg.kappa, grid, mdps)
    out = Path(args.out)
    if out.is_dir() or not out.suffix:
        out.mkdir(parents=True, exist_ok=True)
        out = out / "policy.npz"
    save_policy_table(table, out)
    load_policy_table(out)      # round-trip sanity
    print(f"wrote {out} ({table.size_entries} entries, "
          f"{table.memory_bits() / 8 / 1024:.1f} KiB at 8 bits/action)")
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    if args.rho:
        grid = _rho_grid(args)
    else:
        grid = (cfg.rho,)
    k_max = args.k or cfg.k_max
    lines = ["rho,K,mode,pdp"]
    for rho in grid:
        rcfg = replace(cfg, rho=rho, policy="equal", channel_mode="frame")
        for mode in ("chain", "bound"):
            pdp = average_pdp(rcfg, K=k_max, mode=mode)
            print(f"rho={rho:g} K={k_max} {mode}: average drop probability "
                  f"= {pdp:.6f}")
            lines.append(f"{rho:g},{k_max},{mode},{pdp:.10g}")
    if args.out != ".":
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")
        print(f"wrote {path}")
    if args.psi_out:
        rcfg = replace(cfg, rho=grid[-1], policy="equal",
                       channel_mode="frame")
        report = average_pdp(rcfg, K=k_max, mode="chain", full_report=True)
        nj = report.params.bmax_rx + 1
        psi = report.psi.reshape(-1, report.params.num_pairs).sum(axis=0)
        rows = ["tx_units,rx_units,psi"] + [
            f"{p // nj},{p % nj},{psi[p]:.10g}"
            for p in range(report.params.num_pairs) if psi[p] > 0]
        Path(args.psi_out).write_text("\n".join(rows) + "\n")
        print(f"wrote {args.psi_out}")
    if args.xi_dump:
        xi = build_xi(replace(cfg, rho=grid[-1]), channel_state=0)
        if xi.matrix.nnz > 2_000_000:
            raise EhlinkError("state space too large for a full dump")
        coo = xi.matrix.tocoo()
        rows = ["src,dst,prob"] + [f"{r},{c},{v:.10g}" for r, c, v in
                                   zip(coo.row, coo.col, coo.data)]
        Path(args.xi_dump).write_text("\n".join(rows) + "\n")
        print(f"wrote {args.xi_dump}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ehlink",
        description="Energy-harvesting link simulator and analyzer")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a named experiment")
    p.add_argument("experiment", choices=sorted(EXPERIMENTS))
    _add_common(p)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="metric sweep over a harvesting grid")
    _add_common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("compare", help="paired-seed scheme comparison")
    p.add_argument("--schemes", required=True,
                   help="comma list like nakx:greedy,nak:equal:15")
    _add_common(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("solve", help="precompute a policy lookup table")
    _add_common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("analyze", help="fixed-power drop probability")
    p.add_argument("--k", type=int, help="retransmission budget override")
    p.add_argument("--psi-out", help="write the stationary battery CSV")
    p.add_argument("--xi-dump", help="write the full slot chain (small "
                   "state spaces only)")
    _add_common(p)
    p.set_defaults(fn=cmd_analyze)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EhlinkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
