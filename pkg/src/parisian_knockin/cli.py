"""Command-line batch interface.

    parisian-knockin price        [--config PATH] [--out CSV] [--allow-degenerate]
    parisian-knockin surface      [--config PATH] [--out CSV]
    parisian-knockin verify       [--config PATH] [--out CSV] [--seed N] [--skip-mc] [--skip-pde]
    parisian-knockin bias-study   [--config PATH] [--out CSV] [--seed N]
    parisian-knockin dump-windows [--config PATH] [--out CSV]

Without ``--config`` the shipped default contract is used.  Exit codes:
0 ok, 1 validation (including refused degenerate contracts), 2 engine
failure, 3 tolerance breach in ``verify``.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from typing import Sequence

from .config import DEFAULT_CONFIG_TEXT, ConfigError, RunConfig, load_config, parse_config
from .model import DEGENERACY_MESSAGES, Degeneracy, StatePoint, ValidationError
from .montecarlo import (bias_study, simulate_price, simulate_price_extrapolated,
                         write_bias_csv)
from .pde import price_at, solve_coupled
from .pricer import ParisianPricer, PriceResult, write_price_csv

EXIT_OK, EXIT_VALIDATION, EXIT_ENGINE, EXIT_TOLERANCE = 0, 1, 2, 3


class EngineFailure(RuntimeError):
    pass


def _finite(*values: float) -> None:
    for v in values:
        if v is not None and not math.isfinite(v):
            raise EngineFailure(f"non-finite result {v!r}")


def _report(sp: StatePoint, res: PriceResult, out) -> None:
    d = "n/a" if res.delta is None else f"{res.delta:.10g}"
    print(f"S={sp.S:g} t={sp.t:g} J={sp.J:g}: price={res.price:.10g} delta={d} "
          f"region={res.region.value} windows={res.windows_used} "
          f"err<={res.quadrature_error_estimate:.3g}", file=out)
    if res.message:
        print(f"  note: {res.message}", file=out)


def _csv_path(args, cfg: RunConfig, attr: str = "csv"):
    return args.out or getattr(cfg.output, attr)


def _refuse_degenerate(pricer: ParisianPricer, allow: bool, out) -> bool:
    if pricer.degeneracy is Degeneracy.NON_DEGENERATE or allow:
        return False
    print(f"degenerate contract ({pricer.degeneracy.value}): "
          f"{DEGENERACY_MESSAGES[pricer.degeneracy]}; pass --allow-degenerate to price it",
          file=out)
    return True


def cmd_price(cfg: RunConfig, args, out=None) -> int:
    pricer = ParisianPricer(cfg.market, cfg.contract, cfg.engine.pricer_config())
    if _refuse_degenerate(pricer, args.allow_degenerate, out):
        return EXIT_VALIDATION
    rows = []
    for S in cfg.S:
        for J in cfg.J:
            sp = StatePoint(S, cfg.t, J if S <= cfg.contract.S_bar else 0.0)
            res = pricer.price(sp, with_delta=cfg.output.with_delta)
            _finite(res.price, res.delta)
            _report(sp, res, out)
            rows.append((sp.S, sp.t, sp.J, res))
    path = _csv_path(args, cfg)
    if path:
        write_price_csv(path, rows)
    return EXIT_OK


def cmd_surface(cfg: RunConfig, args, out=None) -> int:
    pricer = ParisianPricer(cfg.market, cfg.contract, cfg.engine.pricer_config())
    if _refuse_degenerate(pricer, args.allow_degenerate, out):
        return EXIT_VALIDATION
    rows = []
    for J in cfg.J:
        results = pricer.price_surface(cfg.S, cfg.t, J, with_delta=cfg.output.with_delta)
        for S, res in zip(cfg.S, results):
            _finite(res.price, res.delta)
            rows.append((S, cfg.t, J if S <= cfg.contract.S_bar else 0.0, res))
    path = _csv_path(args, cfg)
    if path:
        write_price_csv(path, rows)
    else:
        wr = csv.writer(out or sys.stdout, lineterminator="\n")
        wr.writerow(["S", "t", "J", "price", "delta", "region"])
        for S, t, J, res in rows:
            wr.writerow([f"{S:.12g}", f"{t:.12g}", f"{J:.12g}", f"{res.price:.12g}",
                         "" if res.delta is None else f"{res.delta:.12g}", res.region.value])
    if cfg.output.windows_csv and pricer.degeneracy is Degeneracy.NON_DEGENERATE:
        pricer.solver.ensure(pricer.dp.horizon).dump_csv(cfg.output.windows_csv)
    return EXIT_OK


def _state(cfg: RunConfig) -> StatePoint:
    S, J = cfg.S[0], cfg.J[0]
    return StatePoint(S, cfg.t, J if S <= cfg.contract.S_bar else 0.0)


def cmd_verify(cfg: RunConfig, args, out=None) -> int:
    e = cfg.engine
    sp = _state(cfg)
    pricer = ParisianPricer(cfg.market, cfg.contract, e.pricer_config())
    if _refuse_degenerate(pricer, args.allow_degenerate, out):
        return EXIT_VALIDATION
    res = pricer.price(sp)
    _finite(res.price)
    print(f"pricer : {res.price:.10g} (region {res.region.value}, "
          f"{res.windows_used} windows)", file=out)
    rows = [["pricer", f"{res.price:.12g}", "", "", "", ""]]
    ok = True
    if not args.skip_pde:
        if pricer.degeneracy is not Degeneracy.NON_DEGENERATE:
            print("pde    : skipped (degenerate contract)", file=out)
        else:
            sol = solve_coupled(cfg.market, cfg.contract, e.pde_resolution(), pricer.surface)
            if cfg.output.pde_dump:
                sol.save(cfg.output.pde_dump)
            v = price_at(sol, cfg.contract, sp)
            _finite(v)
            rel = abs(res.price - v) / max(abs(v), 1e-300)
            passed = rel <= e.pde_rel_tol
            ok &= passed
            print(f"pde    : {v:.10g}  rel diff {rel:.3e} (tol {e.pde_rel_tol:g}) "
                  f"{'PASS' if passed else 'FAIL'}", file=out)
            rows.append(["pde", f"{v:.12g}", "", f"{rel:.6g}", f"{e.pde_rel_tol:g}",
                         "pass" if passed else "fail"])
    if not args.skip_mc:
        mc_cfg = e.mc_config(args.seed)
        if e.mc_bias_correction:
            est = simulate_price_extrapolated(cfg.market, cfg.contract, sp, mc_cfg).extrapolated
            label = "mc (bias-corrected)"
        else:
            est = simulate_price(cfg.market, cfg.contract, sp, mc_cfg)
            label = "mc"
        _finite(est.mean, est.std_error)
        diff = abs(res.price - est.mean)
        n_se = diff / est.std_error if est.std_error > 0 else (0.0 if diff == 0 else math.inf)
        passed = n_se <= e.mc_max_se
        ok &= passed
        print(f"{label}: {est.mean:.10g} +/- {est.std_error:.3g}  diff {n_se:.2f} SE "
              f"(tol {e.mc_max_se:g}) {'PASS' if passed else 'FAIL'}", file=out)
        rows.append(["mc", f"{est.mean:.12g}", f"{est.std_error:.12g}", f"{n_se:.6g}",
                     f"{e.mc_max_se:g}", "pass" if passed else "fail"])
    path = _csv_path(args, cfg)
    if path:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["engine", "price", "std_error", "difference", "tolerance", "status"])
            wr.writerows(rows)
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_bias_study(cfg: RunConfig, args, out=None) -> int:
    e = cfg.engine
    sp = _state(cfg)
    base = e.mc_config(args.seed)
    study = bias_study(cfg.market, cfg.contract, sp, e.bias_ladder, base)
    for row in study.rows:
        _finite(row.mean, row.std_error)
        print(f"{row.n_steps_per_year:>8d} steps/yr: {row.mean:.10g} +/- {row.std_error:.3g}",
              file=out)
    print(f"extrapolated (rate {study.rate:g}): {study.extrapolated:.10g}", file=out)
    path = _csv_path(args, cfg)
    if path:
        write_bias_csv(path, study, base)
    return EXIT_OK


def cmd_dump_windows(cfg: RunConfig, args, out=None) -> int:
    pricer = ParisianPricer(cfg.market, cfg.contract, cfg.engine.pricer_config())
    if pricer.degeneracy is not Degeneracy.NON_DEGENERATE:
        print(f"no windows for a degenerate contract ({pricer.degeneracy.value})", file=out)
        return EXIT_VALIDATION
    ws = pricer.solver.ensure(pricer.dp.horizon)
    path = _csv_path(args, cfg, "windows_csv") or "windows.csv"
    ws.dump_csv(path)
    print(f"{len(ws.windows)} windows written to {path}", file=out)
    return EXIT_OK


COMMANDS = {"price": cmd_price, "surface": cmd_surface, "verify": cmd_verify,
            "bias-study": cmd_bias_study, "dump-windows": cmd_dump_windows}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parisian-knockin",
                                description="Parisian down-and-in call pricing and verification.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", metavar="PATH", help="INI run configuration (default: built-in)")
    p.add_argument("--out", metavar="PATH", help="CSV output path")
    p.add_argument("--seed", type=int, help="override the Monte Carlo seed")
    p.add_argument("--allow-degenerate", action="store_true",
                   help="price degenerate contracts instead of refusing")
    p.add_argument("--skip-mc", action="store_true", help="verify: skip Monte Carlo")
    p.add_argument("--skip-pde", action="store_true", help="verify: skip the PDE oracle")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else parse_config(DEFAULT_CONFIG_TEXT,
                                                                          "<default>")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        return COMMANDS[args.command](cfg, args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # engines report failures as exceptions
        print(f"engine failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
