"""Command line entry point: ``ommpp {gen,solve,bench,poles}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness
from .grid import build_grid, sample_potential, write_field_csv
from .poles import SpectralWindow, build_poles, indicator_error, write_poles_csv


def _base_config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    over = {}
    if args.test:
        over["test_id"] = args.test
    if args.ell:
        over["ells"] = [int(v) for v in args.ell.split(",")]
        if cfg.N_rule != "equals_ell" and len(cfg.N_rule) != len(over["ells"]):
            over["N_rule"] = "equals_ell"
    if getattr(args, "method", None):
        over["methods"] = harness._split(args.method)
    if args.seed is not None:
        over["base_seed"] = args.seed
    if args.out:
        over["output_path"] = args.out
    return replace(cfg, **over) if over else cfg


def cmd_gen(args) -> int:
    cfg = _base_config(args)
    for ell in cfg.ells:
        grid = build_grid(ell, cfg.pts_per_cell)
        V = sample_potential(grid, cfg.potential_spec())
        path = cfg.output_path or f"potential_{cfg.test_id}_l{ell}.csv"
        if len(cfg.ells) > 1:
            path = path.replace(".csv", f"_l{ell}.csv")
        write_field_csv(grid, V, path)
        print(f"wrote {path} (n={grid.n}, min V={V.min():.6g}, max V={V.max():.6g})")
    return 0


def cmd_solve(args) -> int:
    cfg = _base_config(args)
    cfg = replace(cfg, ells=cfg.ells[:1], methods=cfg.methods[:1], repeats=1, seeds=[cfg.base_seed],
                  N_rule="equals_ell" if cfg.N_rule == "equals_ell" else cfg.N_rule[:1])
    prob = harness.build_problem(cfg, cfg.ells[0])
    cell = harness.run_single(cfg, prob, cfg.methods[0], cfg.base_seed)
    row = harness.aggregate(cfg, prob, [cell])
    print(",".join(harness.HEADER))
    print(",".join(str(v) for v in row.as_list()))
    if cfg.output_path:
        harness.emit_report([row], cfg.output_path)
    return 0 if harness.all_succeeded([row]) else 1


def cmd_bench(args) -> int:
    cfg = _base_config(args)
    rows = harness.run_experiment(cfg)
    print(",".join(harness.HEADER))
    for r in rows:
        print(",".join(str(v) for v in r.as_list()))
    return 0 if harness.all_succeeded(rows) else 1


def cmd_poles(args) -> int:
    cfg = _base_config(args)
    p = args.p or cfg.poles
    for ell in cfg.ells:
        prob = harness.build_problem(cfg, ell)
        window = SpectralWindow.from_spectrum(prob.spectral)
        poles = build_poles(window, p)
        err = indicator_error(poles, window)
        path = cfg.output_path or f"poles_{cfg.test_id}_l{ell}.csv"
        if len(cfg.ells) > 1:
            path = path.replace(".csv", f"_l{ell}.csv")
        write_poles_csv(poles, path)
        print(f"l={ell} N={prob.spectral.N} p={p} gap={window.gap:.6g} indicator_error={err:.3e} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ommpp", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, method=False):
        p.add_argument("--config", help="flat 'key = value' config file")
        p.add_argument("--test", choices=[*harness.TESTS, "custom"])
        p.add_argument("--ell", help="cells per dimension, comma separated")
        if method:
            p.add_argument("--method", help="e.g. tpa, gtpa(5), pp, spp (comma separated for bench)")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--out", help="output CSV path")
        return p

    common(sub.add_parser("gen", help="write the sampled potential as CSV")).set_defaults(func=cmd_gen)
    common(sub.add_parser("solve", help="single OMM run"), method=True).set_defaults(func=cmd_solve)
    common(sub.add_parser("bench", help="full table"), method=True).set_defaults(func=cmd_bench)
    pp = common(sub.add_parser("poles", help="export poles and indicator error"))
    pp.add_argument("--p", type=int, help="number of poles")
    pp.set_defaults(func=cmd_poles)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
