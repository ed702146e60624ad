"""``alloc`` command: run scenarios, weight sweeps, axiom checks and the full reproduction."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _default_threads() -> int:
    return os.cpu_count() or 1


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    base = os.environ.get("ALLOC_OUT")
    return Path(base) / name if base else Path("alloc_out") / name


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, help="override the config seed (u64)")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: CPU count)")
    common.add_argument("--out", help="output directory (default: $ALLOC_OUT/<scenario> or ./alloc_out/<scenario>)")
    common.add_argument("--digits", type=int, default=None, help="significant digits in CSV output (default 17)")

    p = argparse.ArgumentParser(prog="alloc", description="Risk measures and Euler capital allocation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "evaluate a scenario and write its report"),
                       ("sweep", "RORAC curves over the weight grid of a two-asset scenario"),
                       ("axioms", "check risk-measure axioms on a discrete scenario")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("config", help="scenario TOML file or the name of a bundled scenario")
    rp = sub.add_parser("reproduce", parents=[common], help="re-run all bundled examples and grade them")
    rp.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    rp.add_argument("--quick", action="store_true", help="reduced sample sizes (tolerances still apply)")
    sub.add_parser("list", help="show the bundled scenarios")
    return p


def _resolve_config(ref: str) -> Path:
    from .config import bundled_config_dir

    p = Path(ref)
    if p.exists():
        return p
    bundled = bundled_config_dir() / (ref if ref.endswith(".toml") else f"{ref}.toml")
    if bundled.exists():
        return bundled
    raise ConfigError(f"cannot read config {ref}: no such file or bundled scenario")


def _cmd_scenario(args) -> int:
    from . import runner
    from .config import load_config

    cfg = load_config(_resolve_config(args.config))
    out = _out_dir(args, cfg.name)
    threads = args.threads or _default_threads()
    fn = {"run": runner.run_scenario, "sweep": runner.run_sweep, "axioms": runner.run_axioms}[args.command]
    res = fn(cfg, out, args.seed, threads, args.digits)
    if res.report is not None:
        print(res.report.to_text(), end="")
    elif args.command == "sweep":
        for regime, s in res.extras["summary"].items():
            print(f"{regime:<7} argmax u={s['argmax_u']:.2f}  portfolio RORAC={s['portfolio_rorac']:.4f}  "
                  f"assets=({s['asset_1_rorac']:.4f}, {s['asset_2_rorac']:.4f})")
    elif args.command == "axioms":
        for r in res.extras["rows"]:
            print(f"{r['check']:<32} {'holds' if r['passed'] else 'VIOLATED'}")
    elif "table1" in res.extras:
        print(res.extras["table1"].to_text() + "\n" + res.extras["table2"].to_text(), end="")
    print(f"wrote {len(res.files)} files to {out}")
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    from .reproduce import reproduce_all, summary_rows

    threads = args.threads or _default_threads()
    results = reproduce_all(1 if args.seed is None else args.seed, threads, args.only, args.quick)
    if args.out or os.environ.get("ALLOC_OUT"):
        out = _out_dir(args, "reproduce")
        out.mkdir(parents=True, exist_ok=True)
        with (out / "reproduce.csv").open("w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, ["criterion", "check", "passed", "detail"], lineterminator="\n")
            wr.writeheader()
            wr.writerows(summary_rows(results))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria pass")
    return EXIT_OK if n_pass == len(results) else EXIT_FAIL


def _cmd_list(args) -> int:
    from .config import bundled_configs, load_config

    for p in bundled_configs():
        cfg = load_config(p)
        print(f"{p.stem:<18} {cfg.provenance}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "reproduce":
            return _cmd_reproduce(args)
        if args.command == "list":
            return _cmd_list(args)
        return _cmd_scenario(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
