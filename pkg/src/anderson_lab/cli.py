"""``anderson-lab`` command line.

Precedence for every key: defaults < ``--config`` file < environment
(``ANDERSON_LAB_OUT``, ``ANDERSON_LAB_WORKERS``) < flags.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 bound violation with ``bound_violation: fail``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, jsonio
from .config import EXPERIMENTS, env_overrides, parse_config
from .errors import AndersonLabError, ConfigError, UnderpoweredEnsembleError
from .runner import emit_report, run_experiment, verify_run

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BOUND = 0, 2, 3, 4

log = logging.getLogger("anderson_lab")


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        target = out
        parts = key.split(".")
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = val
    return out


def _merge(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="anderson-lab", description="Anderson tight-binding numerical lab")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (JSON-decoded value; dotted keys for nesting)")
        p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    v = sub.add_parser("verify", help="re-aggregate persisted trials and compare with summary.json")
    v.add_argument("run_dir", type=Path)
    r = sub.add_parser("report", help="write a summary table and plot CSVs for a run directory")
    r.add_argument("run_dir", type=Path)
    r.add_argument("--format", choices=["markdown", "text"], default="markdown")
    return ap


def resolve_config(args: argparse.Namespace):
    data: dict = {}
    if args.config is not None:
        try:
            data = jsonio.loads(args.config.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data["experiment"] = args.command
    _merge(data, env_overrides())
    flags = {"seed": args.seed, "trials": args.trials, "workers": args.workers, "out": args.out}
    _merge(data, {k: v for k, v in flags.items() if v is not None})
    _merge(data, _parse_set(args.set))
    if data.get("experiment") != args.command:
        raise ConfigError(f"experiment={data.get('experiment')!r} conflicts with subcommand {args.command!r}")
    return parse_config(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "verify":
            res = verify_run(args.run_dir)
            print(jsonio.dumps(res, indent=2))
            return EXIT_OK if res["ok"] else 1
        if args.command == "report":
            for path in emit_report(args.run_dir, args.format):
                print(path)
            return EXIT_OK
        cfg = resolve_config(args)
        if args.print_config:
            print(cfg.to_json())
            return EXIT_OK
        manifest = run_experiment(cfg)
    except (ConfigError, UnderpoweredEnsembleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AndersonLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"{cfg.experiment}: {manifest.trials_completed} trials -> {cfg.out or f'runs/{cfg.experiment}'}")
    if manifest.bound_violation:
        print("warning: an empirical frequency exceeds its informative bound", file=sys.stderr)
    return manifest.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
