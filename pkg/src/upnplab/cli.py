"""Command-line front end: run one scenario, the full matrix, or the legitimate demo.

Exit codes: 0 success, 1 demo failed, 2 matrix deviates from the expected
pattern, 64 usage error, 78 configuration error (unreadable or invalid
policy, device catalog or config file).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .attacks import (
    SCENARIOS,
    Catalog,
    Mode,
    ScenarioSpec,
    render_matrix,
    render_report,
    run_demo,
    run_matrix,
    run_scenario,
    pattern_deviations,
)
from .errors import ScenarioError, SecurityError, WireError
from .security import AbacPolicy
from .wire import decode_canonical

EXIT_OK = 0
EXIT_DEMO_FAILED = 1
EXIT_DEVIATION = 2
EXIT_USAGE = 64
EXIT_CONFIG = 78

log = logging.getLogger("upnplab")


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with 2, which is the deviation code here
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="upnplab", description="Deterministic UPnP attack lab.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="simulation seed (default 0)")
        p.add_argument("--policy", type=Path, help="ABAC policy file (canonical tree encoding)")
        p.add_argument("--devices", type=Path, help="device catalog file (canonical tree encoding)")
        p.add_argument("--config", type=Path, help="run config file; flags override its values")
        p.add_argument("--out", type=Path, help="write line-delimited report records here")

    p = sub.add_parser("scenario", help="run one attack scenario")
    p.add_argument("--name", choices=sorted(SCENARIOS))
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--params", nargs="*", type=_key_value, default=None, metavar="K=V")
    p.add_argument("--log", type=Path, help="write the packet log here")
    common(p)

    p = sub.add_parser("matrix", help="run every scenario in both modes")
    p.add_argument("--params", nargs="*", type=_key_value, default=None, metavar="K=V")
    p.add_argument("--expect", choices=["table2"], help="exit 2 unless baseline is fully open and secured fully closed")
    common(p)

    p = sub.add_parser("demo", help="run the legitimate discover/describe/invoke/subscribe flow")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--log", type=Path, help="write the packet log here")
    common(p)
    return parser


def _load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        tree = decode_canonical(path.read_bytes())
    except (OSError, WireError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    allowed = {"name", "mode", "seed", "params", "policy", "devices", "out", "log", "expect"}
    unknown = set(tree) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "params" in tree and not isinstance(tree["params"], dict):
        raise ConfigError(f"{path}: params must be a map")
    return tree


def _settings(args: argparse.Namespace) -> dict:
    """Merge the optional config file with flags (flags win)."""
    config = _load_config(args.config)
    base = args.config.parent if args.config else Path(".")
    merged: dict = {}
    for key in ("name", "mode", "expect"):
        value = getattr(args, key, None)
        merged[key] = value if value is not None else config.get(key)
    seed = args.seed if args.seed is not None else config.get("seed", "0")
    try:
        merged["seed"] = int(seed)
    except ValueError:
        raise ConfigError(f"seed {seed!r} is not an integer") from None
    for key in ("policy", "devices", "out", "log"):
        value = getattr(args, key, None)
        if value is None and config.get(key) is not None:
            value = base / config[key]
        merged[key] = value
    params = dict(config.get("params", {}))
    params.update(dict(getattr(args, "params", None) or []))
    merged["params"] = params
    if merged["mode"] is not None and merged["mode"] not in {m.value for m in Mode}:
        raise ConfigError(f"unknown mode {merged['mode']!r}")
    return merged


def _load_inputs(settings: dict) -> tuple[Optional[AbacPolicy], Optional[Catalog]]:
    policy = catalog = None
    try:
        if settings["policy"] is not None:
            policy = AbacPolicy.load(settings["policy"])
        if settings["devices"] is not None:
            catalog = Catalog.load(settings["devices"])
    except (OSError, WireError, SecurityError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return policy, catalog


def _write(path: Optional[Path], lines: Sequence[str]) -> None:
    if path is None:
        return
    try:
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def cmd_scenario(settings: dict) -> int:
    if settings["name"] is None or settings["mode"] is None:
        raise UsageError("scenario needs --name and --mode")
    policy, catalog = _load_inputs(settings)
    spec = ScenarioSpec(settings["name"], Mode(settings["mode"]), settings["seed"], settings["params"])
    report = run_scenario(spec, policy, catalog)
    print(render_report(report))
    _write(settings["out"], [report.to_json()])
    _write(settings["log"], report.log)
    return EXIT_OK


def cmd_matrix(settings: dict) -> int:
    policy, catalog = _load_inputs(settings)
    matrix = run_matrix(settings["seed"], settings["params"], policy, catalog)
    print(render_matrix(matrix))
    _write(settings["out"], matrix.lines())
    if settings["expect"] == "table2":
        deviations = pattern_deviations(matrix)
        for line in deviations:
            print(f"deviation: {line}", file=sys.stderr)
        if deviations:
            return EXIT_DEVIATION
        print("matches expected pattern")
    return EXIT_OK


def cmd_demo(settings: dict) -> int:
    policy, catalog = _load_inputs(settings)
    result = run_demo(Mode(settings["mode"] or "secured"), settings["seed"], policy, catalog)
    for step in result.steps:
        print(step)
    print(f"deny events: {result.deny_events}")
    if result.failure:
        print(f"failed: {result.failure}", file=sys.stderr)
    _write(settings["out"], [result.to_json()])
    _write(settings["log"], result.log)
    return EXIT_OK if result.ok else EXIT_DEMO_FAILED


COMMANDS = {"scenario": cmd_scenario, "matrix": cmd_matrix, "demo": cmd_demo}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        settings = _settings(args)
        log.info("running %s with %s", args.command, settings)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"upnplab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"upnplab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"upnplab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
