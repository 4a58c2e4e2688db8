"""Command-line scenario runner.

Exit codes: 0 success, 1 a recorded check failed, 2 bad scenario or
unknown name, 3 stability precondition violated, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .errors import DivergenceError, ScenarioError, StabilityError
from .pipeline import PROFILES, run_scenario
from .scenario import load, parse_text

OUT_DIR_ENV = "KGBOHM_OUT_DIR"
DEFAULT_OUT_DIR = "kgbohm-out"
EXIT_OK, EXIT_CHECKS, EXIT_PARSE, EXIT_STABILITY, EXIT_DIVERGENCE = 0, 1, 2, 3, 4


def _bundled_dir():
    return resources.files("kgbohm") / "scenarios"


def list_scenarios(directory=None) -> List[str]:
    """Names of the scenario files (``*.scn``) in ``directory`` (bundled set by default)."""
    root = _bundled_dir() if directory is None else Path(directory)
    if not root.is_dir():
        return []
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".scn"))


def bundled_text(name: str) -> str:
    if name not in list_scenarios():
        raise ScenarioError(f"unknown scenario {name!r}", field="name")
    return (_bundled_dir() / f"{name}.scn").read_text()


def describe(name: str) -> str:
    scn = parse_text(bundled_text(name))
    lines = [f"{scn.name}: {scn.description}".rstrip(": "), f"pipeline: {', '.join(scn.pipeline)}",
             f"rng_seed: {scn.rng_seed}"]
    for section, kv in scn.echo().items():
        if section == "scenario":
            continue
        lines.append(f"[{section}]")
        lines.extend(f"  {k} = {v}" for k, v in kv.items())
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kgbohm", description="Run Klein-Gordon hidden-phase scenarios.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file (or a bundled scenario by name)")
    run.add_argument("file")
    run.add_argument("--out-dir", default=None,
                     help=f"output directory (default: ${OUT_DIR_ENV} or ./{DEFAULT_OUT_DIR})")
    run.add_argument("--tolerance-profile", choices=sorted(PROFILES), default="default")
    run.add_argument("--threads", type=int, default=1, help="worker hint for parallel stages")

    sub.add_parser("list", help="list bundled scenarios")
    d = sub.add_parser("describe", help="echo the parameters of a bundled scenario")
    d.add_argument("name")
    return ap


def _run(args) -> int:
    path = Path(args.file)
    if path.exists():
        scn = load(path)
        raw = path.read_bytes()
    elif args.file in list_scenarios():
        text = bundled_text(args.file)
        scn = parse_text(text)
        raw = text.encode()
    else:
        raise ScenarioError(f"no scenario file or bundled scenario named {args.file!r}", field="file")
    base = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR)
    result = run_scenario(scn, base / scn.name, profile=args.tolerance_profile,
                          threads=max(1, args.threads), input_bytes=raw)
    relation = {"max": "<=", "min": ">=", "range": "in"}
    for name, chk in sorted(result.manifest["checks"].items()):
        print(f"{'PASS' if chk['pass'] else 'FAIL'} {name} = {chk['value']:.3e} "
              f"({relation[chk['mode']]} {chk['limit']})")
    print(f"wrote {len(result.files)} files to {result.out_dir}")
    return EXIT_CHECKS if result.failed_checks else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "list":
            for name in list_scenarios():
                print(name)
            return EXIT_OK
        if args.command == "describe":
            print(describe(args.name))
            return EXIT_OK
        return _run(args)
    except ScenarioError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        field = f" [field: {exc.field}]" if exc.field else ""
        print(f"error: {exc}{where}{field}", file=sys.stderr)
        return EXIT_PARSE
    except StabilityError as exc:
        print(f"stability error: {exc} (bound {exc.bound}, value {exc.value})", file=sys.stderr)
        return EXIT_STABILITY
    except DivergenceError as exc:
        print(f"divergence: {exc} (step {exc.step})", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
