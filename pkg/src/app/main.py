"""Command line: ``catuni <command> [options]``."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence

import structlog

from app.data_loader import apply_config, load_config, load_manifest, save_report
from app.harmonic_solver import SolverConfig
from app.pipeline import (
    DIRICHLET_FIXTURES,
    RunResult,
    cmd_analyze,
    cmd_dirichlet,
    cmd_mobius,
    cmd_report,
    cmd_uniformize,
    cmd_validate,
)
from core.config import settings
from core.exceptions import EXIT_INPUT_ERROR, CatuniError, InvalidInputError
from core.logging_config import configure_logging
from schemas.run_manifest import RunManifest
from utils.telemetry.otel_setup import otel_setup

logger = structlog.get_logger()

MODULE = "uniformize_cli"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catuni",
        description="Harmonic and conformal maps into cone surfaces with an upper curvature bound.",
    )
    parser.add_argument("--config", help="JSON document overriding settings")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a target against the link condition")
    p.add_argument("--target", required=True, help="target path or fixture name")
    p.add_argument("--samples", type=int, default=100, help="comparison triangles to audit")

    p = sub.add_parser("uniformize", help="conformal harmonic map from the sphere")
    p.add_argument("--target", help="target path or fixture name")
    p.add_argument("--manifest", help="run manifest document")
    p.add_argument("--level", type=int, action="append", help="refinement level (repeatable)")
    p.add_argument("--tol", type=float, help="relative energy tolerance")
    p.add_argument("--points", help="JSON list of extra probe points")
    p.add_argument("--pins", type=int, nargs=3, help="three pinned domain vertices")

    p = sub.add_parser("dirichlet", help="solve a bundled Dirichlet problem on the disk")
    p.add_argument("--target", choices=DIRICHLET_FIXTURES, default="power")
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--tol", type=float, help="relative energy tolerance")
    p.add_argument("--m", type=float, default=2.0, help="power of z")
    p.add_argument("--beta", type=float, default=1.5, help="cone parameter")
    p.add_argument("--a", type=complex, default=1.5 + 0j, help="coefficient of z")
    p.add_argument("--b", type=complex, default=0.5 + 0j, help="coefficient of conj(z)")

    p = sub.add_parser("analyze", help="blow-up, distortion and degree analyses of a stored map")
    p.add_argument("map", help="map document")
    p.add_argument("--points", help="JSON list of probe points")

    p = sub.add_parser("mobius", help="check that two sphere maps differ by a Moebius map")
    p.add_argument("map_a")
    p.add_argument("map_b")
    p.add_argument("--tol", type=float, help="residual tolerance")

    p = sub.add_parser("report", help="render a stored report as tables")
    p.add_argument("report", help="report document")
    return parser


def _points(path: Optional[str]) -> List[Any]:
    if path is None:
        return []
    try:
        points = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read points from {path}: {exc}", MODULE) from exc
    if not isinstance(points, list):
        raise InvalidInputError("points document must be a list", MODULE)
    return points


def _manifest(args: argparse.Namespace) -> RunManifest:
    manifest = load_manifest(args.manifest) if args.manifest else None
    if manifest is None:
        if not args.target:
            raise InvalidInputError("uniformize needs --target or --manifest", MODULE)
        manifest = RunManifest(target=args.target)
    update: dict = {}
    if args.target:
        update["target"] = args.target
    if args.level:
        update["levels"] = args.level
    if args.seed is not None:
        update["seed"] = args.seed
    if args.out:
        update["out_dir"] = args.out
    if args.pins:
        update["pins"] = args.pins
    solver = dict(manifest.solver)
    if args.tol is not None:
        solver["energy_tol"] = args.tol
    update["solver"] = solver
    points = _points(args.points)
    if points:
        update["probes"] = manifest.probes.model_copy(update={"points": manifest.probes.points + points})
    return manifest.model_copy(update=update)


def dispatch(args: argparse.Namespace) -> RunResult:
    seed = settings.DEFAULT_SEED if args.seed is None else args.seed
    if args.command == "validate":
        result = cmd_validate(args.target, samples=args.samples, seed=seed)
    elif args.command == "uniformize":
        result = cmd_uniformize(_manifest(args))
    elif args.command == "dirichlet":
        config = SolverConfig(energy_tol=args.tol) if args.tol is not None else None
        params = {"m": args.m, "beta": args.beta, "a": args.a, "b": args.b}
        result = cmd_dirichlet(args.target, args.level, seed, out_dir=args.out, config=config, **params)
    elif args.command == "analyze":
        result = cmd_analyze(args.map, _points(args.points), seed=seed, out_dir=args.out)
    elif args.command == "mobius":
        result = cmd_mobius(args.map_a, args.map_b, tolerance=args.tol, seed=seed)
    else:
        text, result = cmd_report(args.report, out_dir=args.out)
        print(text)
        return result
    if args.out and args.command in ("validate", "mobius"):
        result.written.append(save_report(result.report, Path(args.out) / "report.json"))
    print(json.dumps(result.report.model_dump(mode="json", by_alias=True), indent=2, sort_keys=True))
    return result


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        apply_config(load_config(args.config))
        configure_logging(settings, force=True)
        otel_setup.setup()
        result = dispatch(args)
    except CatuniError as exc:
        logger.error("command_failed", command=args.command, **exc.to_dict())
        print(json.dumps(exc.to_dict(), indent=2, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        logger.error("command_failed", command=args.command, error=str(exc))
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return EXIT_INPUT_ERROR
    logger.info("command_done", command=args.command, exit_code=result.exit_code)
    return result.exit_code


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
