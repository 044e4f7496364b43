"""Command-line entry point: ``latent-prior synth|edit|check``.

Every config key is exposed as ``--section.key VALUE``; a handful of short
aliases cover the common ones. Values are resolved in the order: built-in
defaults, preset, ``--config`` file, flags.

Exit status is 0 on success, 2 for configuration or loading problems
(bad keys, missing files, mismatched image/mask sizes, unavailable weights)
and 1 when a run aborts or a check fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from .config import RunConfig, config_keys, resolve
from .errors import ConfigError, LatentPriorError, LoadError

log = logging.getLogger("latent_prior")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

ALIASES = {
    "--seed": "run.seed",
    "--iterations": "run.iterations",
    "--prompt": "run.prompt",
    "--out": "run.out_dir",
    "--backend": "backend.kind",
    "--weights": "backend.weights_path",
    "--image": "renderer.image_path",
    "--mask": "renderer.mask_path",
}

_KEY_PREFIX = "cfg:"


def _describe(default) -> str:
    if isinstance(default, bool):
        return "true|false"
    if isinstance(default, list):
        return "comma-separated list"
    return type(default).__name__


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML run configuration file")
    p.add_argument("--preset", help="named preset applied before the config file")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    short = p.add_argument_group("shortcuts")
    for flag, key in ALIASES.items():
        short.add_argument(flag, dest=_KEY_PREFIX + key, metavar="VALUE", default=argparse.SUPPRESS, help=f"alias for --{key}")
    keys = p.add_argument_group("config keys")
    for key, default in config_keys():
        keys.add_argument(
            f"--{key}",
            dest=_KEY_PREFIX + key,
            metavar="VALUE",
            default=argparse.SUPPRESS,
            help=f"{_describe(default)} (default {default!r})",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-prior",
        description="Optimize images against a latent diffusion prior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", help="optimize a latent map from a text prompt")
    _add_run_options(synth)
    edit = sub.add_parser("edit", help="layered edit of an input image under a mask")
    _add_run_options(edit)
    check = sub.add_parser("check", help="run the self-verification suite")
    check.add_argument("level", choices=("quick", "full"), nargs="?", default="quick")
    return parser


def config_from_args(args: argparse.Namespace, default_preset: str | None = None) -> RunConfig:
    overrides = {k[len(_KEY_PREFIX):]: v for k, v in vars(args).items() if k.startswith(_KEY_PREFIX)}
    name = args.preset or (None if args.config else default_preset)
    return resolve(args.config, overrides, name)


def _run(cfg: RunConfig, quiet: bool) -> int:
    from .optimize import run_optimization

    log.info("running %d iterations with backend %s", cfg.run.iterations, cfg.backend.kind)
    runlog = run_optimization(cfg)
    if not quiet:
        last = runlog.records[-1]
        print(f"{len(runlog.records)} iterations, final loss_total {last['loss_total']:.6g}")
        for name, path in sorted(runlog.artifacts.items()):
            print(f"  {name}: {cfg.run.out_dir}/{path}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = config_from_args(args)
    if cfg.renderer.kind != "latent-map":
        raise ConfigError(f"synth needs renderer.kind = 'latent-map', got {cfg.renderer.kind!r}; use edit")
    return _run(cfg, args.quiet)


def cmd_edit(args: argparse.Namespace) -> int:
    cfg = config_from_args(args, default_preset="layered-edit")
    if cfg.renderer.kind != "layered":
        raise ConfigError(f"edit needs renderer.kind = 'layered', got {cfg.renderer.kind!r}; use synth")
    return _run(cfg, args.quiet)


def cmd_check(args: argparse.Namespace) -> int:
    from .checks import format_result, run_checks

    results = run_checks(args.level, report=lambda r: print(format_result(r), flush=True))
    failed = [r for r in results if not r.passed]
    skipped = sum(r.skipped for r in results)
    print(f"{len(results) - len(failed) - skipped} passed, {len(failed)} failed, {skipped} skipped")
    if failed:
        print("failed: " + ", ".join(f"{r.number}. {r.title}" for r in failed))
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "edit": cmd_edit, "check": cmd_check}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the config-error status
        return int(exc.code or 0)
    quiet = getattr(args, "quiet", False) or args.command == "check"
    level = logging.ERROR if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LatentPriorError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
