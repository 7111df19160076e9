"""Command-line experiment runner.

Subcommands mirror the pipeline stages: bla, ilc, fit, validate, serve,
and full (bla -> ilc -> fit -> validate in one run directory).
"""
from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import (
    ConfigError,
    ConnectionFailedError,
    IlcDpdError,
    PlantError,
    ProtocolError,
)
from .pipeline import (
    run_bla_cmd,
    run_fit_cmd,
    run_full,
    run_ilc_cmd,
    run_validate_cmd,
)
from .plant import load_preset, mild_preset, plant_serve

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PLANT = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ilcdpd",
                                     description="ILC-based digital predistortion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace the signal seed from the config")
        return p

    add_run_command("bla", "estimate the best linear approximation and export the FRF")
    add_run_command("ilc", "run the learning loop and export predistorted inputs")
    add_run_command("fit", "fit pre-/post-inverse models from a previous ilc run")
    add_run_command("validate", "score fitted models on a held-out signal")
    add_run_command("full", "end-to-end run: bla, ilc, fit, validate")

    serve = sub.add_parser("serve", help="serve a surrogate plant over the wire protocol")
    serve.add_argument("--preset", default="mild", help="preset name 'mild' or a preset file path")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=7531)
    serve.add_argument("--keep-noise", action="store_true",
                       help="serve the preset's noise instead of disabling it")
    return parser


def _load(args):
    overrides = {}
    if args.seed_override is not None:
        overrides[("signal", "seed")] = str(args.seed_override)
    return load_config(args.config, overrides)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        pa = mild_preset() if args.preset == "mild" else load_preset(args.preset)
        server = plant_serve(pa, args.host, args.port, keep_noise=args.keep_noise)
        host, port = server.endpoint
        print(f"serving preset {pa.preset_id} on {host}:{port}")
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return EXIT_OK

    cfg = _load(args)
    if args.command == "bla":
        frf = run_bla_cmd(cfg, args.out, args.force)
        print(f"BLA estimated on {len(frf.grid.controlled_bins)} controlled bins "
              f"from {frf.n_realizations} realizations -> {args.out}/frf/frf.csv")
    elif args.command == "ilc":
        runs = run_ilc_cmd(cfg, args.out, args.force)
        for i, (_, traj, _) in enumerate(runs):
            status = "converged" if traj.converged else ("diverged" if traj.diverged else "max-iter")
            print(f"realization {i}: {traj.iterations_run} iterations, {status}, "
                  f"final error rms {traj.error_norms[traj.best_index]:.3e}")
    elif args.command == "fit":
        models = run_fit_cmd(cfg, args.out)
        o_pre, o_post = models["pre_orders"], models["post_orders"]
        print(f"pre-inverse orders {o_pre.n_m}:{o_pre.n_p}:{o_pre.n_g} "
              f"(residual {models['pre_residual']:.3e}); "
              f"post-inverse orders {o_post.n_m}:{o_post.n_p}:{o_post.n_g} "
              f"(residual {models['post_residual']:.3e})")
    elif args.command == "validate":
        report = run_validate_cmd(cfg, args.out)
        print(report.to_text(), end="")
    elif args.command == "full":
        report = run_full(cfg, args.out, args.force)
        print(report.to_text(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PlantError, ConnectionFailedError, ProtocolError) as exc:
        print(f"plant error: {exc}", file=sys.stderr)
        return EXIT_PLANT
    except IlcDpdError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
