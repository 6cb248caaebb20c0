"""Command-line front end: generate / search / eval / serve.

Progress goes to stderr; machine-readable results only to files.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import logging
import sys

from .experiment import (
    ConfigError,
    load_experiment,
    run_eval_cmd,
    run_generate,
    run_search_cmd,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnncast",
        description="Recurrent forecasting workbench: synthetic benchmark "
                    "generators, random hyperparameter search, and "
                    "restart-protocol evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic series CSV")
    g.add_argument("--task", required=True, choices=("mg", "narma", "mso"))
    g.add_argument("--n", type=int, default=15000,
                   help="series length (default 15000)")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--out", required=True, help="output CSV path")

    s = sub.add_parser("search", help="random hyperparameter search")
    s.add_argument("--config", required=True, help="experiment JSON file")
    s.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    s.add_argument("--workers", type=int, default=None,
                   help="override the worker count")
    s.add_argument("--budget", type=int, default=None,
                   help="override the trial budget")
    s.add_argument("--out", default=None, help="override the output dir")
    s.add_argument("--resume", action="store_true",
                   help="continue from the trials already logged in out/")

    e = sub.add_parser("eval", help="restart-protocol test evaluation")
    e.add_argument("--config", required=True, help="experiment JSON file")
    e.add_argument("--seed", type=int, default=None,
                   help="override the config's master seed")
    e.add_argument("--out", default=None, help="override the output dir")

    v = sub.add_parser("serve", help="run the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    try:
        if args.command == "generate":
            run_generate(args.task, args.n, args.seed, args.out)
        elif args.command == "search":
            cfg = load_experiment(args.config, seed=args.seed,
                                  workers=args.workers, budget=args.budget,
                                  out=args.out)
            run_search_cmd(cfg, resume=args.resume)
        elif args.command == "eval":
            cfg = load_experiment(args.config, seed=args.seed,
                                  out=args.out)
            run_eval_cmd(cfg)
        else:
            import uvicorn

            from .service.app import create_app

            uvicorn.run(create_app(), host=args.host, port=args.port,
                        log_config=None)
    except ConfigError as exc:
        print(f"rnncast: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("rnncast: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"rnncast: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
