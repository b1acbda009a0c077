"""CLI: `manifold-worker [--config cfg.json] [--mock] [--port N]`.

Without --port the worker speaks the protocol on stdin/stdout; with it,
on a local TCP socket with the same line framing.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config as cfgmod
from .worker import serve_stdio, serve_tcp


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="manifold-worker", description=__doc__)
    parser.add_argument("--config", help="worker config JSON (defaults apply otherwise)")
    parser.add_argument("--mock", action="store_true",
                        help="serve deterministic canned manifolds without training")
    parser.add_argument("--port", type=int, default=None,
                        help="serve on 127.0.0.1:PORT instead of stdio")
    args = parser.parse_args(argv)
    try:
        config = cfgmod.load(args.config) if args.config else cfgmod.WorkerConfig()
        config.validate()
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 1
    if args.port is not None:
        serve_tcp(config, args.port, mock=args.mock)
    else:
        serve_stdio(config, mock=args.mock)
    return 0


if __name__ == "__main__":
    sys.exit(main())
