"""Command-line client.

Every subcommand reads the config document, sends it to the service and
prints the JSON result. Without ``--server`` the service runs in-process.
Failures exit with status 1 and a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import httpx

COMMANDS = ("synth", "partition", "select", "run", "report")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcore", description="Federated coreset-selection simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config document")
        p.add_argument("--seed", type=int, help="override the config's master_seed")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--log-level", choices=sorted(LOG_LEVELS), default="warn")
        p.add_argument("--server", help="service base URL; default runs the service in-process")
    return parser


def _fail(code: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message, **extra}) + "\n")
    return 1


def _client(server: Optional[str]):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from fedcore.service.app import app

    return TestClient(app, raise_server_exceptions=False)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=LOG_LEVELS[args.log_level], format="%(levelname)s %(name)s: %(message)s")
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        return _fail("io_error", f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        return _fail("configuration_error", f"{path}: not valid JSON ({exc})")
    body = {"config": doc, "base_dir": str(path.resolve().parent), "seed": args.seed,
            "out": str(Path(args.out).resolve()) if args.out else None}
    try:
        with _client(args.server) as client:
            resp = client.post(f"/{args.command}", json=body)
    except httpx.HTTPError as exc:
        return _fail("connection_error", str(exc))
    try:
        payload = resp.json()
    except ValueError:
        payload = {"error": "server_error", "message": resp.text}
    if resp.status_code != 200:
        if "error" not in payload:
            payload = {"error": "server_error", "message": json.dumps(payload)}
        sys.stderr.write(json.dumps(payload) + "\n")
        return 1
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
