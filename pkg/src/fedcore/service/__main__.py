"""``python3 -m fedcore.service [--host H] [--port P]`` serves the API with uvicorn."""

import argparse

import uvicorn

from fedcore.service.app import app

parser = argparse.ArgumentParser(prog="python3 -m fedcore.service")
parser.add_argument("--host", default="127.0.0.1")
parser.add_argument("--port", type=int, default=8000)
args = parser.parse_args()
uvicorn.run(app, host=args.host, port=args.port)
