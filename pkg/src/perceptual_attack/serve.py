"""Serve a weights file as an external oracle over stdin/stdout.

    perceptual-attack-serve --model weights.json

Reads one JSON request per line and answers with the model's logits.
"""

import argparse
import json
import sys

import numpy as np

from .oracle import builtin_forward, load_weights


def serve(model, stdin=sys.stdin, stdout=sys.stdout) -> None:
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        x = np.asarray(req["pixels"], dtype=np.float64).reshape(req["shape"])
        logits = builtin_forward(model, x)
        stdout.write(json.dumps({"id": req["id"], "logits": logits.tolist()}) + "\n")
        stdout.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--model", required=True, help="weights JSON file")
    args = parser.parse_args(argv)
    serve(load_weights(args.model))


if __name__ == "__main__":
    main()
