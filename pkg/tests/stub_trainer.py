"""Stand-in trainer speaking the epoch/loss line protocol.

Losses are a deterministic function of the policy so studies are repeatable.
"""

import argparse
import json
import sys

ap = argparse.ArgumentParser()
ap.add_argument("--policy", required=True)
ap.add_argument("--epochs", type=int, required=True)
ap.add_argument("--mode", default="policy", choices=["policy", "fixed", "worse", "crash"])
ap.add_argument("--good", type=int, default=5, help="trials that behave before 'worse' kicks in")
ap.add_argument("--counter", default=None)
args = ap.parse_args()

with open(args.policy) as fh:
    policy = json.load(fh)

mode = args.mode
if mode == "worse" and args.counter:
    try:
        with open(args.counter) as fh:
            n = int(fh.read())
    except FileNotFoundError:
        n = 0
    with open(args.counter, "w") as fh:
        fh.write(str(n + 1))
    mode = "fixed" if n < args.good else "worse"

if mode == "crash":
    print("starting", flush=True)
    sys.exit(3)

base = (policy["oba_prob"] - 0.7) ** 2 + 0.1 * policy["extra_objects"][1] / 3
for k in range(1, args.epochs + 1):
    if mode == "fixed":
        loss = 1.0 / k
    elif mode == "worse":
        loss = 10.0 + k
    else:
        loss = base + 1.0 / k
    print(f"log line {k}", flush=True)
    print(f"EPOCH {k} LOSS {loss!r}", flush=True)
