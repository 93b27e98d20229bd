"""Minimal stdio scoring bridge used by the client tests.

Implements the wire protocol and the fixed linear probe model from
scratch (own SplitMix64 and TNSR reader, no engine imports) so the
score comparison test exercises two independent implementations.

Usage: python bridge_helper.py --seed 7 --classes 3 --h 4 --w 4 --c 3
       [--mode normal|reorder|malformed|bad-id|bad-sum|silent|error-line]
"""

import argparse
import json
import math
import struct
import sys

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
CHILD_SALT = 0x6A09E667F3BCC909


def mix(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def stream(seed):
    counter = 0
    while True:
        counter += 1
        yield mix((seed + counter * GAMMA) & MASK)


def child_seed(seed, key):
    return mix(((seed ^ CHILD_SALT) + (key + 1) * GAMMA) & MASK)


def read_tnsr(path):
    blob = open(path, "rb").read()
    assert blob[:4] == b"TNSR"
    version, dtype, rank = struct.unpack_from("<HBB", blob, 4)
    assert version == 1 and dtype == 0
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    count = 1
    for d in dims:
        count *= d
    values = struct.unpack_from(f"<{count}f", blob, 8 + 4 * rank)
    return dims, list(values)


def build_weights(seed, classes, dim):
    rows = []
    for k in range(classes):
        gen = stream(child_seed(seed, k))
        row = []
        for _ in range(dim):
            u = (next(gen) >> 11) * 2.0 ** -53
            row.append((u - 0.5) * 8.0 / dim)
        rows.append(row)
    return rows


def score(weights, flat):
    logits = [sum(w * x for w, x in zip(row, flat)) for row in weights]
    top = max(logits)
    exps = [math.exp(v - top) for v in logits]
    total = sum(exps)
    return [v / total for v in exps]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--classes", type=int, required=True)
    ap.add_argument("--h", type=int, default=4)
    ap.add_argument("--w", type=int, default=4)
    ap.add_argument("--c", type=int, default=3)
    ap.add_argument("--mode", default="normal")
    args = ap.parse_args()

    weights = build_weights(args.seed, args.classes, args.h * args.w * args.c)

    def emit(obj):
        sys.stdout.write(json.dumps(obj) + "\n")
        sys.stdout.flush()

    pending = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        if msg["type"] == "hello":
            emit({"type": "ready", "classes": args.classes,
                  "input": [args.h, args.w, args.c]})
            if args.mode == "malformed":
                sys.stdout.write("{this is not json\n")
                sys.stdout.flush()
        elif msg["type"] == "score":
            if args.mode == "silent":
                continue
            if args.mode == "error-line":
                emit({"type": "error", "id": msg["id"], "msg": "cannot score"})
                continue
            dims, flat = read_tnsr(msg["tensor"])
            probs = score(weights, flat)
            if args.mode == "bad-id":
                emit({"type": "scores", "id": msg["id"] + 1000, "probs": probs})
            elif args.mode == "bad-sum":
                emit({"type": "scores", "id": msg["id"],
                      "probs": [p * 1.5 for p in probs]})
            elif args.mode == "reorder":
                pending.append((msg["id"], probs))
                if len(pending) >= 2:
                    for rid, pr in reversed(pending):
                        emit({"type": "scores", "id": rid, "probs": pr})
                    pending.clear()
            else:
                emit({"type": "scores", "id": msg["id"], "probs": probs})
        elif msg["type"] == "bye":
            for rid, pr in reversed(pending):
                emit({"type": "scores", "id": rid, "probs": pr})
            return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
