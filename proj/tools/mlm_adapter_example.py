#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Reference masked-LM adapter for the line-delimited JSON protocol.

Reads one request per line from stdin:
    {"tokens": ["the", "<mask>", "ran"], "mask": [1]}
and answers one line per request on stdout:
    {"candidates": [[["dog", 0.5], ["Cat", 0.3], ["man", 0.2]]]}

This stand-in proposes words seen in earlier requests, ranked by frequency.
Swap the body of `propose` for a real masked-LM to use a pre-trained model.
"""
import collections
import json
import sys

MASK = "<mask>"
seen = collections.Counter({"the": 3, "The": 2, "a": 2, "Alpha": 1, "beta": 1})


def propose(tokens, position, k=8):
    del tokens, position
    ranked = seen.most_common(k)
    total = float(sum(c for _, c in ranked))
    return [[w, c / total] for w, c in ranked]


def main():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        req = json.loads(line)
        tokens = req["tokens"]
        reply = {"candidates": [propose(tokens, p) for p in req["mask"]]}
        seen.update(t for t in tokens if t != MASK)
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
