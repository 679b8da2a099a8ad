#!/usr/bin/env python3
"""Largest certified reaction coefficient r for u_t = u_xx + u_yy + r u.

    python scripts/bisect_reaction.py [--degree 3] [--lo 0] [--hi 25] [--iters 12]

Every probe is an independent certify() call; the printed threshold is the
largest r whose certificate passed the exact re-check.
"""
import argparse
import sys

from pie2d import examples
from pie2d.lpi_sdp import bisect_parameter, certify
from pie2d.pie_converter import convert


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--degree", "-d", type=int, default=3)
    ap.add_argument("--lo", type=float, default=0.0)
    ap.add_argument("--hi", type=float, default=25.0)
    ap.add_argument("--iters", type=int, default=12)
    args = ap.parse_args(argv)

    def probe(r):
        v, _ = certify(convert(examples.load("heat_reaction", R=r)), args.degree)
        print(f"  r = {r:9.5f}: {v.verdict}" + (f" ({v.failures[0]})" if v.failures else ""),
              flush=True)
        return v.certified, "; ".join(v.failures[:1])

    res = bisect_parameter(probe, args.lo, args.hi, args.iters)
    if res.threshold is None:
        print(f"no certified r in [{args.lo}, {args.hi}] at degree {args.degree}")
        return 2
    print(f"largest certified r: {res.threshold:.5f} (exact bound 2 pi^2 = 19.7392)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
