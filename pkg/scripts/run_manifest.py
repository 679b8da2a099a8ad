#!/usr/bin/env python3
"""Run every bundled example at its manifest degree and compare verdicts.

    python scripts/run_manifest.py [--only NAME ...] [--report out.json]

Exit status is 0 when every verdict matches the manifest.
"""
import argparse
import json
import sys
import time

from pie2d import examples
from pie2d.lpi_sdp import certify
from pie2d.pie_converter import convert


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="*", default=None)
    ap.add_argument("--report", default=None)
    args = ap.parse_args(argv)

    rows = []
    for entry in examples.manifest():
        name = entry["file"]
        if args.only and name not in args.only:
            continue
        t0 = time.perf_counter()
        pair = convert(examples.load(name, **entry["params"]))
        v, _ = certify(pair, entry["degree"], delta=entry["delta"])
        got = "certified" if v.certified else "not-certified"
        rows.append({"file": name, "params": entry["params"], "degree": entry["degree"],
                     "expect": entry["expect"], "got": got, "seconds": time.perf_counter() - t0,
                     "detail": v.failures[:1]})
        mark = "ok  " if got == entry["expect"] else "MISS"
        print(f"{mark} {name:<15} d={entry['degree']}  expect {entry['expect']:<14} got {got:<14}"
              f" {rows[-1]['seconds']:7.1f}s  {'; '.join(v.failures[:1])}", flush=True)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0 if all(r["got"] == r["expect"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
