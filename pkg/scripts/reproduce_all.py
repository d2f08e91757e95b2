"""Run every preset and write its outputs under results/<preset>/.

Usage: python scripts/reproduce_all.py [--out results] [--skip PRESET ...]
"""

import argparse
import os
import sys
import time

from optoprep.errors import OptoprepError
from optoprep.experiments import list_presets, preset_config, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--skip", nargs="*", default=["custom"])
    args = ap.parse_args(argv)
    status = 0
    for name in list_presets():
        if name in args.skip:
            continue
        t0 = time.perf_counter()
        try:
            man = run(preset_config(name), os.path.join(args.out, name))
        except OptoprepError as exc:
            print(f"{name:26s} FAILED  {exc}")
            status = 3
            continue
        print(f"{name:26s} {time.perf_counter() - t0:8.1f} s  {man.summary}")
    return status


if __name__ == "__main__":
    sys.exit(main())
