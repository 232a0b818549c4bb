"""Build (or reuse) the cached table, then run every named experiment with default configs."""
import argparse
import json
import time

from blowup_lab.cli import EXPERIMENTS, load_config, run_command


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs")
    ap.add_argument("--only", nargs="*", choices=EXPERIMENTS)
    args = ap.parse_args()
    names = args.only or EXPERIMENTS
    if "build-table" not in names:
        names = ("build-table",) + tuple(names)
    for name in names:
        t = time.time()
        code, info = run_command(name, load_config(name, overrides={"out": args.out}))
        took = time.time() - t
        if code:
            print(f"{name:15s} exit {code} ({took:.1f} s): {info}")
            continue
        summary = json.loads(open(info[1]).read())
        keep = {k: v for k, v in summary.items() if k not in ("config", "config_hash")}
        print(f"{name:15s} ok ({took:.1f} s) {json.dumps(keep, default=str)[:300]}")


if __name__ == "__main__":
    main()
