"""Run the four parameter sweeps through the CLI and write their CSVs.

    python3 scripts/fig_sweeps.py --out results/sweeps --topologies 20
"""
import argparse
import sys
from pathlib import Path

from d2dpower.cli import main as cli_main

SWEEPS = {
    "arrival_rate": "2e6,4e6,6e6,8e6",
    "avg_power_weight": "300,1000,3000,10000,30000",
    "d2d_range": "20,35,50,65,80",
    "sensing_distance": "50,100,150,200,250",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/sweeps")
    ap.add_argument("--topologies", type=int, default=20)
    ap.add_argument("--slots", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", choices=sorted(SWEEPS))
    args = ap.parse_args()
    status = 0
    for axis, values in SWEEPS.items():
        if args.only and axis != args.only:
            continue
        out = Path(args.out) / axis
        code = cli_main(["sweep", "--axis", axis, "--values", values, "--out", str(out),
                         "--topologies", str(args.topologies), "--slots", str(args.slots),
                         "--seed", str(args.seed), "-v"])
        print(f"{axis}: exit {code}, {out / f'sweep_{axis}.csv'}")
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
