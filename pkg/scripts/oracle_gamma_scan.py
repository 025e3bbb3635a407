"""Agreement between the value-iteration oracle and the per-flow priority across gamma.

    python3 scripts/oracle_gamma_scan.py --gammas 10,50,200,1000
"""
import argparse
from dataclasses import replace

from d2dpower.mdp import (MdpSpec, build_quantized_mdp, clipped_mass, compare_priority,
                          flow_params_for, relative_value_iteration)
from d2dpower.priority import build_per_flow


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gammas", default="1,10,50,200,1000")
    ap.add_argument("--snap", choices=["nearest", "linear"], default="nearest")
    args = ap.parse_args()
    print(f"{'gamma':>8} {'spearman':>9} {'thr diff':>9} {'theta/t':>10} {'c_inf':>10} {'clipped':>9}  thresholds rvi / formula")
    for g in (float(v) for v in args.gammas.split(",")):
        spec = replace(MdpSpec(), gamma=(g,), snap=args.snap)
        mdp = build_quantized_mdp(spec)
        res = relative_value_iteration(mdp)
        pf = build_per_flow(flow_params_for(spec), q_max_table=100 * mdp.queue_grid[-1])
        c = compare_priority(mdp, res, pf)
        print(f"{g:>8g} {c.spearman:>9.4f} {c.max_threshold_diff:>9d} {c.theta_per_time:>10.4g} "
              f"{c.c_inf:>10.4g} {clipped_mass(mdp, res):>9.1e}  "
              f"{c.threshold_rvi.tolist()} / {c.threshold_formula.tolist()}")


if __name__ == "__main__":
    main()
