"""Mean delay and power of every policy on random topologies.

    python3 scripts/compare_policies.py --topologies 20 --slots 1000
    python3 scripts/compare_policies.py --no-coupling   # per-flow priorities only
"""
import argparse
import time

from d2dpower.controller import ALL_POLICIES
from d2dpower.sim import SimConfig, monte_carlo


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--topologies", type=int, default=20)
    ap.add_argument("--slots", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma", type=float, default=SimConfig.gamma)
    ap.add_argument("--arrival-rate", type=float, default=SimConfig.mean_arrival_rate)
    ap.add_argument("--no-coupling", action="store_true", help="drop the cross-link priority term")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = SimConfig(num_topologies=args.topologies, horizon=args.slots, seed=args.seed,
                    gamma=args.gamma, mean_arrival_rate=args.arrival_rate,
                    coupling=not args.no_coupling)
    t0 = time.perf_counter()
    res = monte_carlo(cfg, ALL_POLICIES, workers=args.workers)
    print(f"{'policy':<16} {'delay ms':>18} {'power W':>18} {'nonconv':>8} {'cap hits':>9}")
    for p, s in res.items():
        (d, sd), (pw, sp) = s.delay, s.power
        nc = sum(m.nonconverged for m in s.episodes)
        cap = sum(m.cap_hits for m in s.episodes)
        print(f"{p:<16} {1e3 * d:>10.3f} +- {1e3 * sd:<5.3f} {pw:>10.4f} +- {sp:<6.4f} {nc:>8} {cap:>9}")
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
