"""Run the capped adaptive sampler and print the per-round plan."""

from __future__ import annotations

import argparse

import numpy as np

from privsample.adaptive import BudgetConstraintSchedule, run_adaptive
from privsample.fltrain import make_quadratic_task
from privsample.game import GameConfig, solve_game


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--start", type=float, default=40.0)
    ap.add_argument("--stop", type=float, default=15.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = GameConfig(N=30, T=12, seed=args.seed)
    sol = solve_game(cfg)
    task = make_quadratic_task(N=cfg.N, seed=args.seed)
    sched = BudgetConstraintSchedule.linear(args.start, args.stop, cfg.T)
    _, fed = run_adaptive(cfg, sched, task, seed=args.seed, sol=sol)
    _, rnd = run_adaptive(cfg, sched, task, seed=args.seed, sol=sol, strategy="random")
    print(" t     B_t  K_t      R*   usage(fedpcs)  usage(random)")
    for t in range(cfg.T):
        print(f"{t:2d} {sched.B[t]:7.2f} {fed.K_t[t]:4d} {fed.rewards[t]:7.3f} {fed.usage_ratio[t]:14.3f} "
              f"{rnd.usage_ratio[t]:14.3f}")
    print(f"mean usage: fedpcs {np.nanmean(fed.usage_ratio):.3f}, random {np.nanmean(rnd.usage_ratio):.3f}")
    if fed.flags:
        print("flags:", ", ".join(fed.flags))


if __name__ == "__main__":
    main()
