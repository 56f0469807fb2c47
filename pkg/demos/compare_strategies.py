"""Train the synthetic task under privacy-aware and random sampling and compare."""

from __future__ import annotations

import argparse

import numpy as np

from privsample.baselines import SamplingStrategy
from privsample.fltrain import make_quadratic_task
from privsample.game import GameConfig, solve_game


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--clip", type=float, default=5.0)
    ap.add_argument("--lr", type=float, default=0.1)
    args = ap.parse_args()

    cfg = GameConfig(seed=0, clip=args.clip)
    sol = solve_game(cfg)
    task = make_quadratic_task(N=cfg.N, seed=0)
    print(f"F* = {task.F_star:.5f}")
    for kind in ("fedpcs", "random", "aocs"):
        recs = [SamplingStrategy(kind).run(sol, task, s, args.lr) for s in range(args.seeds)]
        loss = np.array([r.loss[-1] for r in recs])
        acc = np.array([r.accuracy_metric[-1] for r in recs])
        print(f"{kind:8s} final loss {loss.mean():.5f} +- {loss.std(ddof=1):.5f}   final A {acc.mean():.3e}")


if __name__ == "__main__":
    main()
