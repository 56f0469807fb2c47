"""Solve the default game for one seed and print how budgets and rewards evolve."""

from __future__ import annotations

import argparse
import time

import numpy as np

from privsample.game import GameConfig, solve_game, verify_sne


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--N", type=int, default=100)
    ap.add_argument("--T", type=int, default=30)
    args = ap.parse_args()

    cfg = GameConfig(N=args.N, T=args.T, seed=args.seed)
    t0 = time.perf_counter()
    sol = solve_game(cfg, verbose=True)
    print(f"solved in {time.perf_counter() - t0:.1f}s, {sol.diagnostics['outer_iterations']} outer iterations")

    rep = verify_sne(sol)
    print(f"best unilateral gain: clients {rep.worst_client_gain:.2e}, server {rep.worst_server_gain:.2e}")

    print(" t   reward    phi(t)   min rho   max rho")
    for t in range(0, cfg.T + 1, max(1, cfg.T // 10)):
        b = sol.budgets[:, t]
        print(f"{t:2d} {sol.rewards[t]:8.3f} {sol.phi[t]:9.3f} {b.min():9.3f} {b.max():9.3f}")

    # clients who care less about privacy (small varphi) end up with larger budgets
    order = np.argsort(cfg.varphi)
    print("mean final budget, lowest vs highest varphi decile:",
          f"{sol.budgets[order[:cfg.N // 10], -1].mean():.3f}", f"{sol.budgets[order[-cfg.N // 10:], -1].mean():.3f}")


if __name__ == "__main__":
    main()
