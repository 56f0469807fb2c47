"""Welfare and price of anarchy of solved games as the budget floor moves."""

from __future__ import annotations

from privsample.game import GameConfig, solve_game
from privsample.welfare import welfare_report


def main() -> None:
    print("rho_low   SW(opt)   SW(nash)  SW(rand)  PoA(rand)  lower bound")
    for rho_low in (0.005, 0.01, 0.02, 0.05, 0.1):
        cfg = GameConfig(N=20, T=6, seed=4, rho_low=rho_low)
        sol = solve_game(cfg)
        r = welfare_report(sol.budgets, sol.rewards, cfg.varphi, cfg.rho_low, cfg.rho_high)
        print(f"{rho_low:7.3f} {r.sw_opt:9.1f} {r.sw_nash:9.1f} {r.sw_random:9.2f} {r.poa_random:10.1f} "
              f"{r.rand_lower_bound:12.1f}")


if __name__ == "__main__":
    main()
