"""Batch experiment runner.

    privsample solve-game --config cfg.json --seed 7
    privsample compare --strategies fedpcs,random --seeds 1..20

Every output file carries the config hash and seed in its name; JSON outputs
carry ``schema_version``. Outputs contain no timings so reruns are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION
from .adaptive import BudgetConstraintSchedule, run_adaptive
from .baselines import SamplingStrategy
from .fltrain import FLRunRecord, make_logistic_task, make_quadratic_task
from .game import GameConfig, NonConvergenceError, solve_game, verify_sne
from .sampling import WITH_REPLACEMENT, WITHOUT_REPLACEMENT
from .welfare import WelfareReport, welfare_report

OUT_ENV = "PRIVSAMPLE_OUT"
SCENARIOS = ("solve-game", "run-fl", "welfare", "adaptive", "compare")


class ConfigError(ValueError):
    pass


@dataclass
class TaskSpec:
    kind: str = "quadratic"
    d: int = 5
    samples: int = 50
    shift: float = 0.5
    reg: float = 0.1
    feature_spread: float = 0.3
    separation: float = 1.0
    seed: int = 0

    def build(self, N: int):
        if self.kind == "quadratic":
            return make_quadratic_task(N, self.d, self.samples, self.shift, self.reg,
                                       self.feature_spread, seed=self.seed)
        if self.kind == "logistic":
            return make_logistic_task(N, self.d, self.samples, self.separation, self.shift, self.reg, seed=self.seed)
        raise ConfigError(f"task.kind: unknown task {self.kind!r}")


@dataclass
class TrainingSpec:
    lr: float = 0.1
    local_epochs: int = 1
    mode: str = WITHOUT_REPLACEMENT
    clip_params: bool = True
    random_budgets: str = "floor"


@dataclass
class AdaptiveSpec:
    # explicit cap per round, or a linear ramp from start to stop
    B: list | None = None
    start: float = 40.0
    stop: float = 15.0
    freeze_t: bool = False

    def schedule(self, T: int) -> BudgetConstraintSchedule:
        if self.B is not None:
            return BudgetConstraintSchedule(np.asarray(self.B, dtype=float))
        return BudgetConstraintSchedule.linear(self.start, self.stop, T)


@dataclass
class ScenarioConfig:
    # game keys as given; the GameConfig is built per seed so seed-drawn
    # defaults (utility weights, initial budgets) follow the run seed
    game_overrides: dict = field(default_factory=dict)
    task: TaskSpec = field(default_factory=TaskSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    adaptive: AdaptiveSpec = field(default_factory=AdaptiveSpec)
    strategies: list = field(default_factory=lambda: ["fedpcs", "random"])
    seeds: list = field(default_factory=lambda: [0])

    @property
    def game(self) -> GameConfig:
        return GameConfig(**self.game_overrides)

    def game_for(self, seed: int) -> GameConfig:
        return GameConfig(**{**self.game_overrides, "seed": int(seed)})

    def to_dict(self) -> dict:
        return {
            "game": dict(self.game_overrides),
            "task": dataclasses.asdict(self.task),
            "training": dataclasses.asdict(self.training),
            "adaptive": dataclasses.asdict(self.adaptive),
            "strategies": list(self.strategies),
            "seeds": list(self.seeds),
        }

    def __eq__(self, other) -> bool:
        return isinstance(other, ScenarioConfig) and _canonical(self.to_dict()) == _canonical(other.to_dict())

    def hash(self) -> str:
        """Digest of everything except the seeds; the seed is named separately."""
        d = self.to_dict()
        d.pop("seeds")
        d["game"].pop("seed", None)
        return hashlib.sha256(_canonical(d).encode()).hexdigest()[:12]


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _canonical(d) -> str:
    return json.dumps(d, sort_keys=True, default=_jsonable)


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise ConfigError(f"{prefix}.{k}: unknown key")
    try:
        return cls(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix}: {e}") from None


def load_config(path) -> ScenarioConfig:
    """Parse a JSON scenario file; an empty file yields every default."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if not text.strip():
        return ScenarioConfig()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be an object")
    known = {"game", "task", "training", "adaptive", "strategies", "seeds"}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{k}: unknown key")
    kw = {}
    if "game" in raw:
        _build(GameConfig, raw["game"], "game")
        kw["game_overrides"] = dict(raw["game"])
    for name, cls in (("task", TaskSpec), ("training", TrainingSpec), ("adaptive", AdaptiveSpec)):
        if name in raw:
            kw[name] = _build(cls, raw[name], name)
    for name in ("strategies", "seeds"):
        if name in raw:
            if not isinstance(raw[name], list) or not raw[name]:
                raise ConfigError(f"{name}: expected a non-empty list")
            kw[name] = raw[name]
    cfg = ScenarioConfig(**kw)
    _check(cfg)
    return cfg


def _check(cfg: ScenarioConfig) -> None:
    if cfg.training.mode not in (WITH_REPLACEMENT, WITHOUT_REPLACEMENT):
        raise ConfigError(f"training.mode: expected {WITH_REPLACEMENT} or {WITHOUT_REPLACEMENT}")
    if cfg.training.lr <= 0:
        raise ConfigError("training.lr: must be positive")
    if cfg.task.kind not in ("quadratic", "logistic"):
        raise ConfigError(f"task.kind: unknown task {cfg.task.kind!r}")
    for s in cfg.strategies:
        try:
            SamplingStrategy(s)
        except ValueError as e:
            raise ConfigError(f"strategies: {e}") from None
    if any(not isinstance(s, int) or isinstance(s, bool) for s in cfg.seeds):
        raise ConfigError("seeds: expected integers")


def parse_seeds(text: str) -> list[int]:
    """'7', '1,3,5' or '1..20' (inclusive)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"--seeds: empty range {part!r}")
            out.extend(range(lo, hi + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ConfigError("--seeds: no seeds given")
    return out


# ------------------------------------------------------------------ writers


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _stem(kind: str, cfg: ScenarioConfig, seed: int, extra: str = "") -> str:
    return f"{kind}_{cfg.hash()}_seed{seed}" + (f"_{extra}" if extra else "")


def _header(cfg: ScenarioConfig, seed: int, scenario: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "scenario": scenario, "config_hash": cfg.hash(), "seed": seed}


def _write_record(out: Path, stem: str, rec: FLRunRecord, head: dict) -> None:
    _write_csv(out / f"{stem}.csv", FLRunRecord.CSV_COLUMNS, rec.csv_rows())
    _write_json(out / f"{stem}.json", {**head, "record": rec.to_dict()})


# ---------------------------------------------------------------- scenarios


def _solve(cfg: ScenarioConfig, seed: int):
    return solve_game(cfg.game_for(seed))


def _do_solve_game(cfg: ScenarioConfig, seed: int, out: Path) -> dict:
    sol = _solve(cfg, seed)
    dev = verify_sne(sol)
    stem = _stem("solve-game", cfg, seed)
    _write_json(out / f"{stem}.json", {**_header(cfg, seed, "solve-game"), "solution": sol.to_dict(),
                                       "deviation": dev.to_dict()})
    trace = sol.diagnostics["residual_trace"]
    _write_csv(out / f"{stem}_residuals.csv", ("iteration", "residual"),
               [[k + 1, repr(float(r))] for k, r in enumerate(trace)])
    rounds = [f"t{t}" for t in range(sol.cfg.T + 1)]
    for name, mat in (("budgets", sol.budgets), ("alphas", sol.alphas)):
        _write_csv(out / f"{stem}_{name}.csv", ("client", *rounds),
                   [[i, *(repr(float(v)) for v in row)] for i, row in enumerate(mat)])
    return {"seed": seed, "outer_iterations": sol.diagnostics["outer_iterations"]}


def _train(cfg: ScenarioConfig, seed: int, sol, strategy: str):
    task = cfg.task.build(cfg.game.N)
    st = SamplingStrategy(strategy, cfg.training.random_budgets)
    return st.run(sol, task, seed, cfg.training.lr, mode=cfg.training.mode,
                  local_epochs=cfg.training.local_epochs, clip_params=cfg.training.clip_params)


def _do_run_fl(cfg: ScenarioConfig, seed: int, out: Path) -> dict:
    sol = _solve(cfg, seed)
    finals = {}
    for s in cfg.strategies:
        rec = _train(cfg, seed, sol, s)
        _write_record(out, _stem("run-fl", cfg, seed, s), rec, {**_header(cfg, seed, "run-fl"), "strategy": s})
        finals[s] = (float(rec.loss[-1]), float(rec.accuracy_metric[-1]), float(rec.dist_sq[-1]))
    return {"seed": seed, "finals": finals}


WELFARE_COLUMNS = tuple(f.name for f in fields(WelfareReport))


def _do_welfare(cfg: ScenarioConfig, seed: int, out: Path) -> dict:
    sol = _solve(cfg, seed)
    g = sol.cfg
    rep = welfare_report(sol.budgets, sol.rewards, g.varphi, g.rho_low, g.rho_high)
    stem = _stem("welfare", cfg, seed)
    _write_json(out / f"{stem}.json", {**_header(cfg, seed, "welfare"), "report": rep.to_dict()})
    row = rep.to_dict()
    _write_csv(out / f"{stem}.csv", ("seed", *WELFARE_COLUMNS), [[seed, *(repr(row[k]) for k in WELFARE_COLUMNS)]])
    return {"seed": seed}


def _do_adaptive(cfg: ScenarioConfig, seed: int, out: Path) -> dict:
    sol = _solve(cfg, seed)
    task = cfg.task.build(cfg.game.N)
    sched = cfg.adaptive.schedule(cfg.game.T)
    for s in ("fedpcs", "random"):
        rec, plan = run_adaptive(sol.cfg, sched, task, seed=seed, lr=cfg.training.lr, sol=sol, strategy=s,
                                 freeze_t=cfg.adaptive.freeze_t, clip_params=cfg.training.clip_params)
        stem = _stem("adaptive", cfg, seed, s)
        plan.write_csv(out / f"{stem}_plan.csv")
        _write_record(out, stem, rec, {**_header(cfg, seed, "adaptive"), "strategy": s, "flags": plan.flags})
    return {"seed": seed}


def _compare_one(cfg: ScenarioConfig, seed: int, out: Path) -> dict:
    return _do_run_fl(cfg, seed, out)


def _summarize(cfg: ScenarioConfig, results: list[dict], out: Path) -> None:
    cols = ("seed", "final_loss", "final_accuracy_metric", "final_dist_sq")
    summary = []
    for s in cfg.strategies:
        rows = [[r["seed"], *(repr(v) for v in r["finals"][s])] for r in results]
        _write_csv(out / f"compare_{cfg.hash()}_{s}.csv", cols, rows)
        loss = np.array([r["finals"][s][0] for r in results])
        acc = np.array([r["finals"][s][1] for r in results])
        sd = (lambda v: float(v.std(ddof=1)) if v.size > 1 else 0.0)
        summary.append([s, loss.size, repr(float(loss.mean())), repr(sd(loss)), repr(float(acc.mean())), repr(sd(acc))])
    _write_csv(out / f"compare_{cfg.hash()}_summary.csv",
               ("strategy", "n_seeds", "mean_final_loss", "sd_final_loss", "mean_final_accuracy_metric",
                "sd_final_accuracy_metric"), summary)


RUNNERS = {
    "solve-game": _do_solve_game,
    "run-fl": _do_run_fl,
    "welfare": _do_welfare,
    "adaptive": _do_adaptive,
    "compare": _compare_one,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="privsample", description="Privacy-aware client sampling experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in SCENARIOS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON scenario file (defaults when omitted)")
        s.add_argument("--seed", "--seeds", dest="seeds", help="seed, list '1,2' or range '1..20'")
        s.add_argument("--out", default=os.environ.get(OUT_ENV, "results"),
                       help=f"output directory (default ${OUT_ENV} or ./results)")
        s.add_argument("--strategy", "--strategies", dest="strategies", help="comma-separated strategies")
        s.add_argument("--mode", choices=("with", "without", WITH_REPLACEMENT, WITHOUT_REPLACEMENT))
        s.add_argument("--jobs", type=int, default=1, help="seeds run in parallel")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        if args.seeds:
            cfg.seeds = parse_seeds(args.seeds)
        if args.strategies:
            cfg.strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
        if args.mode:
            cfg.training.mode = WITH_REPLACEMENT if args.mode.startswith("with-") or args.mode == "with" else WITHOUT_REPLACEMENT
        _check(cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ConfigError(f"--out: directory not writable: {out}")
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    run = RUNNERS[args.command]
    try:
        if args.jobs > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(args.jobs) as ex:
                results = list(ex.map(run, [cfg] * len(cfg.seeds), cfg.seeds, [out] * len(cfg.seeds)))
        else:
            results = [run(cfg, s, out) for s in cfg.seeds]
    except NonConvergenceError as e:
        print(f"solver did not converge: {e}", file=sys.stderr)
        return 2
    if args.command == "compare":
        _summarize(cfg, results, out)
    print(f"{args.command}: {len(results)} seed(s) written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
