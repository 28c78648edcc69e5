"""Experiment runner: per-seed training and evaluation, CSV/JSON logs, run comparison."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agents import Agent, make_agent
from .config import RunConfig
from .envs import (
    ChainEnv,
    ChainInstance,
    Env,
    GridNavEnv,
    GridNavInstance,
    KnapsackEnv,
    KnapsackInstance,
    dp_knapsack,
)

log = logging.getLogger(__name__)

CSV_FIELDS = ("episode", "reward", "alpha_mean", "ltv", "success", "collisions", "ms")


@dataclass(frozen=True)
class EpisodeLog:
    episode: int
    reward: float
    alpha_mean: float
    ltv: float
    success: bool
    collisions: int
    ms: int = 0


@dataclass
class SeedResult:
    seed: int
    train: list = field(default_factory=list)
    eval: list = field(default_factory=list)
    failure: Optional[str] = None
    instance: Optional[dict] = None
    optimum: Optional[float] = None


def build_env(env_cfg, seed: int) -> Env:
    p = env_cfg.params
    if env_cfg.kind == "chain":
        return ChainEnv(ChainInstance(p["length"], float(p["reward"]), p["max_steps"]))
    inst_seed = p.get("instance_seed")
    inst_seed = seed if inst_seed is None else int(inst_seed)
    if env_cfg.kind == "knapsack":
        inst = KnapsackInstance.random(p["num_items"], inst_seed, tuple(p["weight_range"]),
                                       tuple(p["value_range"]), p["capacity_fraction"])
        return KnapsackEnv(inst)
    if env_cfg.kind == "gridnav":
        inst = GridNavInstance.random(
            p["width"], p["height"], p["density"] * p["obstacle_scale"], inst_seed,
            step_penalty=float(p["step_penalty"]), collision_penalty=float(p["collision_penalty"]),
            goal_bonus=float(p["goal_bonus"]), max_steps=p["max_steps"])
        return GridNavEnv(inst)
    raise ValueError(f"unknown environment kind {env_cfg.kind!r}")


def horizon(env: Env) -> int:
    if isinstance(env, KnapsackEnv):
        return env.num_items
    return env.instance.max_steps


def run_episode(agent: Agent, env: Env, episode: int, timing: bool = False) -> EpisodeLog:
    t0 = time.perf_counter() if timing else 0.0
    agent.start_episode(episode)
    s = env.reset()
    total, done = 0.0, False
    while not done:
        s, r, done = agent.step(env, s)
        total += r
    agent.end_episode(total)
    alphas = agent.step_alphas
    return EpisodeLog(episode, total, float(np.mean(alphas)) if alphas else 0.0, agent.last_ltv(),
                      env.success, env.collisions, int((time.perf_counter() - t0) * 1000) if timing else 0)


def evaluate(agent: Agent, env: Env, episodes: int, seed: int, timing: bool = False) -> list[EpisodeLog]:
    """Greedy rollouts with learning and adaptation frozen; agent state is left untouched."""
    rng = np.random.default_rng([seed, 0xE7A1])
    out = []
    for ep in range(episodes):
        t0 = time.perf_counter() if timing else 0.0
        s = env.reset()
        total, done, alphas = 0.0, False, []
        prev_action = 0
        while not done:
            alphas.append(agent.eval_alpha(s, prev_action))
            a = agent.act_eval(s, rng, prev_action)
            s, r, done = env.step(a)
            total += r
            prev_action = a
        out.append(EpisodeLog(ep, total, float(np.mean(alphas)), agent.last_ltv(), env.success,
                              env.collisions, int((time.perf_counter() - t0) * 1000) if timing else 0))
    return out


def run_seed(config: RunConfig, seed: int) -> SeedResult:
    result = SeedResult(seed)
    try:
        env = build_env(config.env, seed)
        result.instance = env.instance.to_dict()
        if isinstance(env, KnapsackEnv):
            result.optimum = float(dp_knapsack(env.instance))
        agent = make_agent(config.agent, env.num_states, env.num_actions, seed,
                           total_periods=config.episodes * horizon(env))
        for ep in range(config.episodes):
            result.train.append(run_episode(agent, env, ep, config.log_timing))
            if config.log_every and (ep + 1) % config.log_every == 0:
                log.info("seed %d episode %d reward %.3f", seed, ep + 1, result.train[-1].reward)
        result.eval = evaluate(agent, env, config.eval_episodes, seed, config.log_timing)
    except Exception as exc:  # one seed failing must not abort the others
        log.exception("seed %d failed", seed)
        result.failure = f"{type(exc).__name__}: {exc}"
    return result


def _run_seed_args(args):
    return run_seed(*args)


def run_experiment(config: RunConfig, workers: Optional[int] = None) -> dict[int, SeedResult]:
    """Train and evaluate one fresh agent per seed. Seeds may run in parallel processes."""
    workers = workers or config.workers
    jobs = [(config, s) for s in config.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed_args, jobs))
    else:
        results = [run_seed(*j) for j in jobs]
    return {r.seed: r for r in results}


# --------------------------------------------------------------------------- logs


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(records: Sequence[EpisodeLog]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for rec in records:
        w.writerow([_fmt(v) for v in astuple(rec)])
    return buf.getvalue()


def _window(records, frac: float):
    n = max(1, int(round(len(records) * frac)))
    return records[-n:]


def _stats(values) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def seed_metrics(result: SeedResult, final_window: float) -> dict:
    win = _window(result.train, final_window) if result.train else []
    ev = result.eval
    out = {
        "final_window_reward": float(np.mean([r.reward for r in win])) if win else None,
        "final_window_success": float(np.mean([r.success for r in win])) if win else None,
        "eval_reward": float(np.mean([r.reward for r in ev])) if ev else None,
        "eval_success_rate": float(np.mean([r.success for r in ev])) if ev else None,
        "eval_collision_rate": float(np.mean([r.collisions > 0 for r in ev])) if ev else None,
        "eval_collisions_mean": float(np.mean([r.collisions for r in ev])) if ev else None,
    }
    if result.optimum is not None:
        out["optimum"] = result.optimum
    return out


def summarize(config: RunConfig, results: dict[int, SeedResult]) -> dict:
    ok = [results[s] for s in config.seeds if results[s].failure is None]
    per_seed = {str(r.seed): seed_metrics(r, config.final_window) for r in ok}
    final = {}
    for key in ("final_window_reward", "final_window_success", "eval_reward", "eval_success_rate",
                "eval_collision_rate"):
        final[key] = _stats([m[key] for m in per_seed.values() if m[key] is not None])
    curves = {}
    if ok:
        rewards = np.array([[r.reward for r in res.train] for res in ok])
        alphas = np.array([[r.alpha_mean for r in res.train] for res in ok])
        ltvs = np.array([[r.ltv for r in res.train] for res in ok])
        curves = {
            "reward_mean": rewards.mean(axis=0).tolist(),
            "reward_std": rewards.std(axis=0).tolist(),
            "reward_p05": np.percentile(rewards, 5, axis=0).tolist(),
            "reward_p95": np.percentile(rewards, 95, axis=0).tolist(),
            "alpha_mean": alphas.mean(axis=0).tolist(),
            "ltv_mean": ltvs.mean(axis=0).tolist(),
        }
    return {
        "schema_version": config.schema_version,
        "agent": config.label,
        "config": config.to_dict(),
        "csv_fields": list(CSV_FIELDS),
        "seeds": list(config.seeds),
        "failures": {str(s): results[s].failure for s in config.seeds if results[s].failure},
        "instances": {str(r.seed): r.instance for r in results.values() if r.instance is not None},
        "per_seed": per_seed,
        "final": final,
        "curves": curves,
        "band": "seed-wise 5th/95th percentile (90% interval)",
    }


def write_logs(config: RunConfig, results: dict[int, SeedResult], out_dir=None) -> list[Path]:
    """Write ``episodes_<agent>_<seed>.csv``, ``eval_<agent>_<seed>.csv`` and ``summary.json``."""
    out = Path(out_dir) if out_dir is not None else config.output_dir()
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        label = config.label
        for seed in config.seeds:
            res = results[seed]
            for prefix, recs in (("episodes", res.train), ("eval", res.eval)):
                path = out / f"{prefix}_{label}_{seed}.csv"
                path.write_text(csv_text(recs), encoding="utf-8")
                written.append(path)
        path = out / "summary.json"
        path.write_text(json.dumps(summarize(config, results), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
        written.append(path)
    except OSError as exc:
        raise OSError(f"writing logs to {out}: {exc}") from exc
    return written


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


# --------------------------------------------------------------------------- comparison


class ReportError(ValueError):
    pass


def _load_run(run_dir: Path) -> dict:
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise ReportError(f"{run_dir}: no summary.json")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    label = summary["agent"]
    headers, curves = None, {}
    for seed in summary["seeds"]:
        path = run_dir / f"episodes_{label}_{seed}.csv"
        if not path.exists():
            continue
        cols, rows = read_csv(path)
        headers = cols if headers is None else headers
        if cols != headers:
            raise ReportError(f"{path}: columns {cols} differ from {headers}")
        curves[str(seed)] = [float(r["reward"]) for r in rows]
    return {"dir": str(run_dir), "agent": label, "summary": summary, "columns": headers or [],
            "curves": curves}


def compare_report(run_dirs: Sequence, out_dir=None) -> dict:
    """Tabulate final-window and evaluation metrics per run, rank them, pair seeds.

    Writes ``report.json``, ``report.md`` and the long-format ``curves_long.csv``
    (per-episode seed mean and 5th/95th percentiles) into ``out_dir``.
    """
    if len(run_dirs) < 2:
        raise ReportError("compare needs at least two run directories")
    runs = [_load_run(Path(d)) for d in run_dirs]
    base = runs[0]["columns"]
    for r in runs[1:]:
        if r["columns"] != base:
            diff = sorted(set(base) ^ set(r["columns"])) or ["(column order)"]
            raise ReportError(f"schema mismatch between {runs[0]['dir']} and {r['dir']}: {', '.join(diff)}")

    names = []
    for i, r in enumerate(runs):
        name = r["agent"]
        names.append(name if names.count(name) == 0 and name not in names else f"{name}#{i}")

    table = []
    for name, r in zip(names, runs):
        final = r["summary"]["final"]
        table.append({
            "run": name,
            "dir": r["dir"],
            "final_window_reward": final["final_window_reward"],
            "eval_reward": final["eval_reward"],
            "eval_success_rate": final["eval_success_rate"],
            "eval_collision_rate": final["eval_collision_rate"],
        })
    ordering = sorted(range(len(runs)), key=lambda i: (-(table[i]["final_window_reward"]["mean"] or 0.0), i))

    paired = []
    for i in range(len(runs)):
        for j in range(i + 1, len(runs)):
            pi, pj = runs[i]["summary"]["per_seed"], runs[j]["summary"]["per_seed"]
            common = sorted(set(pi) & set(pj), key=int)
            diffs = [pi[s]["final_window_reward"] - pj[s]["final_window_reward"] for s in common]
            paired.append({
                "a": names[i], "b": names[j], "seeds": [int(s) for s in common],
                "mean_difference": float(np.mean(diffs)) if diffs else None,
                "a_wins": int(sum(d > 0 for d in diffs)),
                "b_wins": int(sum(d < 0 for d in diffs)),
                "ties": int(sum(d == 0 for d in diffs)),
            })

    report = {"runs": table, "ordering": [names[i] for i in ordering], "paired": paired,
              "band": "seed-wise 5th/95th percentile (90% interval)"}

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "report.md").write_text(_markdown(report), encoding="utf-8")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "episode", "reward_mean", "reward_p05", "reward_p95", "n_seeds"])
        for name, r in zip(names, runs):
            if not r["curves"]:
                continue
            length = min(len(c) for c in r["curves"].values())
            mat = np.array([c[:length] for c in r["curves"].values()])
            mean = mat.mean(axis=0)
            lo, hi = np.percentile(mat, 5, axis=0), np.percentile(mat, 95, axis=0)
            for ep in range(length):
                w.writerow([name, ep, repr(float(mean[ep])), repr(float(lo[ep])), repr(float(hi[ep])),
                            mat.shape[0]])
        (out / "curves_long.csv").write_text(buf.getvalue(), encoding="utf-8")
    return report


def _pm(stat: dict, pct: bool = False) -> str:
    if stat["mean"] is None:
        return "n/a"
    k = 100.0 if pct else 1.0
    return f"{stat['mean'] * k:.2f} ± {stat['std'] * k:.2f}"


def _markdown(report: dict) -> str:
    lines = ["| run | final-window reward | eval reward | success % | collision % |",
             "|---|---|---|---|---|"]
    for row in report["runs"]:
        lines.append(f"| {row['run']} | {_pm(row['final_window_reward'])} | {_pm(row['eval_reward'])} | "
                     f"{_pm(row['eval_success_rate'], True)} | {_pm(row['eval_collision_rate'], True)} |")
    lines += ["", "Ordering (final-window reward): " + " > ".join(report["ordering"]), ""]
    for p in report["paired"]:
        md = "n/a" if p["mean_difference"] is None else f"{p['mean_difference']:.3f}"
        lines.append(f"- {p['a']} vs {p['b']}: mean paired difference {md} "
                     f"(wins {p['a_wins']}/{p['b_wins']}, ties {p['ties']})")
    return "\n".join(lines) + "\n"
