import csv
import json

import numpy as np
import pytest

from drlora.config import load_config
from drlora.harness import (
    CSV_FIELDS,
    EpisodeLog,
    ReportError,
    build_env,
    compare_report,
    csv_text,
    run_experiment,
    run_seed,
    write_logs,
)


def chain_cfg(**kw):
    raw = {"env": {"kind": "chain"}, "episodes": 10, "seeds": [0], "eval_episodes": 3}
    raw.update(kw)
    return load_config(raw)


def test_csv_shapes():
    assert csv_text([]) == ",".join(CSV_FIELDS) + "\n"
    recs = [EpisodeLog(i, 1.0, 0.5, 0.0, True, 0) for i in range(3)]
    assert len(csv_text(recs).splitlines()) == 4


def test_chain_run_counts():
    res = run_experiment(chain_cfg())[0]
    assert res.failure is None
    assert len(res.train) == 10 and len(res.eval) == 3
    assert [r.episode for r in res.train] == list(range(10))


def test_byte_identical(tmp_path):
    cfg = chain_cfg(seeds=[0, 1])
    for name in ("a", "b"):
        write_logs(cfg, run_experiment(cfg), tmp_path / name)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["episodes_ora_0.csv", "episodes_ora_1.csv", "eval_ora_0.csv", "eval_ora_1.csv",
                     "summary.json"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_parallel_matches_sequential(tmp_path):
    cfg = chain_cfg(seeds=[0, 1, 2])
    write_logs(cfg, run_experiment(cfg, workers=1), tmp_path / "seq")
    write_logs(cfg, run_experiment(cfg, workers=2), tmp_path / "par")
    for p in (tmp_path / "seq").iterdir():
        assert p.read_bytes() == (tmp_path / "par" / p.name).read_bytes()


def test_failed_seed_is_isolated(monkeypatch):
    import drlora.harness as h
    real = h.build_env

    def flaky(env_cfg, seed):
        if seed == 1:
            raise RuntimeError("boom")
        return real(env_cfg, seed)

    monkeypatch.setattr(h, "build_env", flaky)
    out = run_experiment(chain_cfg(seeds=[0, 1]))
    assert out[0].failure is None and "boom" in out[1].failure


def test_eval_does_not_mutate_agent():
    import drlora.harness as h
    from drlora.agents import make_agent

    cfg = chain_cfg()
    env = build_env(cfg.env, 0)
    agent = make_agent(cfg.agent, env.num_states, env.num_actions, 0, total_periods=500)
    for ep in range(5):
        h.run_episode(agent, env, ep)
    before = agent.state_digest()
    h.evaluate(agent, env, 5, 0)
    assert agent.state_digest() == before


def test_summary_matches_csvs(tmp_path):
    cfg = chain_cfg(seeds=[0, 1, 2], episodes=20, final_window=0.25)
    write_logs(cfg, run_experiment(cfg), tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    finals = []
    for s in cfg.seeds:
        with open(tmp_path / f"episodes_ora_{s}.csv") as fh:
            rows = list(csv.DictReader(fh))
        finals.append(np.mean([float(r["reward"]) for r in rows[-5:]]))
    assert summary["final"]["final_window_reward"]["mean"] == pytest.approx(np.mean(finals))
    assert summary["final"]["final_window_reward"]["std"] == pytest.approx(np.std(finals))
    assert len(summary["curves"]["reward_mean"]) == 20


def test_knapsack_records_optimum():
    cfg = load_config({"env": {"kind": "knapsack", "num_items": 6}, "agent": {"adaptation": "fixed"},
                       "episodes": 2, "eval_episodes": 1})
    res = run_seed(cfg, 0)
    assert res.optimum is not None and res.instance["capacity"] > 0


def test_write_error_has_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = chain_cfg(episodes=1)
    with pytest.raises(OSError, match=str(blocker)):
        write_logs(cfg, run_experiment(cfg), blocker / "sub")


def _fake_run(path, label, rewards_by_seed):
    path.mkdir(parents=True)
    per_seed = {}
    for seed, rewards in rewards_by_seed.items():
        recs = [EpisodeLog(i, float(r), 1.0, 0.0, True, 0) for i, r in enumerate(rewards)]
        (path / f"episodes_{label}_{seed}.csv").write_text(csv_text(recs))
        per_seed[str(seed)] = {"final_window_reward": float(rewards[-1])}
    finals = [float(r[-1]) for r in rewards_by_seed.values()]
    stat = {"mean": float(np.mean(finals)), "std": float(np.std(finals)), "n": len(finals)}
    none = {"mean": None, "std": None, "n": 0}
    (path / "summary.json").write_text(json.dumps({
        "agent": label, "seeds": list(rewards_by_seed), "per_seed": per_seed,
        "final": {"final_window_reward": stat, "eval_reward": none, "eval_success_rate": none,
                  "eval_collision_rate": none}}))


def test_compare_scripted(tmp_path):
    _fake_run(tmp_path / "a", "a", {0: [0, 1], 1: [0, 3]})
    _fake_run(tmp_path / "b", "b", {0: [0, 4], 1: [0, 4]})
    rep = compare_report([tmp_path / "a", tmp_path / "b"], tmp_path / "out")
    assert rep["ordering"] == ["b", "a"]
    pair = rep["paired"][0]
    assert pair["mean_difference"] == pytest.approx(-2.0) and pair["b_wins"] == 2
    lines = (tmp_path / "out" / "curves_long.csv").read_text().splitlines()
    assert lines[0] == "run,episode,reward_mean,reward_p05,reward_p95,n_seeds" and len(lines) == 5
    assert (tmp_path / "out" / "report.md").exists()


def test_compare_self_zero(tmp_path):
    cfg = chain_cfg(seeds=[0, 1])
    write_logs(cfg, run_experiment(cfg), tmp_path / "r")
    rep = compare_report([tmp_path / "r", tmp_path / "r"])
    assert rep["paired"][0]["mean_difference"] == 0.0


def test_compare_rejects(tmp_path):
    _fake_run(tmp_path / "a", "a", {0: [1]})
    with pytest.raises(ReportError, match="two"):
        compare_report([tmp_path / "a"])
    _fake_run(tmp_path / "b", "b", {0: [1]})
    f = tmp_path / "b" / "episodes_b_0.csv"
    f.write_text(f.read_text().replace("ltv", "lvt"))
    with pytest.raises(ReportError, match="ltv"):
        compare_report([tmp_path / "a", tmp_path / "b"])
