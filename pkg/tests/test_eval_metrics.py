import csv
import json

import numpy as np
import pytest

from spoagent import doc_env, envs, trainer
from spoagent.advantage import ConstantEmbedder
from spoagent.agent.backends import OracleBackend
from spoagent.agent.runtime import AgentRun, run_agents
from spoagent.eval_metrics import arm_configs, compare_estimators, evaluate, write_eval


def fake_runs(questions, answers, pages=None):
    pages = pages or [tuple(q.evidence_pages) for q in questions]
    return [AgentRun(q.qid, "", final_answer=a, pages_read=p) for q, a, p in zip(questions, answers, pages)]


def test_all_correct(corpus):
    qs = corpus.questions
    golds = [q.gold_answer if q.answerable else doc_env.CANNOT_ANSWER for q in qs]
    rep = evaluate(fake_runs(qs, golds), qs)
    assert rep.acc == rep.f1 == rep.recall_mean == rep.unanswerable_acc == 1.0
    assert rep.pages_read_mean == pytest.approx(np.mean([len(q.evidence_pages) for q in qs]))


def test_six_of_ten(corpus):
    qs = [q for q in corpus.questions if q.answerable][:10]
    answers = [q.gold_answer if i < 6 else "wrong" for i, q in enumerate(qs)]
    rep = evaluate(fake_runs(qs, answers), qs)
    assert rep.acc == pytest.approx(0.6)
    assert rep.unanswerable_acc is None


def test_alignment_checked(corpus):
    qs = corpus.questions[:3]
    runs = fake_runs(qs, ["a"] * 3)
    with pytest.raises(ValueError):
        evaluate(runs[::-1], qs)
    with pytest.raises(ValueError):
        evaluate(runs[:2], qs)


def test_oracle_agent_scores_perfectly(corpus):
    env = doc_env.DocEnvironment(corpus)
    runs = run_agents(env, corpus.questions, OracleBackend(), jobs=3)
    rep = evaluate(runs, corpus.questions)
    assert rep.acc == 1.0 and rep.recall_mean == 1.0
    assert rep.single_acc == rep.multi_acc == 1.0


def test_write_eval(tmp_path, corpus):
    qs = corpus.questions[:4]
    paths = write_eval(evaluate(fake_runs(qs, ["x"] * 4), qs), tmp_path)
    data = json.loads(paths[0].read_text())
    assert set(data) >= {"acc", "f1", "recall_mean", "unanswerable_acc", "pages_read_mean", "single_acc", "multi_acc"}


def test_constant_embedder_arms_coincide():
    cfg = trainer.TrainConfig(max_updates=20, seed=1)
    st = compare_estimators(envs.TwoClusterEnv(), arm_configs(cfg), embedder=ConstantEmbedder())
    assert st.series["grpo"]["mean_reward"] == st.series["spo"]["mean_reward"]
    np.testing.assert_allclose(st.series["grpo"]["baseline_mse_spo"], st.series["grpo"]["baseline_mse_grpo"])


def test_two_cluster_study(tmp_path):
    cfg = trainer.TrainConfig(max_updates=40, seed=0, embedder="env")
    st = compare_estimators(envs.TwoClusterEnv(), arm_configs(cfg), jobs=2)
    for arm in ("grpo", "spo"):
        assert len(st.series[arm]["baseline_mse_spo"]) == 40
        assert st.fraction_spo_better(arm) >= 0.95
    paths = st.write(tmp_path)
    with open(tmp_path / "study_long.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["update", "arm", "metric", "value"]
    assert len(rows) == 1 + 2 * 40 * 5
    assert any(p.name == "study_summary.json" for p in paths)


def test_zero_variance_rewards_equal_mse():
    env = envs.TwoClusterEnv(base=(0.5, 0.5), spread=0.0)
    st = compare_estimators(env, arm_configs(trainer.TrainConfig(max_updates=5, embedder="env")))
    s = st.series["spo"]
    np.testing.assert_allclose(s["baseline_mse_spo"], s["baseline_mse_grpo"], atol=1e-15)


def test_seed_mismatch_rejected():
    a = trainer.TrainConfig(seed=0)
    with pytest.raises(ValueError, match="seeds"):
        compare_estimators(envs.TwoClusterEnv(), [a, a.replace(seed=1)])
