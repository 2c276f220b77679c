"""Evaluation of agent runs and the GRPO/SPO baseline-quality comparison."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import doc_env
from .advantage import GRPO, SPO, baseline_quality, embed_trajectories, grpo_advantage, spo_advantage
from .trainer import TrainConfig, TrainResult, make_embedder, train


@dataclass(frozen=True)
class EvalReport:
    """Aggregate scores. Subset metrics are ``None`` when the subset is empty.

    ``f1`` is accuracy restricted to answerable questions: with 0/1
    correctness per question there is nothing finer to average.
    """

    n: int
    acc: float
    f1: Optional[float]
    recall_mean: Optional[float]
    unanswerable_acc: Optional[float]
    pages_read_mean: float
    single_acc: Optional[float]
    multi_acc: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(xs) -> Optional[float]:
    xs = list(xs)
    return float(sum(xs) / len(xs)) if xs else None


def evaluate(runs, questions: Sequence[doc_env.Question]) -> EvalReport:
    """Score runs against their questions; ``runs[i]`` must answer ``questions[i]``."""
    runs = list(runs)
    questions = list(questions)
    if len(runs) != len(questions):
        raise ValueError(f"{len(runs)} runs for {len(questions)} questions")
    if not runs:
        raise ValueError("nothing to evaluate")
    for r, q in zip(runs, questions):
        if r.qid != q.qid:
            raise ValueError(f"run {r.qid} is aligned with question {q.qid}")
    corr = [doc_env.correctness(r.final_answer, q.gold_answer) for r, q in zip(runs, questions)]
    answerable = [i for i, q in enumerate(questions) if q.answerable]
    return EvalReport(
        n=len(runs),
        acc=float(np.mean(corr)),
        f1=_mean(corr[i] for i in answerable),
        recall_mean=_mean(doc_env.recall(runs[i].pages_read, questions[i].evidence_pages) for i in answerable),
        unanswerable_acc=_mean(c for c, q in zip(corr, questions) if not q.answerable),
        pages_read_mean=float(np.mean([len(set(r.pages_read)) for r in runs])),
        single_acc=_mean(c for c, q in zip(corr, questions) if q.answerable and q.hops == doc_env.SINGLE),
        multi_acc=_mean(c for c, q in zip(corr, questions) if q.answerable and q.hops == doc_env.MULTI),
    )


def write_eval(report: EvalReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    (out / "eval.json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in d.items():
            w.writerow([k, "" if v is None else repr(v)])
    return [out / "eval.json", out / "eval.csv"]


# ---------------------------------------------------------------------------
# Estimator comparison

STUDY_FIELDS = (
    "baseline_mse_grpo",
    "baseline_mse_spo",
    "advantage_variance_grpo",
    "advantage_variance_spo",
    "mean_reward",
)


@dataclass
class ComparisonStudy:
    """Per-update series for each training arm.

    Both baselines are measured on the groups each arm actually sampled,
    so ``series[arm]["baseline_mse_spo"][u]`` and ``..._grpo[u]`` are
    directly comparable.
    """

    series: dict = field(default_factory=dict)  # arm -> metric -> list
    results: dict = field(default_factory=dict)  # arm -> TrainResult

    def arms(self) -> list[str]:
        return list(self.series)

    def fraction_spo_better(self, arm: str) -> float:
        s = self.series[arm]
        return float(np.mean(np.array(s["baseline_mse_spo"]) < np.array(s["baseline_mse_grpo"])))

    def long_rows(self):
        for arm, s in self.series.items():
            n = len(s["mean_reward"])
            for u in range(n):
                for m in STUDY_FIELDS:
                    yield u, arm, m, s[m][u]

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for arm, s in self.series.items():
            p = out / f"study_{arm}.csv"
            with open(p, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("update_index",) + STUDY_FIELDS)
                for u in range(len(s["mean_reward"])):
                    w.writerow([u] + [repr(s[m][u]) for m in STUDY_FIELDS])
            paths.append(p)
        p = out / "study_long.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["update", "arm", "metric", "value"])
            for u, arm, m, v in self.long_rows():
                w.writerow([u, arm, m, repr(v)])
        paths.append(p)
        summary = {arm: {"spo_better_fraction": self.fraction_spo_better(arm)} for arm in self.series}
        p = out / "study_summary.json"
        p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(p)
        return paths


def oracle_values(env, group, params, cap: int, context_turn: int = 1) -> list[float]:
    """Exact expected reward of the context each trajectory reached.

    The context is the state after ``context_turn`` decisions (clipped to
    the trajectory length); the expectation is over the rest of the episode
    under ``params``.
    """
    out = []
    for t in group.trajectories:
        states = t.meta["states"]
        k = min(context_turn, len(states) - 1)
        out.append(env.expected_value(states[k], params, k, cap))
    return out


def compare_estimators(
    env, configs: Sequence[TrainConfig], embedder=None, context_turn: int = 1, jobs: int = 1
) -> ComparisonStudy:
    """Train one arm per config and record baseline quality at every update.

    Arms should differ only in ``estimator``; seeds and environment are
    shared so the comparison is paired. ``jobs > 1`` trains arms in threads;
    each arm is still deterministic.
    """
    if len({c.seed for c in configs}) > 1:
        raise ValueError("compare_estimators needs identical seeds across arms")

    def run_arm(cfg):
        emb = embedder or make_embedder(cfg.embedder, env)
        acfg = cfg.advantage_config()
        s = {m: [] for m in STUDY_FIELDS}

        def hook(u, groups, advs, params):
            mg, ms, vg, vs = [], [], [], []
            for g in groups:
                if g.trajectories[0].embedding is None:
                    g = type(g)(g.prompt_id, tuple(embed_trajectories(emb, g.trajectories, acfg.include_feedback)))
                embs = np.array([t.embedding for t in g.trajectories])
                vals = oracle_values(env, g, params, cfg.rollout_length, context_turn)
                bq = baseline_quality(g, vals, config=acfg, embeddings=embs)
                mg.append(bq.mse_grpo)
                ms.append(bq.mse_spo)
                vg.append(float(np.var(grpo_advantage(g, acfg).values)))
                vs.append(float(np.var(spo_advantage(g, config=acfg, embeddings=embs).values)))
            s["baseline_mse_grpo"].append(float(np.mean(mg)))
            s["baseline_mse_spo"].append(float(np.mean(ms)))
            s["advantage_variance_grpo"].append(float(np.mean(vg)))
            s["advantage_variance_spo"].append(float(np.mean(vs)))

        res: TrainResult = train(env, cfg, embedder=emb, on_batch=hook)
        s["mean_reward"] = [r.mean_reward for r in res.reports]
        return s, res

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(run_arm, configs))
    else:
        outs = [run_arm(c) for c in configs]
    study = ComparisonStudy()
    for cfg, (s, res) in zip(configs, outs):
        arm = cfg.estimator
        if arm in study.series:
            arm = f"{arm}{len(study.series)}"
        study.series[arm] = s
        study.results[arm] = res
    return study


def arm_configs(base: TrainConfig) -> list[TrainConfig]:
    return [replace(base, estimator=GRPO), replace(base, estimator=SPO)]
