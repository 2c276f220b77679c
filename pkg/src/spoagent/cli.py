"""``spoagent`` command line: gen-corpus, train, compare, eval, simulate."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, doc_env, envs, trainer
from .policy import PolicyParams
from .agent.backends import OracleBackend, PolicyBackend, SimulatedAnswerBackend, backend_from_spec, remote_reader
from .agent.runtime import DEFAULT_MAX_TURNS, load_prompt, run_agent, run_agents, score_run, to_trajectory
from .eval_metrics import arm_configs, compare_estimators, evaluate, write_eval
from .trajectory import write_jsonl

log = logging.getLogger("spoagent")


class CliError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, command: str, config: dict, seed, corpus_hash, started: str, artifacts) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "corpus_hash": corpus_hash,
        "seed": seed,
        "started": started,
        "finished": _now(),
        "artifacts": sorted(str(Path(a).relative_to(out)) for a in artifacts),
    }
    p = out / "manifest.json"
    p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p


def _load_corpus(path) -> doc_env.DocumentCorpus:
    p = Path(path)
    if not p.exists():
        raise CliError(f"corpus file not found: {p}")
    return doc_env.DocumentCorpus.load(p)


def _build_env(section: dict, corpus_path: Optional[str], config: trainer.TrainConfig):
    section = dict(section)
    kind = section.pop("kind", "seeker")
    if kind == "two_cluster":
        return envs.TwoClusterEnv(**section), None
    if kind != "seeker":
        raise CliError(f"unknown env kind {kind!r}")
    path = corpus_path or section.pop("corpus", None)
    seed = section.pop("corpus_seed", 0)
    corpus = _load_corpus(path) if path else doc_env.generate_corpus(seed)
    return envs.SeekerEnv(corpus, top_k=config.top_k, **section), corpus


def _train_config(args) -> tuple[trainer.TrainConfig, dict]:
    try:
        return trainer.load_config(
            args.config,
            args.preset,
            estimator=args.estimator,
            seed=args.seed,
            max_updates=args.updates,
            learning_rate=args.lr,
        )
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"config error: {exc}") from exc


def _write_reports(path: Path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trainer.UpdateReport.FIELDS)
        for r in reports:
            w.writerow([repr(v) for v in r.row()])


# ---------------------------------------------------------------------------
# commands


def cmd_gen_corpus(args) -> int:
    spec = doc_env.CorpusSpec(
        n_docs=args.docs,
        pages_per_doc=args.pages,
        n_questions=args.questions,
        multi_hop_fraction=args.multi_hop,
        unanswerable_fraction=args.unanswerable,
    )
    try:
        corpus = doc_env.generate_corpus(args.seed, spec)
    except doc_env.CorpusSpecError as exc:
        raise CliError(f"infeasible corpus spec: {exc}") from exc
    sweep = doc_env.oracle_sweep(corpus)
    print(sweep.summary())
    if not sweep.ok:
        raise CliError("oracle sweep failed; corpus not written")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    corpus.save(out)
    print(f"wrote {out} ({corpus.content_hash()[:12]})")
    return 0


def cmd_train(args) -> int:
    started = _now()
    if args.log_every < 1:
        raise CliError("--log-every must be >= 1")
    config, env_section = _train_config(args)
    env, corpus = _build_env(env_section, args.corpus, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        res = trainer.train(env, config, keep_groups=True)
    except trainer.TrainingError as exc:
        _write_reports(out / "reports.csv", exc.reports)
        raise CliError(str(exc)) from exc
    arts = [out / "reports.csv", out / "checkpoint.final", out / "trajectories.jsonl"]
    _write_reports(arts[0], res.reports)
    res.params.save(arts[1])
    n = len(res.groups)
    logged = [res.groups[u] for u in range(n) if u % args.log_every == 0 or u == n - 1]
    write_jsonl([g for batch in logged for g in batch], arts[2])
    _write_manifest(
        out,
        "train",
        {"train": config.to_dict(), "env": env_section},
        config.seed,
        corpus.content_hash() if corpus else None,
        started,
        arts,
    )
    first, last = trainer.quartile_means(res.reports)
    print(
        f"{config.estimator}: {len(res.reports)} updates in {time.perf_counter() - t0:.1f}s; "
        f"mean reward first quartile {first:.3f}, last quartile {last:.3f}"
    )
    return 0


def cmd_compare(args) -> int:
    started = _now()
    config, env_section = _train_config(args)
    env, corpus = _build_env(env_section, args.corpus, config)
    out = Path(args.out)
    try:
        study = compare_estimators(env, arm_configs(config), jobs=args.jobs)
    except trainer.TrainingError as exc:
        raise CliError(str(exc)) from exc
    arts = study.write(out)
    _write_manifest(
        out,
        "compare",
        {"train": config.to_dict(), "env": env_section},
        config.seed,
        corpus.content_hash() if corpus else None,
        started,
        arts,
    )
    for arm in study.arms():
        print(f"{arm} arm: baseline_mse_spo < baseline_mse_grpo on {study.fraction_spo_better(arm):.1%} of updates")
    return 0


def _agent_backends(spec: str, args, corpus):
    """(planner, seeker, answerer, reader) for a backend spec."""
    if spec.startswith("policy:"):
        params = PolicyParams.load(spec.split(":", 1)[1])
        env = envs.SeekerEnv(corpus)
        oracle = OracleBackend()
        return oracle, PolicyBackend(params, env, args.max_turns), SimulatedAnswerBackend(), None
    try:
        backend = backend_from_spec(spec, max_concurrency=args.jobs) if spec.startswith("remote") else backend_from_spec(spec)
    except (OSError, ValueError) as exc:
        raise CliError(f"backend error: {exc}") from exc
    reader = remote_reader(backend, load_prompt("reader")) if backend.kind == "remote" else None
    return backend, backend, backend, reader


def cmd_eval(args) -> int:
    started = _now()
    if args.corpus:
        corpus = _load_corpus(args.corpus)
    else:
        corpus = doc_env.generate_corpus(args.seed)
    planner, seeker, answerer, reader = _agent_backends(args.backend, args, corpus)
    env = doc_env.DocEnvironment(corpus, top_k=args.top_k, reader=reader)
    runs = run_agents(env, corpus.questions, planner, seeker, answerer, args.max_turns, jobs=args.jobs)
    report = evaluate(runs, corpus.questions)
    out = Path(args.out)
    arts = write_eval(report, out)
    trajs = [to_trajectory(r, score_run(env, r), args.max_turns) for r in runs]
    write_jsonl(trajs, out / "trajectories.jsonl")
    runs_path = out / "runs.jsonl"
    runs_path.write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in runs), encoding="utf-8")
    arts += [out / "trajectories.jsonl", runs_path]
    cfg = {"backend": args.backend, "max_turns": args.max_turns, "top_k": args.top_k, "corpus": args.corpus}
    _write_manifest(out, "eval", cfg, args.seed, corpus.content_hash(), started, arts)
    for k, v in report.to_dict().items():
        print(f"{k:18s} {'n/a' if v is None else round(v, 4)}")
    return 0


def cmd_simulate(args) -> int:
    corpus = _load_corpus(args.corpus) if args.corpus else doc_env.generate_corpus(args.seed)
    try:
        question = corpus.question(args.qid) if args.qid else corpus.questions[0]
    except KeyError as exc:
        raise CliError(f"unknown question id {args.qid!r}") from exc
    planner, seeker, answerer, reader = _agent_backends(args.backend, args, corpus)
    env = doc_env.DocEnvironment(corpus, top_k=args.top_k, reader=reader)
    run = run_agent(env, question, planner, seeker, answerer, args.max_turns)
    print(run.render())
    print(f"## reward: {score_run(env, run):.3f} (gold: {question.gold_answer})")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p) -> None:
    p.add_argument("--config", help="YAML run config")
    p.add_argument("--preset", choices=sorted(trainer.PRESETS), help="hyperparameter bundle applied before the config")
    p.add_argument("--estimator", choices=("grpo", "spo"))
    p.add_argument("--seed", type=int)
    p.add_argument("--updates", type=int, help="override max_updates")
    p.add_argument("--lr", type=float, help="override learning_rate")
    p.add_argument("--corpus", help="corpus JSONL (default: generated from env.corpus_seed)")
    p.add_argument("--jobs", type=int, default=1, help="parallel arms for compare; rollouts inside an arm stay sequential")


def _add_agent_flags(p) -> None:
    p.add_argument("--corpus", help="corpus JSONL (default: generate one from --seed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--backend",
        default="scripted:oracle",
        help="scripted:oracle, scripted:<file.json>, remote:<url> or policy:<checkpoint>",
    )
    p.add_argument("--max-turns", type=int, default=DEFAULT_MAX_TURNS)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spoagent", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus and check it with the oracle sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--docs", type=int, default=5)
    p.add_argument("--pages", type=int, default=20)
    p.add_argument("--questions", type=int, default=40)
    p.add_argument("--multi-hop", type=float, default=0.5)
    p.add_argument("--unanswerable", type=float, default=0.1)
    p.add_argument("--out", default="corpus.jsonl")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train the seeker policy")
    _add_train_flags(p)
    p.add_argument("--out", default="runs/train")
    p.add_argument("--log-every", type=int, default=50, help="write rollouts of every N-th update (and the last)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="train GRPO and SPO arms and record baseline quality")
    _add_train_flags(p)
    p.add_argument("--out", default="runs/compare")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="run the agent on every question and score it")
    _add_agent_flags(p)
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="print one agent transcript")
    _add_agent_flags(p)
    p.add_argument("--qid")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any failure must give a nonzero exit
        log.debug("unhandled", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
