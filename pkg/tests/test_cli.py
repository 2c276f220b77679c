import json

import pytest

from spoagent import __version__
from spoagent.cli import main


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and __version__ in capsys.readouterr().out


def test_gen_corpus_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["gen-corpus", "--seed", "3", "--questions", "12", "--out", str(a)]) == 0
    assert main(["gen-corpus", "--seed", "3", "--questions", "12", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "12/12" in capsys.readouterr().out


def test_gen_corpus_infeasible(tmp_path):
    assert main(["gen-corpus", "--docs", "1", "--pages", "1", "--multi-hop", "1.0", "--out", str(tmp_path / "c")]) == 2
    assert not (tmp_path / "c").exists()


def test_eval_oracle(tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--seed", "2", "--out", str(out), "--jobs", "2"]) == 0
    rep = json.loads((out / "eval.json").read_text())
    assert rep["acc"] == 1.0 and rep["recall_mean"] == 1.0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "eval" and man["corpus_hash"]
    assert len((out / "runs.jsonl").read_text().splitlines()) == rep["n"]


def test_eval_bad_backend(tmp_path):
    assert main(["eval", "--backend", "scripted:/no/such/file.json", "--out", str(tmp_path)]) == 2


def test_train_twice_identical(tmp_path):
    args = ["train", "--updates", "8", "--seed", "4", "--log-every", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/reports.csv").read_bytes() == (tmp_path / "b/reports.csv").read_bytes()
    assert (tmp_path / "a/checkpoint.final").read_bytes() == (tmp_path / "b/checkpoint.final").read_bytes()
    lines = (tmp_path / "a/trajectories.jsonl").read_text().splitlines()
    logged = {json.loads(l)["id"].split("/")[0] for l in lines}
    assert logged == {"u0", "u3", "u6", "u7"}


def test_train_rejects_bad_args(tmp_path):
    assert main(["train", "--log-every", "0", "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) != 0


def test_compare_two_cluster(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", "two_cluster", "--updates", "30", "--jobs", "2", "--out", str(out)]) == 0
    summary = json.loads((out / "study_summary.json").read_text())
    assert set(summary) == {"grpo", "spo"}
    assert "spo arm" in capsys.readouterr().out


def test_simulate(capsys):
    assert main(["simulate", "--seed", "1"]) == 0
    text = capsys.readouterr().out
    assert "## reward: 2.000" in text
    assert main(["simulate", "--qid", "nope"]) == 2
