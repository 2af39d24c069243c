import io
import json
import sys

import numpy as np
import pytest

from nlseg.checkpoint import save_checkpoint
from nlseg.cli import COMMANDS, main
from nlseg.corpus import PunctuationInventory
from nlseg.encoder import EncoderConfig, EncoderModel
from nlseg.evaluation import EvalDocument, naive_segment, write_eval_file
from nlseg.metrics import BoundarySet, boundary_f1
from nlseg.synthetic import SyntheticLanguage


@pytest.fixture
def run(monkeypatch, capsys, tmp_path):
    def _run(*argv, stdin=""):
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
        code = main([*map(str, argv), "--run-dir", str(tmp_path / "runs")])
        out = capsys.readouterr()
        return code, out.out, out.err
    return _run


@pytest.fixture
def corpus(tmp_path):
    lang = SyntheticLanguage(seed=0)
    rng = np.random.default_rng(0)
    (tmp_path / "xx.txt").write_text("\n".join(lang.paragraphs(40, rng)) + "\n", encoding="utf-8")
    (tmp_path / "manifest.json").write_text(json.dumps({"languages": [{"lang_id": "xx", "path": "xx.txt"}]}))
    docs = [EvalDocument(lang.sentences(5, rng), "xx") for _ in range(5)]
    write_eval_file(docs, tmp_path / "gold.txt")
    return tmp_path


@pytest.fixture
def ckpt(tmp_path):
    cfg = EncoderConfig(num_layers=1, hidden_dim=8, num_heads=2, max_len=32, embed_buckets=97)
    m = EncoderModel(cfg, PunctuationInventory(".,"), seed=0)
    save_checkpoint(m, tmp_path / "m.ckpt")
    return tmp_path / "m.ckpt"


@pytest.mark.parametrize("cmd", sorted(COMMANDS))
def test_help_exits_zero(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_usage_errors_exit_one(run):
    assert run("bogus")[0] == 1
    assert run("corrupt")[0] == 1  # --seed is required
    assert run("fewshot", "--model", "x", "--train-file", "a", "--test-file", "b")[0] == 1


def test_bad_data_exits_two(run, tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert run("inventory", "--manifest", tmp_path / "bad.json")[0] == 2
    assert run("evaluate", "--gold", tmp_path / "missing.txt", "--baseline", "none")[0] == 2
    (tmp_path / "empty.ckpt").write_bytes(b"")
    assert run("segment", "--model", tmp_path / "empty.ckpt", stdin="Hi. Ok.")[0] == 2


def test_segment_empty_stdin(run, ckpt):
    code, out, _ = run("segment", "--model", ckpt, stdin="")
    assert code == 0 and out == ""


def test_segment_json_offsets(run, ckpt):
    text = "ab cd. ef gh.\nij kl."
    code, out, _ = run("segment", "--model", ckpt, "--json", stdin=text)
    assert code == 0
    for line in out.splitlines():
        rec = json.loads(line)
        assert text[rec["start"]:rec["end"]] == rec["text"]


def test_adapt_needs_seed_with_n(run, ckpt, corpus):
    code, _, err = run("adapt", "--model", ckpt, "--train-file", corpus / "gold.txt", "--out",
                       corpus / "a.json", "--n", "5")
    assert code == 1 and "--seed" in err


def test_evaluate_naive_matches_oracle(run, tmp_path):
    lang = SyntheticLanguage(seed=3)
    sents = lang.sentences(25, np.random.default_rng(0))
    write_eval_file([EvalDocument(sents, "xx")], tmp_path / "toy.txt")
    code, out, _ = run("evaluate", "--gold", tmp_path / "toy.txt", "--baseline", "naive", "--format", "csv")
    assert code == 0
    text = " ".join(sents)
    gold, pos = [], 0
    for s in sents[:-1]:
        pos += len(s)
        gold.append(pos - 1)
        pos += 1
    want = boundary_f1(naive_segment(text, 10), BoundarySet(gold, len(text)))
    row = out.splitlines()[1].split(",")
    assert row[0] == "naive"
    assert [int(x) for x in row[4:]] == [want.tp, want.fp, want.fn]


def test_train_tiny_and_manifest(run, corpus):
    out = corpus / "model"
    code, _, _ = run("train", "--manifest", corpus / "manifest.json", "--out", out, "--steps", 3, "--seed", 0,
                     "--layers", 1, "--hidden", 8, "--heads", 2, "--window", 32, "--batch-size", 2,
                     "--embed-buckets", 97)
    assert code == 0
    assert {"model.ckpt", "loss_trace.csv", "inventory.json", "run_manifest.json"} <= {p.name for p in out.iterdir()}
    runs = list((corpus / "runs").glob("train-*.json"))
    assert len(runs) == 1
    rec = json.loads(runs[0].read_text())
    assert rec["seed"] == 0 and rec["subcommand"] == "train" and rec["input_hashes"]
    code, outp, _ = run("tune-threshold", "--model", out, "--gold", corpus / "gold.txt")
    assert code == 0 and float(outp) > 0


def test_corrupt_emits_jsonl(run):
    code, out, _ = run("corrupt", "--seed", 1, "--window", 16, stdin="Hello, world. Bye.\nNext one.")
    assert code == 0
    recs = [json.loads(line) for line in out.splitlines()]
    assert recs and all(len(r["x"]) == len(r["y"]) == len(r["z"]) for r in recs)


def test_no_run_manifest(run, corpus):
    code, _, _ = run("evaluate", "--gold", corpus / "gold.txt", "--baseline", "rule", "--no-run-manifest")
    assert code == 0 and not (corpus / "runs").exists()
