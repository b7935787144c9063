import csv
import json
import random
import subprocess
import sys

import pytest

from hielo import synth
from hielo.cli import main
from hielo.corpus import LayeredInstance, group_by_mr, load_corpus
from hielo.metrics import EvalReport
from hielo.training import count_parameters, load_checkpoint

from conftest import BIBIMBAP_MR, BIBIMBAP_REF

TINY = ["--epochs", "2", "--embed-dim", "6", "--enc-hidden", "6", "--dec-hidden", "6",
        "--batch-size", "4", "--min-count", "1"]


def _csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mr", "ref"])
        w.writerows(rows)
    return path


def _kv(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rows = synth.toy_rows(n=12, seed=11)
    synth.write_rows(rows, d / "toy.csv", d / "toy.tags")
    assert main(["prepare", "--input", str(d / "toy.csv"), "--tags", str(d / "toy.tags"),
                 "--output", str(d / "toy.jsonl"), "--min-count", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(prepared):
    out = prepared / "tiny.ckpt"
    assert main(["train", "--data", str(prepared / "toy.jsonl"), "--variant", "hier",
                 "--out", str(out), "--seed", "3", *TINY]) == 0
    return out


def test_prepare_single_row(tmp_path, capsys):
    src = _csv(tmp_path / "a.csv", [[BIBIMBAP_MR, BIBIMBAP_REF]])
    assert main(["prepare", "--input", str(src), "--output", str(tmp_path / "a.jsonl")]) == 0
    out = _kv(capsys.readouterr().out)
    assert out["instances"] == "1"
    assert out["containment"].startswith("PASS")
    assert "lexicon=" in out["tag_sources"]
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 1


def test_prepare_empty_and_missing(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["prepare", "--input", str(empty), "--output", str(tmp_path / "e.jsonl")]) == 0
    assert _kv(capsys.readouterr().out)["instances"] == "0"
    assert main(["prepare", "--input", str(tmp_path / "nope.csv"),
                 "--output", str(tmp_path / "n.jsonl")]) != 0


def test_prepare_too_many_bad_rows(tmp_path, capsys):
    rows = [["name[A], food[Thai]", "A serves Thai food."]] * 10 + [["name[A", "x"]]
    src = _csv(tmp_path / "bad.csv", rows)
    assert main(["prepare", "--input", str(src), "--output", str(tmp_path / "bad.jsonl")]) != 0
    assert "skipped 1 of 11" in capsys.readouterr().err
    assert not (tmp_path / "bad.jsonl").exists()


def test_train_stats_and_determinism(prepared, trained, tmp_path, capsys, monkeypatch):
    again = tmp_path / "again.ckpt"
    monkeypatch.setenv("HIELO_SEED", "3")
    capsys.readouterr()
    assert main(["train", "--data", str(prepared / "toy.jsonl"), "--variant", "hier",
                 "--out", str(again), *TINY]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "epoch,active_layers,p_inner,p_inter,loss"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2"]
    assert again.read_bytes() == trained.read_bytes()
    assert load_checkpoint(again).config.seed == 3


def test_train_curriculum_off_keeps_layers_constant(prepared, tmp_path, capsys):
    assert main(["train", "--data", str(prepared / "toy.jsonl"), "--out", str(tmp_path / "c"),
                 "--curriculum", "off", *TINY]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert {r.split(",")[1] for r in rows} == {"1-4"}


def test_train_config_file_and_overrides(prepared, tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs = 1\nlr = 0.002\nmodel_variant = baseline\n")
    out = tmp_path / "b.ckpt"
    assert main(["train", "--data", str(prepared / "toy.jsonl"), "--config", str(cfg),
                 "--out", str(out), "--lr", "0.003", "--embed-dim", "6", "--enc-hidden", "6",
                 "--dec-hidden", "12", "--min-count", "1"]) == 0
    ck = load_checkpoint(out)
    assert (ck.config.model_variant, ck.config.lr, ck.config.epochs) == ("baseline", 0.003, 1)
    bad = tmp_path / "bad.cfg"
    bad.write_text("speed = 11\n")
    assert main(["train", "--data", str(prepared / "toy.jsonl"), "--config", str(bad),
                 "--out", str(tmp_path / "x")]) != 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exits_nonzero_without_output(prepared, tmp_path, capsys):
    out = tmp_path / "diverged.ckpt"
    code = main(["train", "--data", str(prepared / "toy.jsonl"), "--out", str(out),
                 "--lr", "1e300", *TINY])
    assert code != 0
    assert "non-finite" in capsys.readouterr().err
    assert not out.exists()


def test_generate_and_trace(prepared, trained, capsys):
    mr = json.loads((prepared / "toy.jsonl").read_text().splitlines()[0])
    raw = str(LayeredInstance.from_record(mr).mr)
    assert main(["generate", "--ckpt", str(trained), "--mr", raw, "--trace"]) == 0
    first = capsys.readouterr().out
    assert main(["generate", "--ckpt", str(trained), "--mr", raw, "--trace"]) == 0
    assert capsys.readouterr().out == first
    for i in range(1, 5):
        assert f"  L{i}: " in first
    assert "inter-layer input" in first
    assert main(["generate", "--ckpt", str(trained), "--data", str(prepared / "toy.jsonl"),
                 "--repeat-input", "off"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 12


def test_generate_unknown_slot_warns(trained, caplog):
    assert main(["generate", "--ckpt", str(trained), "--mr", "name[Zizzi], colour[red]"]) == 0
    assert "unknown MR slot 'colour'" in caplog.text


def test_generate_requires_one_source(trained):
    assert main(["generate", "--ckpt", str(trained)]) != 0


def _first_refs(path):
    return [g[0].reference for g in group_by_mr(load_corpus(path, "prepared-jsonl"))]


def test_evaluate_hypotheses(prepared, tmp_path, capsys):
    data = prepared / "toy.jsonl"
    hyp = tmp_path / "hyp.txt"
    hyp.write_text("".join(r + "\n" for r in _first_refs(data)))
    assert main(["evaluate", "--hyp", str(hyp), "--data", str(data)]) == 0
    rep = EvalReport.parse(capsys.readouterr().out)
    assert rep == {"bleu": 1.0, "rouge1": 1.0, "rouge2": 1.0, "rougeL": 1.0, "n_instances": 12}

    lines = data.read_text().splitlines()
    random.Random(5).shuffle(lines)
    shuffled = tmp_path / "shuffled.jsonl"
    shuffled.write_text("\n".join(lines) + "\n")
    hyp2 = tmp_path / "hyp2.txt"
    hyp2.write_text("".join(" ".join(r.split()[:-3]) + "\n" for r in _first_refs(shuffled)))
    hyp.write_text("".join(" ".join(r.split()[:-3]) + "\n" for r in _first_refs(data)))
    assert main(["evaluate", "--hyp", str(hyp), "--data", str(data)]) == 0
    a = capsys.readouterr().out
    assert main(["evaluate", "--hyp", str(hyp2), "--data", str(shuffled)]) == 0
    assert capsys.readouterr().out == a


def test_evaluate_misaligned(prepared, tmp_path, capsys):
    hyp = tmp_path / "short.txt"
    hyp.write_text("only one line\n")
    assert main(["evaluate", "--hyp", str(hyp), "--data", str(prepared / "toy.jsonl")]) != 0
    assert "1 hypotheses for 12" in capsys.readouterr().err


def test_evaluate_from_checkpoint(prepared, trained, capsys):
    assert main(["evaluate", "--ckpt", str(trained), "--data", str(prepared / "toy.jsonl")]) == 0
    rep = EvalReport.parse(capsys.readouterr().out)
    assert rep["n_instances"] == 12 and 0.0 <= rep["bleu"] <= 1.0


def test_inspect(trained, tmp_path, capsys):
    assert main(["inspect", "--ckpt", str(trained)]) == 0
    lines = capsys.readouterr().out.splitlines()
    sizes = [int(line.split()[-1]) for line in lines[1:-1]]
    total = int(lines[-1].split(" = ")[1])
    assert sum(sizes) == total == count_parameters(load_checkpoint(trained).model)
    for line in lines[1:-1]:
        rows, cols = map(int, line.split()[1].split("x"))
        assert rows * cols == int(line.split()[2])
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(trained.read_bytes()[:-8])
    assert main(["inspect", "--ckpt", str(broken)]) != 0
    assert main(["inspect", "--ckpt", str(tmp_path / "missing.ckpt")]) != 0


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "hielo", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "prepare" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "hielo", "inspect", "--ckpt",
                          str(tmp_path / "none")], capture_output=True, text=True)
    assert bad.returncode != 0 and "error" in bad.stderr
    none = subprocess.run([sys.executable, "-m", "hielo"], capture_output=True, text=True)
    assert none.returncode != 0
