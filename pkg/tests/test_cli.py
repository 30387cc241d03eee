import json
import os

import pydot
import pytest

from kanrec.cli import OPTIONS, build_parser, main
from kanrec.data import load_checkpoint
from kanrec.synthetic import clustered_interactions, cooccurrence_interactions, write_interactions

SMALL = ["--latent", "4", "--epochs", "3", "--batch-size", "32"]


@pytest.fixture
def data_file(tmp_path):
    return write_interactions(clustered_interactions(80, 40, per_user=10, seed=0), tmp_path / "toy.csv")


@pytest.fixture
def cooc(tmp_path_factory):
    d = tmp_path_factory.mktemp("cooc")
    path = write_interactions(cooccurrence_interactions(seed=0), d / "cooc.csv")
    out = d / "run"
    argv = ["train", "--data", str(path), "--out", str(out), "--latent", "4", "--epochs", "100"]
    argv += ["--patience", "0", "--lr", "1e-2", "--batch-size", "32"]
    assert main(argv) == 0
    return path, out / "model.ckpt"


@pytest.mark.parametrize("kind", ["kan", "mlp"])
def test_train_writes_artifacts(tmp_path, data_file, capsys, kind):
    out = tmp_path / "run"
    assert main(["train", "--data", str(data_file), "--out", str(out), "--kind", kind, *SMALL]) == 0
    assert {p.name for p in out.iterdir()} == {"model.ckpt", "eval.json", "history.csv", "split.json"}
    printed = capsys.readouterr().out
    assert "Recall" in printed and "users evaluated: 80" in printed
    doc = json.loads((out / "eval.json").read_text())
    assert set(doc["test"]["recall"]) == {"10", "20"}
    model, _ = load_checkpoint(out / "model.ckpt")
    assert model.kind == kind and doc["n_params"] == model.n_params
    assert len((out / "history.csv").read_text().splitlines()) == 4


def test_eval_reproduces_train_numbers(tmp_path, data_file):
    out = tmp_path / "run"
    main(["train", "--data", str(data_file), "--out", str(out), *SMALL])
    trained = json.loads((out / "eval.json").read_text())["test"]
    ev = tmp_path / "ev"
    assert main(["eval", "--data", str(data_file), "--checkpoint", str(out / "model.ckpt"), "--out", str(ev)]) == 0
    assert json.loads((ev / "eval.json").read_text())["test"] == trained


def test_missing_data_file(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "o")]) == 1
    assert "data: file not found" in capsys.readouterr().err


def test_bad_config_value(tmp_path, data_file, capsys):
    assert main(["train", "--data", str(data_file), "--out", str(tmp_path / "o"), "--kind", "rnn"]) == 1
    assert capsys.readouterr().err.startswith("config:")


def test_continual_single_block(tmp_path, data_file):
    out = tmp_path / "c"
    assert main(["continual", "--data", str(data_file), "--out", str(out), "--blocks", "1", *SMALL]) == 0
    doc = json.loads((out / "continual.json").read_text())
    assert len(doc["a"]) == 1 and len(doc["a"][0]) == 1
    assert doc["la"] == doc["ra"] == doc["a"][0][0]
    assert len(doc["block_sizes"]) == 2


def test_continual_blocks_shared_between_kinds(tmp_path, data_file):
    outs = []
    for kind in ("kan", "mlp"):
        out = tmp_path / kind
        argv = ["continual", "--data", str(data_file), "--out", str(out), "--kind", kind, "--blocks", "2"]
        assert main(argv + ["--latent", "4", "--epochs", "1", "--batch-size", "32"]) == 0
        outs.append((out / "blocks.json").read_bytes())
    assert outs[0] == outs[1]


def test_explain_recovers_cooccurring_item(tmp_path, cooc, capsys):
    path, ckpt = cooc
    for taus in (["--tau1", "0", "--tau2", "0"], []):
        out = tmp_path / ("zero" if taus else "default")
        argv = ["explain", "--data", str(path), "--checkpoint", str(ckpt), "--item", "item1", "--out", str(out)]
        assert main(argv + taus) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[1].split()[1] == "item0"
        assert all("item1 " not in line for line in lines[1:])
        (graph,) = pydot.graph_from_dot_file(str(out / "explain.dot"))
        assert graph.get_edges()


def test_explain_everything_pruned(tmp_path, cooc, capsys):
    path, ckpt = cooc
    argv = ["explain", "--data", str(path), "--checkpoint", str(ckpt), "--item", "item1", "--out", str(tmp_path)]
    assert main(argv + ["--tau2", "1e9"]) == 0
    assert "no surviving paths" in capsys.readouterr().out
    (graph,) = pydot.graph_from_dot_file(str(tmp_path / "explain.dot"))
    assert not graph.get_edges()


def test_explain_unknown_item_and_mlp(tmp_path, cooc, capsys, data_file):
    path, ckpt = cooc
    argv = ["explain", "--data", str(path), "--checkpoint", str(ckpt), "--item", "nope", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("explain:")
    mlp = tmp_path / "mlp"
    main(["train", "--data", str(data_file), "--out", str(mlp), "--kind", "mlp", *SMALL])
    capsys.readouterr()
    argv = ["explain", "--data", str(data_file), "--checkpoint", str(mlp / "model.ckpt"), "--item", "i0", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("checkpoint:")


@pytest.mark.parametrize("command", ["train", "eval", "continual", "explain", "trace"])
def test_help_lists_every_flag_with_default(command, capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([command, "--help"])
    text = " ".join(capsys.readouterr().out.split())
    for o in OPTIONS:
        if command in o.commands:
            assert o.flag in text
            assert f"{o.key}, default:" in text


def test_environment_and_config_file_precedence(tmp_path, data_file, monkeypatch):
    monkeypatch.setenv("KANREC_TRAIN_EPOCHS", "2")
    out = tmp_path / "env"
    main(["train", "--data", str(data_file), "--out", str(out), "--latent", "4", "--patience", "0"])
    assert len((out / "history.csv").read_text().splitlines()) == 3

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train.epochs": 5, "model.latent": 4, "train.patience": 0}))
    out = tmp_path / "file"
    # the environment beats the file, the flag beats both
    main(["train", "--config", str(cfg), "--data", str(data_file), "--out", str(out)])
    assert len((out / "history.csv").read_text().splitlines()) == 3
    out = tmp_path / "flag"
    main(["train", "--config", str(cfg), "--data", str(data_file), "--out", str(out), "--epochs", "1"])
    assert len((out / "history.csv").read_text().splitlines()) == 2


def test_unknown_config_key(tmp_path, data_file, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train.speed": 3}))
    assert main(["train", "--config", str(cfg), "--data", str(data_file), "--out", str(tmp_path / "o")]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_runs_are_reproducible(tmp_path, data_file):
    docs = []
    for name in ("a", "b"):
        out = tmp_path / name
        main(["train", "--data", str(data_file), "--out", str(out), "--seed", "3", *SMALL])
        docs.append((out / "eval.json").read_bytes())
        docs.append((out / "split.json").read_bytes())
    assert docs[0] == docs[2] and docs[1] == docs[3]


def test_trace_command(tmp_path, data_file):
    out = tmp_path / "t"
    assert main(["trace", "--data", str(data_file), "--out", str(out), "--every", "2", *SMALL]) == 0
    doc = json.loads((out / "trace.json").read_text())
    assert doc["snapshots"] == len(list((out / "traces").iterdir())) > 0


def test_nothing_written_outside_out_dir(tmp_path, data_file, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    before = set(os.listdir(tmp_path))
    main(["train", "--data", str(data_file), "--out", str(tmp_path / "o"), *SMALL])
    assert set(os.listdir(tmp_path)) == before | {"o"}
    assert not os.listdir(work)
