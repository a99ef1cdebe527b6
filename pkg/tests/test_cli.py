import csv
import json
import subprocess
import sys

import pytest

from keystep_graph.cli import build_parser, main
from keystep_graph.model import load_checkpoint

from helpers import make_manifest_doc, write_manifest_doc, write_take

SMALL_SYNTH = {
    "num_takes": 8,
    "segments_per_take": [3, 6],
    "num_classes": 4,
    "feature_dim_vision": 6,
    "feature_dim_text": 4,
    "frames_per_segment": [1, 2],
}
FAST = ["--epochs", "3", "--patience", "0", "--hidden-dim", "8"]


@pytest.fixture(scope="module")
def synth_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "synth.json"
    cfg.write_text(json.dumps(SMALL_SYNTH))
    assert main(["gen-synthetic", "--config", str(cfg), "--out", str(root / "data"), "--seed", "2"]) == 0
    return root / "data" / "manifest.json"


def test_top_level_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "keystep_graph.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("gen-synthetic", "build-graphs", "train", "evaluate", "ablate-context"):
        assert name in out.stdout


@pytest.mark.parametrize("command", ["gen-synthetic", "build-graphs", "train", "evaluate", "ablate-context"])
def test_every_flag_documented(command, capsys):
    with pytest.raises(SystemExit) as e:
        main([command, "--help"])
    assert e.value.code == 0
    text = capsys.readouterr().out
    sub = next(a for a in build_parser()._actions if a.dest == "command").choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
        if not action.required and action.default not in (None, False) and action.dest != "help":
            assert "default" in text


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["build-graphs", "--manifest", "x.json", "--bogus"])
    assert e.value.code == 2


def test_build_graphs_multiview_stats(tmp_path, capsys):
    take = write_take(tmp_path, "t0", [0, 1, 2], num_exo=2)
    path = write_manifest_doc(tmp_path, make_manifest_doc(tmp_path, [take]))
    dump = tmp_path / "graphs.jsonl"
    assert main(["build-graphs", "--manifest", str(path), "--variant", "multiview", "--dump", str(dump)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert (stats["nodes"], stats["Temporal"], stats["EgoExo"]) == (9, 2, 6)
    assert len(dump.read_text().splitlines()) == 1


def test_missing_manifest_is_data_error(tmp_path, capsys):
    assert main(["build-graphs", "--manifest", str(tmp_path / "nope.json")]) == 3
    err = capsys.readouterr().err.strip()
    assert err.startswith("error datamodel.MissingFile:") and "\n" not in err


def test_hetero_without_text_is_data_error(tmp_path, capsys):
    take = write_take(tmp_path, "t0", [0, 1])
    path = write_manifest_doc(tmp_path, make_manifest_doc(tmp_path, [take]))
    assert main(["build-graphs", "--manifest", str(path), "--variant", "hetero"]) == 3
    assert capsys.readouterr().err.startswith("error graph_builder.MissingTextFeatures:")


def test_too_few_takes_is_data_error(tmp_path, capsys):
    take = write_take(tmp_path, "t0", [0, 1])
    path = write_manifest_doc(tmp_path, make_manifest_doc(tmp_path, [take]))
    assert main(["train", "--manifest", str(path), "--out", str(tmp_path / "o"), *FAST]) == 3
    assert "TooFewTakes" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(synth_manifest, tmp_path, capsys):
    code = main(["train", "--manifest", str(synth_manifest), "--out", str(tmp_path / "o"), *FAST, "--lr", "1e300"])
    assert code == 4
    assert capsys.readouterr().err.startswith("error trainer.DivergedLoss:")


def test_bad_config_key_is_usage_error(synth_manifest, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hiden_dim": 3}))
    assert main(["train", "--manifest", str(synth_manifest), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2


def test_train_outputs_and_determinism(synth_manifest, tmp_path):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["train", "--manifest", str(synth_manifest), "--variant", "multiview", "--seed", "7", "--out", str(out), *FAST]) == 0
        outs.append(out)
    a, b = outs
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "predictions.csv").read_bytes() == (b / "predictions.csv").read_bytes()
    for i in range(5):
        for name in ("trace.csv", "model.glvp"):
            assert (a / f"fold_{i}" / name).read_bytes() == (b / f"fold_{i}" / name).read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["variant"] == "multiview" and len(report["folds"]) == 5
    rows = list(csv.reader((a / "predictions.csv").open()))
    assert rows[0] == ["take_id", "segment_index", "true_label", "pred_label", "confidence"]
    assert len(rows) - 1 == sum(f["n"] for f in report["folds"])


def test_config_file_and_flag_precedence(synth_manifest, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"hidden_dim": 5, "epochs": 2, "num_layers": 1}))
    out = tmp_path / "o"
    assert main(["train", "--manifest", str(synth_manifest), "--out", str(out), "--config", str(cfg), "--hidden-dim", "6", "--patience", "0"]) == 0
    _, mc = load_checkpoint(out / "fold_0" / "model.glvp")
    assert (mc.hidden_dim, mc.num_layers) == (6, 1)
    assert len((out / "fold_0" / "trace.csv").read_text().splitlines()) == 1 + 2


def test_evaluate_checkpoint(synth_manifest, tmp_path, capsys):
    train_out = tmp_path / "t"
    assert main(["train", "--manifest", str(synth_manifest), "--variant", "hetero", "--out", str(train_out), *FAST]) == 0
    capsys.readouterr()
    ev = tmp_path / "e"
    assert main(["evaluate", "--manifest", str(synth_manifest), "--checkpoint", str(train_out / "fold_0" / "model.glvp"), "--out", str(ev)]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert report["variant"] == "hetero" and report["folds"][0]["n"] == len(list((ev / "predictions.csv").open())) - 1
    assert "mean" in capsys.readouterr().out


def test_evaluate_rejects_corrupt_checkpoint(synth_manifest, tmp_path, capsys):
    bad = tmp_path / "bad.glvp"
    bad.write_bytes(b"nope")
    assert main(["evaluate", "--manifest", str(synth_manifest), "--checkpoint", str(bad), "--out", str(tmp_path / "e")]) == 3
    assert "CheckpointError" in capsys.readouterr().err


def test_ablate_context_layout(synth_manifest, tmp_path, capsys):
    out = tmp_path / "abl"
    assert main(["ablate-context", "--manifest", str(synth_manifest), "--out", str(out), *FAST]) == 0
    for mode in ("none", "short", "full"):
        assert json.loads((out / mode / "report.json").read_text())["context"] == mode
    comparison = json.loads((out / "comparison.json").read_text())
    assert [r["context"] for r in comparison["rows"]] == ["none", "short", "full"]
    table = (out / "comparison.txt").read_text().splitlines()
    assert table[0].split()[:2] == ["Context", "size"]
    assert [line.split()[0] for line in table[1:]] == ["no-context", "short", "full"]
    assert capsys.readouterr().out.splitlines() == table
