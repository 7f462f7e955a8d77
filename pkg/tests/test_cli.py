"""End-to-end command-line flow on a tiny corpus."""

import json
import os

import pytest

from rapnet.cli import main
from rapnet.data import read_proposal_csv


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliflow")
    data = root / "data"
    assert main(["synth-data", "--out", str(data), "--videos", "10",
                 "--length", "32", "--channels", "8", "--difficulty", "0.1",
                 "--val-fraction", "0.4", "--seed", "3"]) == 0
    assert main(["cluster-anchors", "--annotations",
                 str(data / "annotations.json"), "--out",
                 str(root / "anchors.json"), "--depth", "3",
                 "--anchors-per-cell", "2", "--seed", "0"]) == 0
    assert main(["train", "--data", str(data), "--anchors",
                 str(root / "anchors.json"), "--out", str(root / "run"),
                 "--epochs", "2", "--warmup", "1", "--batch-size", "4",
                 "--length", "32", "--channels", "8", "--depth", "3",
                 "--seed", "0", "--quiet"]) == 0
    return root


def test_synth_data_outputs(workspace):
    data = workspace / "data"
    ann = json.loads((data / "annotations.json").read_text())
    assert len(ann["videos"]) == 10
    assert sum(1 for v in ann["videos"] if v["split"] == "val") == 4
    feats = os.listdir(data / "features")
    assert len(feats) == 10 and all(f.endswith(".rapf") for f in feats)


def test_cluster_anchors_output(workspace):
    obj = json.loads((workspace / "anchors.json").read_text())
    assert obj["N"] == 3 and obj["M"] == 2
    flat = [w for row in obj["widths"] for w in row]
    assert flat == sorted(flat)
    assert all(0 < w <= 1 for w in flat)


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "checkpoint.rapw").exists()
    cfg = json.loads((run / "config.json").read_text())
    assert set(cfg) == {"T", "C", "N", "M", "r", "raw_affinity", "use_ram"}
    assert cfg["T"] == 32 and cfg["N"] == 3
    log = (run / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("step,")
    assert len(log) > 1


def propose(workspace, out_name, *flags):
    args = ["propose", "--data", str(workspace / "data"),
            "--checkpoint", str(workspace / "run" / "checkpoint.rapw"),
            "--config", str(workspace / "run" / "config.json"),
            "--anchors", str(workspace / "anchors.json"),
            "--split", "val", "--out", str(workspace / out_name),
            "--seed", "0", *flags]
    assert main(args) == 0
    return read_proposal_csv(workspace / out_name)


def test_propose_flag_combinations_differ(workspace):
    plain = propose(workspace, "plain.csv", "--no-adjust", "--no-rank")
    adjusted = propose(workspace, "adj.csv", "--no-rank")
    ranked = propose(workspace, "rank.csv")
    texts = [(workspace / n).read_text() for n in
             ("plain.csv", "adj.csv", "rank.csv")]
    assert len({t for t in texts}) == 3  # three distinct pipelines
    for props in (plain, adjusted, ranked):
        assert len(props) == 4  # val videos only
        for rows in props.values():
            assert len(rows) <= 100
            assert all(0.0 <= s < e <= 1.0 for s, e, _ in rows)
            scores = [sc for _, _, sc in rows]
            assert scores == sorted(scores, reverse=True)


def test_eval_subcommand(workspace):
    propose(workspace, "foreval.csv", "--no-rank")
    out = workspace / "curve.json"
    table = workspace / "table.txt"
    assert main(["eval", "--proposals", str(workspace / "foreval.csv"),
                 "--annotations", str(workspace / "data" / "annotations.json"),
                 "--split", "val", "--out", str(out),
                 "--table", str(table)]) == 0
    curve = json.loads(out.read_text())
    assert set(curve) == {"auc", "ar", "recall"}
    assert 0.0 <= curve["auc"] <= 100.0
    assert len(curve["ar"]) == 100
    assert len(curve["recall"]) == 10  # anet grid
    text = table.read_text()
    assert "AUC" in text and "AR@100" in text


def test_eval_strict_tiou_flag(workspace):
    out = workspace / "curve90.json"
    assert main(["eval", "--proposals", str(workspace / "foreval.csv"),
                 "--annotations", str(workspace / "data" / "annotations.json"),
                 "--split", "val", "--tiou-max", "0.90",
                 "--out", str(out)]) == 0
    curve = json.loads(out.read_text())
    assert len(curve["recall"]) == 9
    assert "0.95" not in curve["recall"]


def test_no_ram_flag_drops_relation_parameters(workspace, tmp_path):
    from rapnet.checkpoint import load_checkpoint
    out = tmp_path / "noram"
    assert main(["train", "--data", str(workspace / "data"), "--anchors",
                 str(workspace / "anchors.json"), "--out", str(out),
                 "--epochs", "1", "--warmup", "0", "--batch-size", "4",
                 "--length", "32", "--channels", "8", "--depth", "3",
                 "--no-ram", "--raw-affinity", "--quiet"]) == 0
    names = load_checkpoint(out / "checkpoint.rapw")
    assert not any(".ram." in n for n in names)
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["use_ram"] is False
    assert cfg["raw_affinity"] is True
