import json

import pytest

from naturalist.cli import main
from naturalist.sampler import ImagePair, write_pairs

SMALL_NET = ["--hidden", "16", "--heads", "2", "--comparative-layers", "1", "--decoder-layers", "1",
             "--batch-size", "8"]


def run(capsys, *argv):
    try:
        rc = main([str(a) for a in argv])
    except SystemExit as exc:  # argparse-level validation
        rc = exc.code
    out = capsys.readouterr()
    return rc, out.out, out.err


@pytest.mark.parametrize("p, strategy, expected", [("0.6667", "paired", "2.25"), ("2/3", "paired", "2.25"),
                                                   ("2/3", "pivot_branch", "1.5"), ("1", "paired", "1")])
def test_cost_model(capsys, p, strategy, expected):
    rc, out, _ = run(capsys, "cost-model", "--p", p, "--strategy", strategy)
    assert rc == 0 and out.strip() == expected


def test_cost_model_rejects_bad_probability(capsys):
    rc, _, err = run(capsys, "cost-model", "--p", "0", "--strategy", "paired")
    assert rc == 2 and err


def test_split_ten_classes(tmp_path, capsys):
    pairs = [ImagePair(f"p{c}_{j}", f"c{c}a{j}", f"c{c}b{j}", "taxonomic", 1, f"class{c}")
             for c in range(10) for j in range(3)]
    write_pairs(tmp_path / "pairs.jsonl", pairs)
    rc, out, _ = run(capsys, "split", "--pairs", tmp_path / "pairs.jsonl", "--train", "0.8", "--dev", "0.1",
                     "--out-dir", tmp_path / "split")
    assert rc == 0
    assert "train: 8 classes" in out and "dev: 1 classes" in out and "test: 1 classes" in out
    assert (tmp_path / "split" / "config.json").exists()
    counts = {n: len((tmp_path / "split" / f"{n}.jsonl").read_text().splitlines()) for n in ("train", "dev", "test")}
    assert counts == {"train": 24, "dev": 3, "test": 3}


def test_missing_file_and_bad_config(tmp_path, capsys):
    rc, _, err = run(capsys, "gate", "--pairs", tmp_path / "nope.jsonl", "--ratings", tmp_path / "nope",
                     "--out", tmp_path / "o.jsonl")
    assert rc == 2 and "nope" in err
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_flag": 1}))
    rc, _, err = run(capsys, "cost-model", "--config", cfg, "--p", "0.5")
    assert rc == 2 and "not_a_flag" in err


def test_config_file_supplies_defaults(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"strategy": "paired"}))
    rc, out, _ = run(capsys, "cost-model", "--config", cfg, "--p", "2/3")
    assert rc == 0 and out.strip() == "2.25"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    syn = root / "syn"
    assert main(["synth", "--out", str(syn), "--seed", "3"]) == 0
    assert main(["train", "--records", str(syn / "corpus.jsonl"), "--grids", str(syn / "grids.jsonl"),
                 "--steps", "30", "--targets", "first", "--out", str(root / "ck"), *SMALL_NET]) == 0
    assert main(["generate", "--checkpoint", str(root / "ck"), "--pairs", str(syn / "corpus.jsonl"),
                 "--grids", str(syn / "grids.jsonl"), "--mode", "greedy", "--out", str(root / "pred.jsonl")]) == 0
    assert main(["evaluate", "--references", f"train={syn / 'corpus.jsonl'}",
                 "--predictions", f"model={root / 'pred.jsonl'}", "--train", str(syn / "corpus.jsonl"),
                 "--grids", str(syn / "grids.jsonl"), "--human-runs", "5", "--out", str(root / "report.json")]) == 0
    return root


def test_pipeline_outputs(pipeline):
    syn = pipeline / "syn"
    for name in ("taxonomy.jsonl", "images.jsonl", "embeddings.jsonl", "ratings.jsonl", "grids.jsonl",
                 "corpus.jsonl", "config.json"):
        assert (syn / name).exists(), name
    assert len((syn / "corpus.jsonl").read_text().splitlines()) == 64
    assert {"manifest.json", "params.bin", "optimizer.bin", "config.json"} <= {p.name for p in (pipeline / "ck").iterdir()}
    preds = [json.loads(l) for l in (pipeline / "pred.jsonl").read_text().splitlines()]
    assert len(preds) == 64 and all({"pair_id", "text"} <= set(p) for p in preds)


def test_pipeline_report_shape(pipeline):
    report = json.loads((pipeline / "report.json").read_text())
    assert report["columns"] == ["BLEU-4", "ROUGE-L", "CIDEr-D"]
    assert set(report["rows"]) == {"model", "most_frequent", "text_only", "nearest_neighbor", "human"}
    for system, row in report["rows"].items():
        cells = row["train"]
        assert list(cells) == ["BLEU-4", "ROUGE-L", "CIDEr-D"]
        if system != "human":
            assert 0 <= cells["BLEU-4"] <= 1 and 0 <= cells["ROUGE-L"] <= 1 and 0 <= cells["CIDEr-D"] <= 10
    # the nearest neighbour of a training pair is itself
    assert report["rows"]["nearest_neighbor"]["train"]["BLEU-4"] > 0.5
    assert (pipeline / "report.json.config.json").exists()


def test_sample_gate_annotate_judge(pipeline, tmp_path, capsys):
    syn = pipeline / "syn"
    rc, out, _ = run(capsys, "sample", "--taxonomy", syn / "taxonomy.jsonl", "--embeddings", syn / "embeddings.jsonl",
                     "--ratings", syn / "ratings.jsonl", "--pivots", "6", "--out", tmp_path / "pairs.jsonl")
    assert rc == 0 and "pairs from 6 pivots" in out
    rc, out, _ = run(capsys, "gate", "--pairs", tmp_path / "pairs.jsonl", "--ratings", syn / "ratings.jsonl",
                     "--out", tmp_path / "kept.jsonl")
    assert rc == 0 and "retention" in out
    rc, _, _ = run(capsys, "annotate", "--pairs", tmp_path / "kept.jsonl", "--images", syn / "images.jsonl",
                   "--out", tmp_path / "records.jsonl")
    assert rc == 0
    # score the canonical references themselves: a faithful describer never scores below zero
    with (tmp_path / "refs.jsonl").open("w") as fh:
        for line in (tmp_path / "records.jsonl").read_text().splitlines():
            rec = json.loads(line)
            fh.write(json.dumps({"pair_id": rec["pair_id"], "text": rec["paragraphs"][0]["text"]}) + "\n")
    rc, out, _ = run(capsys, "judge-score", "--predictions", tmp_path / "refs.jsonl", "--pairs",
                     tmp_path / "kept.jsonl", "--images", syn / "images.jsonl")
    assert rc == 0
    row = json.loads(out)["row"]
    assert all(v is None or v >= 0 for v in row.values())
    assert row["order"] == 1.0
