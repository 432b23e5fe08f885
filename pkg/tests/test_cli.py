import json

import pytest

from pairloc.cli import main


SYNTH = ["synth", "--num-classes", "2", "--bags-per-class", "4",
         "--proposals-per-bag", "6", "--feature-dim", "8",
         "--source-num-classes", "6", "--seed", "0"]

TRAIN = ["--learning-rate", "1e-3", "--momentum", "0.5",
         "--iterations", "200", "--bags-per-step", "4"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(SYNTH + ["--out", str(data)]) == 0
    model = root / "model"
    assert main(["train-source", "--source", str(data / "source.jsonl"),
                 "--target", str(data / "target.jsonl")] + TRAIN +
                ["--seed", "1", "--out", str(model)]) == 0
    return root


def test_synth_outputs(workdir):
    data = workdir / "data"
    assert (data / "source.jsonl").exists()
    assert (data / "target.jsonl").exists()
    truth = json.loads((data / "truth.json").read_text())
    assert set(truth) == {"t00", "t01"}


def test_train_source_outputs(workdir):
    model = workdir / "model"
    blob = json.loads((model / "model.json").read_text())
    assert blob["format"] == "pairloc-model-v1"
    lines = (model / "source_loss.csv").read_text().strip().splitlines()
    assert lines[0] == "step,loss"
    assert len(lines) == 201


def test_warmup_and_eval(workdir):
    data, model = workdir / "data", workdir / "model"
    out = workdir / "warm"
    assert main(["warmup", "--target", str(data / "target.jsonl"),
                 "--model", str(model / "model.json"),
                 "--seed", "0", "--out", str(out)]) == 0
    sels = json.loads((out / "selections.json").read_text())
    assert set(sels) == {"t00", "t01"}
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0].split(",")[:3] == ["timestamp", "class", "step"]
    assert any(",init," in row for row in trace[1:])
    assert any(",icm," in row for row in trace[1:])

    ev = workdir / "eval"
    assert main(["eval", "--target", str(data / "target.jsonl"),
                 "--selections", str(out / "selections.json"),
                 "--truth", str(data / "truth.json"),
                 "--out", str(ev)]) == 0
    report = json.loads((ev / "eval.json").read_text())
    assert "corloc@0.5" in report and "selection_accuracy" in report
    assert report["corloc@0.7"]["mean"] <= report["corloc@0.5"]["mean"]


def test_relocalize_objectness_init(workdir):
    data, model = workdir / "data", workdir / "model"
    out = workdir / "reloc"
    assert main(["relocalize", "--target", str(data / "target.jsonl"),
                 "--model", str(model / "model.json"),
                 "--init", "objectness", "--lambda1", "1.0",
                 "--lambda2", "1.0", "--seed", "2", "--out", str(out)]) == 0
    assert (out / "selections.json").exists()


def test_run_manifest_is_deterministic(workdir):
    data = workdir / "data"
    args = ["run", "--source", str(data / "source.jsonl"),
            "--target", str(data / "target.jsonl"),
            "--outer-iterations", "1", "--folds", "1"] + TRAIN + \
           ["--source-iterations", "200", "--seed", "5"]
    out1, out2 = workdir / "run1", workdir / "run2"
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2)]) == 0
    m1 = (out1 / "manifest.json").read_bytes()
    m2 = (out2 / "manifest.json").read_bytes()
    assert m1 == m2
    assert (out1 / "model_warmup.json").exists()
    assert (out1 / "selections.json").exists()


def test_bench_csv(workdir):
    out = workdir / "bench"
    assert main(["bench", "--m", "4", "8", "--k", "2", "--b", "3",
                 "--seed", "0", "--out", str(out)]) == 0
    lines = (out / "bench.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    assert "init_pairwise_evals" in header
