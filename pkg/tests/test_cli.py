import json
import shutil

import pytest

from sseg import cli
from sseg.errors import NumericError


def run(*argv) -> int:
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    ds = root / "ds"
    code = run(
        "gen", "--category", "toy-chair", "--count", "6", "--seed", "9",
        "--oversample-prob", "0.5", "--out", str(ds),
    )
    assert code == 0
    return ds


@pytest.fixture(scope="module")
def predictions(dataset, tmp_path_factory):
    preds = tmp_path_factory.mktemp("preds")
    for i in range(6):
        name = f"shape_{i:05d}.json"
        code = run(
            "infer", "--rule-based",
            "--shape", str(dataset / name), "--out", str(preds / name),
        )
        assert code == 0
    return preds


class TestGen:
    def test_manifest_and_taxonomy(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert len(manifest["records"]) == 6
        assert {e["split"] for e in manifest["records"]} == {"train", "test"}
        assert (dataset / "taxonomy.json").exists()

    def test_deterministic_given_seed(self, dataset, tmp_path):
        other = tmp_path / "again"
        assert run(
            "gen", "--category", "toy-chair", "--count", "6", "--seed", "9",
            "--oversample-prob", "0.5", "--out", str(other),
        ) == 0
        a = (dataset / "shape_00003.json").read_bytes()
        b = (other / "shape_00003.json").read_bytes()
        assert a == b

    def test_unknown_category_exit_3(self, tmp_path, capsys):
        code = run("gen", "--category", "toy-rocket", "--count", "1", "--seed", "0", "--out", str(tmp_path / "x"))
        assert code == 3
        assert capsys.readouterr().err.startswith("sseg: error: data:")


class TestInferEval:
    def test_eval_writes_report_and_figures(self, dataset, predictions, tmp_path):
        out = tmp_path / "evalout"
        code = run("eval", "--pred", str(predictions), "--gt", str(dataset), "--metrics", "ap,ee,map", "--out", str(out))
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["ap_25"] <= 1.0
        assert "segmentation" in report
        assert (out / "report.txt").exists()
        assert (out / "metrics_per_shape.png").exists()
        assert (out / "segmentation_map.png").exists()

    def test_eval_byte_identical(self, dataset, predictions, tmp_path):
        out1 = tmp_path / "e1"
        out2 = tmp_path / "e2"
        assert run("eval", "--pred", str(predictions), "--gt", str(dataset), "--out", str(out1)) == 0
        assert run("eval", "--pred", str(predictions), "--gt", str(dataset), "--out", str(out2)) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
        assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()

    def test_eval_jobs_matches_serial(self, dataset, predictions, tmp_path):
        out1 = tmp_path / "serial"
        out2 = tmp_path / "parallel"
        assert run("eval", "--pred", str(predictions), "--gt", str(dataset), "--out", str(out1)) == 0
        assert run("eval", "--pred", str(predictions), "--gt", str(dataset), "--jobs", "4", "--out", str(out2)) == 0
        assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()

    def test_missing_prediction_exit_3(self, dataset, tmp_path, capsys):
        empty = tmp_path / "nopreds"
        empty.mkdir()
        code = run("eval", "--pred", str(empty), "--gt", str(dataset))
        assert code == 3
        assert "missing prediction" in capsys.readouterr().err

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as e:
            run("infer", "--shape", "x.json", "--out", "y.json")  # no --model/--rule-based
        assert e.value.code == 2

    def test_eval_perfect_when_pred_is_gt(self, dataset, tmp_path, capsys):
        preds = tmp_path / "gtpreds"
        preds.mkdir()
        from sseg.synthio import load_shape, save_hierarchy

        for i in range(6):
            name = f"shape_{i:05d}.json"
            record = load_shape(dataset / name)
            save_hierarchy(record.gt_hierarchy, preds / name)
        code = run("eval", "--pred", str(preds), "--gt", str(dataset), "--metrics", "ap,ee")
        assert code == 0
        line = capsys.readouterr().out.splitlines()[0]
        report = json.loads(line)
        assert report["ap_25"] == 1.0
        assert report["edge_error"] == 0.0


class TestRetrieve:
    def test_duplicate_ranked_first(self, dataset, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        corpus.mkdir()
        for i in range(6):
            name = f"shape_{i:05d}.json"
            shutil.copy(dataset / name, corpus / name)
        shutil.copy(dataset / "shape_00000.json", corpus / "zz_duplicate.json")
        code = run(
            "retrieve", "--query", str(corpus / "shape_00000.json"), "--corpus", str(corpus),
            "--mode", "structure", "--topk", "3", "--out", str(tmp_path / "rank.json"),
        )
        assert code == 0
        ranked = json.loads((tmp_path / "rank.json").read_text())["results"]
        assert ranked[0]["path"] == "zz_duplicate.json"
        assert ranked[0]["structure_difference"] == 0
        assert ranked[0]["chamfer_sq"] == 0.0
        out = capsys.readouterr().out
        assert "zz_duplicate.json" in out.splitlines()[2]


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    config = out / "config.json"
    config.write_text(json.dumps({"seed": 0, "epochs": 1, "eval_subset": 2}))
    code = run("train", "--config", str(config), "--data", str(dataset), "--out", str(out))
    assert code == 0
    return out


class TestTrainRefine:
    def test_train_outputs(self, trained):
        assert (trained / "model.sseg").exists()
        assert (trained / "curves.csv").exists()
        assert (trained / "training_curves.png").exists()
        report = json.loads((trained / "report.json").read_text())
        assert report["curves"]

    def test_infer_with_model(self, dataset, trained, tmp_path):
        out = tmp_path / "pred.json"
        code = run(
            "infer", "--model", str(trained / "model.sseg"),
            "--shape", str(dataset / "shape_00000.json"), "--out", str(out),
        )
        assert code == 0
        from sseg.synthio import load_hierarchy

        h = load_hierarchy(out)
        for leaf in h.leaves():
            assert h.nodes[leaf].box is not None

    def test_refine_with_model(self, dataset, trained, tmp_path):
        pred = tmp_path / "pred.json"
        assert run(
            "infer", "--model", str(trained / "model.sseg"),
            "--shape", str(dataset / "shape_00001.json"), "--out", str(pred),
        ) == 0
        out = tmp_path / "refined"
        code = run(
            "refine", "--model", str(trained / "model.sseg"),
            "--shape", str(dataset / "shape_00001.json"), "--hierarchy", str(pred),
            "--iou-thresh", "0.09", "--merge-thresh", "0.7", "--out", str(out),
        )
        assert code == 0
        assert (out / "refined_shape.json").exists()
        assert (out / "refined_hierarchy.json").exists()
        assert (out / "decisions.jsonl").exists()

    def test_toml_config(self, dataset, tmp_path):
        config = tmp_path / "config.toml"
        config.write_text('seed = 1\nepochs = 1\neval_subset = 0\n')
        out = tmp_path / "m2"
        code = run("train", "--config", str(config), "--data", str(dataset), "--out", str(out))
        assert code == 0
        assert (out / "model.sseg").exists()


class TestErrorMapping:
    def test_numeric_error_exit_4(self, monkeypatch, capsys):
        def boom(args):
            raise NumericError("loss exploded")

        parser = cli.build_parser()
        monkeypatch.setattr(cli, "build_parser", lambda: parser)
        for action in parser._subparsers._group_actions[0].choices.values():
            action.set_defaults(func=boom)
        code = cli.main(["gen", "--category", "toy-chair", "--count", "1", "--seed", "0", "--out", "x"])
        assert code == 4
        assert capsys.readouterr().err.startswith("sseg: error: numeric:")

    def test_missing_file_exit_3(self, capsys):
        code = run("infer", "--rule-based", "--shape", "/nonexistent/shape.json", "--out", "/tmp/out.json")
        assert code == 3
