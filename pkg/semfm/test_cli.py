import csv
import json

import pytest

import config
from main import build_parser, main

SMALL_RUN = ["--k", "10", "--k0", "6", "--step", "3", "--k-final", "12", "--n-points", "150", "--K", "4",
             "--alpha", "2", "--k-nn", "8", "--geodesic-subset", "50"]


@pytest.fixture(autouse=True)
def activity_log(tmp_path, monkeypatch):
    path = tmp_path / "activity.jsonl"
    monkeypatch.setattr(config, "ACTIVITY_LOG", str(path))
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(config, "ACTIVITY_LOG", str(out / "activity.jsonl"))
        code = main(["synth", "--base", "handle-tool", "--n-objects", "2", "--rings", "12", "--segments", "8",
                 "--n-samples", "400", "--d", "8", "--seed", "2", "--out", str(out)])
    assert code == 0
    return out


def pair_args(data, src, tgt, out, cache):
    return [
        "--source-mesh", str(data / f"{src}.off"), "--source-samples", str(data / f"{src}_samples.json"),
        "--source-affordance", str(data / f"{src}_affordance.json"),
        "--target-mesh", str(data / f"{tgt}.off"), "--target-samples", str(data / f"{tgt}_samples.json"),
        "--target-affordance", str(data / f"{tgt}_affordance.json"),
        "--output-dir", str(out), "--cache-dir", str(cache),
    ] + SMALL_RUN


def test_synth_writes_a_manifest(dataset, activity_log):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert manifest["schema_version"] == 1
    assert [o["id"] for o in manifest["objects"]] == ["obj_0", "obj_1"]
    for name in ("obj_0.off", "obj_1_samples.json", "obj_0_affordance.json", "obj_1_parts.json"):
        assert (dataset / name).is_file()


def test_synth_rejects_unstable_amplitude(tmp_path, capsys, activity_log):
    code = main(["synth", "--amplitude", "0.6", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "amplitude" in capsys.readouterr().err
    event = json.loads(activity_log.read_text().splitlines()[-1])
    assert event["command"] == "synth" and event["exit_code"] == 2


def test_transfer_onto_itself_is_exact(dataset, tmp_path):
    out = tmp_path / "self"
    code = main(["transfer"] + pair_args(dataset, "obj_0", "obj_0", out, tmp_path / "cache"))
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["source"] == "obj_0" and report["target"] == "obj_0_target"
    assert report["iou"] == 1.0
    assert report["k_trace"] == [6, 9, 12]
    assert report["alpha"] == 2
    for name in ("fmap.json", "pointwise.json", "predicted_affordance.json", "source_anchors.ply",
                 "target_anchors.ply", "source_affordance.ply", "target_affordance.ply"):
        assert (out / name).is_file()
    pointwise = json.loads((out / "pointwise.json").read_text())["map"]
    assert pointwise == list(range(len(pointwise)))


@pytest.mark.parametrize("method", ["semfm", "fm-wks"])
def test_transfer_between_objects(dataset, tmp_path, capsys, method):
    out = tmp_path / method
    code = main(["transfer", "--method", method] + pair_args(dataset, "obj_0", "obj_1", out, tmp_path / "cache"))
    assert code == 0
    assert "IoU" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["iou"] <= 1.0
    assert report["method"] == method
    assert report["n_predicted"] >= 1
    assert report["runtime_seconds"] >= 0
    assert "load" not in report["timings"]
    fmap = json.loads((out / "fmap.json").read_text())
    assert fmap["k"] == 12 and len(fmap["C"]) == 12
    if method == "fm-wks":
        assert report["alpha"] == 0
        assert not (out / "source_anchors.ply").exists()


def test_second_transfer_reuses_the_basis_cache(dataset, tmp_path):
    cache = tmp_path / "cache"
    args = pair_args(dataset, "obj_0", "obj_1", tmp_path / "a", cache)
    assert main(["transfer"] + args) == 0
    first = json.loads((tmp_path / "a" / "report.json").read_text())
    args = pair_args(dataset, "obj_0", "obj_1", tmp_path / "b", cache)
    assert main(["transfer"] + args) == 0
    second = json.loads((tmp_path / "b" / "report.json").read_text())
    assert not first["basis_cached"]
    assert second["basis_cached"]
    assert "basis" not in second["timings"]
    assert second["iou"] == first["iou"]


def test_transfer_in_indicator_mode(dataset, tmp_path):
    out = tmp_path / "ind"
    code = main(["transfer", "--mode", "indicator", "--threshold", "0.4"]
                + pair_args(dataset, "obj_0", "obj_1", out, tmp_path / "cache"))
    assert code == 0
    assert json.loads((out / "report.json").read_text())["mode"] == "indicator"


def test_missing_samples_file_is_an_input_error(dataset, tmp_path, capsys):
    args = pair_args(dataset, "obj_0", "obj_1", tmp_path / "o", tmp_path / "cache")
    args[args.index("--target-samples") + 1] = str(tmp_path / "nope.json")
    assert main(["transfer"] + args) == 2
    err = capsys.readouterr().err
    assert "error [load]" in err
    assert "nope.json" in err


def test_invalid_configuration_exits_with_two(dataset, tmp_path, capsys):
    args = pair_args(dataset, "obj_0", "obj_1", tmp_path / "o", tmp_path / "cache")
    assert main(["transfer"] + args + ["--alpha", "5"]) == 2
    assert "error [config]" in capsys.readouterr().err

    cfg = tmp_path / "run.yaml"
    cfg.write_text("bogus_key: 1\n")
    assert main(["transfer", "--config", str(cfg)] + args) == 2
    assert main(["transfer", "--no-such-flag"]) == 2


def test_config_file_values_are_overridden_by_flags(dataset, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('method = "fm-wks"\nmode = "indicator"\n')
    out = tmp_path / "cfg"
    args = pair_args(dataset, "obj_0", "obj_1", out, tmp_path / "cache")
    assert main(["transfer", "--config", str(cfg), "--mode", "pointwise"] + args) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "fm-wks"
    assert report["mode"] == "pointwise"


def test_anchors_command(dataset, tmp_path):
    out = tmp_path / "anchors"
    args = [
        "anchors",
        "--source-mesh", str(dataset / "obj_0.off"), "--source-samples", str(dataset / "obj_0_samples.json"),
        "--target-mesh", str(dataset / "obj_1.off"), "--target-samples", str(dataset / "obj_1_samples.json"),
        "--output-dir", str(out),
    ] + SMALL_RUN
    assert main(args) == 0
    doc = json.loads((out / "anchors.json").read_text())
    assert doc["K1"] == 4 and doc["K2"] == 4
    assert len(doc["S"]) == 4
    pairs = doc["anchors"]["pairs"]
    assert len(pairs) == 2
    assert pairs[0]["similarity"] >= pairs[1]["similarity"]
    assert sum(doc["source_cluster_sizes"]) == 150


def test_eval_category_covers_every_ordered_pair_and_is_deterministic(dataset, tmp_path):
    reports = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["eval-category", "--manifest", str(dataset / "manifest.json"), "--output-dir", str(out),
                     "--cache-dir", str(tmp_path / "cache"), "--ply"] + SMALL_RUN)
        assert code == 0
        reports.append(json.loads((out / "category_report.json").read_text()))
    a, b = reports
    assert a["n_objects"] == 2
    assert [(p["source"], p["target"]) for p in a["pairs"]] == [("obj_0", "obj_1"), ("obj_1", "obj_0")]
    assert a["avg_iou"] == pytest.approx(sum(p["iou"] for p in a["pairs"]) / 2)
    assert [p["iou"] for p in a["pairs"]] == [p["iou"] for p in b["pairs"]]
    assert all(p["geodesic_median"] is not None for p in a["pairs"])
    assert a["median_geodesic_error"] is not None
    assert (tmp_path / "a" / "semfm_obj_0_to_obj_1.ply").is_file()


def test_eval_category_report_order_does_not_depend_on_workers(dataset, tmp_path):
    results = {}
    for workers in ("1", "2"):
        out = tmp_path / workers
        code = main(["eval-category", "--manifest", str(dataset / "manifest.json"), "--output-dir", str(out),
                     "--no-cache", "--workers", workers] + SMALL_RUN)
        assert code == 0
        results[workers] = json.loads((out / "category_report.json").read_text())
    order = [[(p["source"], p["target"]) for p in r["pairs"]] for r in results.values()]
    assert order[0] == order[1] == [("obj_0", "obj_1"), ("obj_1", "obj_0")]
    assert results["2"]["config"]["workers"] == 2


def test_compare_writes_a_table(dataset, tmp_path):
    out = tmp_path / "cmp"
    code = main(["compare", "--manifest", str(dataset / "manifest.json"), "--output-dir", str(out),
                 "--cache-dir", str(tmp_path / "cache")] + SMALL_RUN)
    assert code == 0
    with open(out / "comparison.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["semfm", "fm-wks"]
    assert (out / "category_report_semfm.json").is_file()
    assert (out / "category_report_fm-wks.json").is_file()
    table = json.loads((out / "comparison.json").read_text())
    assert table["schema_version"] == 1 and len(table["rows"]) == 2


def test_missing_manifest(tmp_path, capsys):
    assert main(["eval-category", "--manifest", str(tmp_path / "none.json"), "--output-dir", str(tmp_path)]) == 2
    assert "Manifest not found" in capsys.readouterr().err


def test_parser_defaults_are_left_to_the_run_config():
    args = build_parser().parse_args(["transfer", "--k", "30"])
    assert vars(args)["k"] == 30
    assert "alpha" not in vars(args)
