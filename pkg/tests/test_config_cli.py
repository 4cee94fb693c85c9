import json

import numpy as np
import pytest

from regad.cli import main
from regad.config import PipelineConfig
from regad.exceptions import RegadError
from regad.io import read_cloud, read_transform

SMALL = ["--target-fine", "512"]


def test_config_round_trip():
    cfg = PipelineConfig().with_overrides({"matching.n_c": "64", "ransac.inlier_thresh": "0.02",
                                           "loss.circle.gamma": "12.5"})
    text = cfg.dumps()
    assert PipelineConfig.loads(text).dumps() == text
    assert PipelineConfig.loads(text).matching.n_c == 64
    with pytest.raises(RegadError, match="unknown config key"):
        cfg.with_overrides({"nope": "1"})
    with pytest.raises(RegadError):
        cfg.with_overrides({"matching.k": "three"})


def test_config_dump_and_overrides(tmp_path, capsys):
    assert main(["config", "--dump"]) == 0
    text = capsys.readouterr().out
    assert "target_fine = 4096" in text and "matching.n_c = 256" in text
    (tmp_path / "c.cfg").write_text("# comment\nmatching.k = 5\n")
    assert main(["config", "--config", str(tmp_path / "c.cfg"), "--set", "bank.rate=0.5", "--n-c", "32"]) == 0
    text = capsys.readouterr().out
    assert "matching.k = 5" in text and "bank.rate = 0.5" in text and "matching.n_c = 32" in text


def test_exit_codes(tmp_path, capsys):
    assert main(["config", "--set", "bogus=1"]) == 2
    assert main(["features", "--cloud", str(tmp_path / "missing.xyz"), "--out", str(tmp_path / "f.feat")]) == 2
    assert "error" in capsys.readouterr().err


def test_gen_pairs_determinism_and_transform(tmp_path):
    args = ["gen-pairs", "--n-points", "1500", "--count", "2", "--seed", "3", "--max-translation", "0.5"] + SMALL
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("P.xyz", "Q.xyz", "T_gt.txt", "matches.json"):
        assert (tmp_path / "a/pair_001" / name).read_bytes() == (tmp_path / "b/pair_001" / name).read_bytes()
    d = tmp_path / "a/pair_000"
    t = read_transform(d / "T_gt.txt")
    assert np.abs(t.apply(read_cloud(d / "P.xyz").points) - read_cloud(d / "Q.xyz").points).max() < 1e-6
    m = json.loads((d / "matches.json").read_text())
    assert m["schema_version"] == 1 and len(m["patch_pairs"]) > 0
    assert main(["loss-eval", "--pair", str(d), "--out", str(tmp_path / "loss.json")] + SMALL) == 0
    loss = json.loads((tmp_path / "loss.json").read_text())
    assert np.isclose(loss["L"], loss["L_f"] + loss["L_p"] + loss["L_oc"])


def test_synth_labels(tmp_path):
    assert main(["synth", "--n-train", "1", "--n-normal", "2", "--n-anomalous", "3", "--n-points", "2000",
                 "--defect-fraction", "0.05", "--out", str(tmp_path)] + SMALL) == 0
    labels = json.loads((tmp_path / "labels.json").read_text())["labels"]
    assert sorted(labels.values()) == [0, 0, 1, 1, 1]
    for name, lab in labels.items():
        c = read_cloud(tmp_path / "test" / f"{name}.xyz")
        if lab == 0:
            assert c.labels.sum() == 0
        else:
            assert 0.8 * 100 <= c.labels.sum() <= 1.2 * 100
    assert main(["synth", "--defect-fraction", "0", "--out", str(tmp_path / "x")]) == 2


def test_evaluate_command(tmp_path):
    res = []
    for i, (s, lab) in enumerate([(0.1, 0), (0.4, 0), (0.35, 1), (0.8, 1)]):
        p = tmp_path / f"s{i}.json"
        p.write_text(json.dumps({"object_score": s, "point_scores": [s, 0.0], "point_labels": [lab, 0]}))
        res.append(str(p))
    (tmp_path / "labels.json").write_text(json.dumps({f"s{i}": lab for i, lab in enumerate([0, 0, 1, 1])}))
    out = tmp_path / "m.json"
    assert main(["evaluate", "--results", *res, "--labels", str(tmp_path / "labels.json"),
                 "--roc-csv", str(tmp_path / "roc.csv"), "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m["o_auroc"] == 0.75 and m["schema_version"] == 1
    assert (tmp_path / "roc.csv").read_text().startswith("fpr,tpr")
    (tmp_path / "bad.json").write_text(json.dumps({f"s{i}": 0 for i in range(4)}))
    assert main(["evaluate", "--results", *res, "--labels", str(tmp_path / "bad.json")]) == 4


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n-train", "2", "--n-normal", "2", "--n-anomalous", "1", "--n-points", "2000",
                 "--out", str(root)] + SMALL) == 0
    return root


def test_train_equals_test_is_degenerate(dataset, tmp_path, capsys):
    names = sorted(p.stem for p in (dataset / "train").iterdir())
    (tmp_path / "l.json").write_text(json.dumps({n: 0 for n in names}))
    code = main(["pipeline", "--train-dir", str(dataset / "train"), "--test-dir", str(dataset / "train"),
                 "--labels", str(tmp_path / "l.json"), "--rate", "1", "--out", str(tmp_path / "o")] + SMALL)
    assert code == 4
    assert "degenerate labels" in capsys.readouterr().err
    m = json.loads((tmp_path / "o/metrics.json").read_text())
    assert m["error"] == "degenerate labels" and m["o_auroc"] is None


def test_missing_test_features_are_per_sample_errors(dataset, tmp_path):
    feats = tmp_path / "feats"
    feats.mkdir()
    clouds = sorted((dataset / "train").iterdir()) + [p for p in sorted((dataset / "test").iterdir()) if p.stem != "good_000"]
    for p in clouds:
        assert main(["features", "--cloud", str(p), "--out", str(feats / f"{p.stem}.feat")] + SMALL) == 0
    code = main(["pipeline", "--train-dir", str(dataset / "train"), "--test-dir", str(dataset / "test"),
                 "--features-dir", str(feats), "--out", str(tmp_path / "o")] + SMALL)
    assert code == 0
    m = json.loads((tmp_path / "o/metrics.json").read_text())
    assert [f["name"] for f in m["failures"]] == ["good_000"]
    assert "missing feature file" in m["failures"][0]["message"]
    assert m["n_test"] == 3


def test_build_bank_detect_register(dataset, tmp_path):
    train = sorted((dataset / "train").iterdir())
    assert main(["build-bank", "--train-dir", str(dataset / "train"), "--out", str(tmp_path / "bank.bin"),
                 "--template-out", str(tmp_path / "tpl.xyz"), "--report", str(tmp_path / "r.json")] + SMALL) == 0
    test = sorted((dataset / "test").iterdir())[0]
    assert main(["detect", "--cloud", str(test), "--bank", str(tmp_path / "bank.bin"),
                 "--template", str(tmp_path / "tpl.xyz"), "--out", str(tmp_path / "d.json"),
                 "--ply", str(tmp_path / "d.ply")] + SMALL) == 0
    d = json.loads((tmp_path / "d.json").read_text())
    assert len(d["point_scores"]) == len(d["point_labels"]) and d["object_score"] >= 0
    assert main(["register", "--source", str(train[0]), "--target", str(train[0]),
                 "--report", str(tmp_path / "reg.json")] + SMALL) == 0
    assert json.loads((tmp_path / "reg.json").read_text())["inliers"] > 0
