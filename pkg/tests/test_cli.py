import hashlib
import json

import numpy as np
import pytest

from fixtures import make_label_phantom
from voxtk.cli import FoldAssignment, PipelineConfig, config_hash, main, split_folds
from voxtk.errors import DataError
from voxtk.volume import (
    LabelVolume,
    ScalarVolume,
    read_volume,
    write_probability_stack,
    write_volume,
)


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_split_folds_partition():
    subjects = [f"s{i:02d}" for i in range(10)]
    fa = split_folds(subjects, k=5, seed=3)
    assert fa.k == 5 and not fa.degenerate
    val_all = [s for fold in fa.folds for s in fold["val"]]
    assert sorted(val_all) == sorted(subjects)  # each validates exactly once
    for fold in fa.folds:
        assert len(fold["val"]) == 2
        assert sorted(fold["train"] + fold["val"]) == sorted(subjects)
    again = split_folds(subjects, k=5, seed=3)
    assert fa == again
    different = split_folds(subjects, k=5, seed=4)
    assert fa != different


def test_split_folds_degenerate_and_errors():
    fa = split_folds(["a", "b"], k=1, seed=0)
    assert fa.degenerate
    assert fa.folds[0]["train"] == fa.folds[0]["val"]
    with pytest.raises(DataError):
        split_folds(["a"], k=2, seed=0)
    with pytest.raises(DataError):
        split_folds(["a", "a", "b"], k=2, seed=0)


def test_pipeline_config_from_mapping():
    cfg = PipelineConfig.from_mapping({"b_B": 0.5, "target_spacing": 0.5,
                                       "seed": 9, "folds": 3})
    assert cfg.generative.b_B == 0.5
    assert cfg.resample.target_spacing == (0.5, 0.5, 0.5)
    assert cfg.seed == 9 and cfg.folds == 3
    with pytest.raises(DataError, match="train_fraction"):
        PipelineConfig.from_mapping({"train_fraction": 1.5})
    with pytest.raises(DataError, match="r_HR"):
        PipelineConfig.from_mapping({"r_HR": 1.0})


def test_config_hash_changes_iff_parameters_change():
    base = PipelineConfig.from_mapping({}).to_dict()
    same = PipelineConfig.from_mapping({}).to_dict()
    assert config_hash(base) == config_hash(same)
    bumped = PipelineConfig.from_mapping({"b_B": 0.8}).to_dict()
    assert config_hash(base) != config_hash(bumped)
    reseeded = PipelineConfig.from_mapping({"seed": 1}).to_dict()
    assert config_hash(base) != config_hash(reseeded)


def test_usage_error_exit_code(capsys):
    assert main(["generate", "--labels"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["generate", "--labels", str(tmp_path / "nope.nii.gz"),
                 "--out", str(out)])
    assert code == 2
    assert "data error" in capsys.readouterr().err


def test_invalid_config_key_names_it(tmp_path, capsys):
    labels = make_label_phantom((8, 8, 8))
    lp = tmp_path / "case.nii.gz"
    write_volume(labels, lp)
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"a_alpha": 2.0}')
    code = main(["--config", str(cfg), "generate", "--labels", str(lp),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "a_alpha" in capsys.readouterr().err


def test_generate_outputs_and_rerun_identical(tmp_path):
    labels = make_label_phantom((12, 12, 12), seed=2)
    lp = tmp_path / "caseA.nii.gz"
    write_volume(labels, lp)

    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    for out in (out1, out2):
        code = main(["--seed", "5", "generate", "--labels", str(lp),
                     "--n-per-subject", "2", "--out", str(out)])
        assert code == 0

    names = sorted(p.name for p in out1.iterdir())
    assert names == ["caseA_0_img.nii.gz", "caseA_0_lbl.nii.gz",
                     "caseA_1_img.nii.gz", "caseA_1_lbl.nii.gz",
                     "run_manifest.json"]
    for name in names:
        assert _sha(out1 / name) == _sha(out2 / name), name

    manifest = json.loads((out1 / "run_manifest.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["command"] == "generate"
    assert "config_hash" in manifest

    out3 = tmp_path / "run3"
    assert main(["--seed", "6", "generate", "--labels", str(lp),
                 "--n-per-subject", "2", "--out", str(out3)]) == 0
    assert _sha(out3 / names[0]) != _sha(out1 / names[0])


def test_generate_thread_count_does_not_change_outputs(tmp_path, monkeypatch):
    labels = make_label_phantom((10, 10, 10), seed=4)
    lp = tmp_path / "caseB.nii.gz"
    write_volume(labels, lp)
    single = tmp_path / "single"
    multi = tmp_path / "multi"
    assert main(["--seed", "1", "--threads", "1", "generate", "--labels",
                 str(lp), "--n-per-subject", "3", "--out", str(single)]) == 0
    monkeypatch.setenv("VOXTK_THREADS", "4")
    assert main(["--seed", "1", "generate", "--labels", str(lp),
                 "--n-per-subject", "3", "--out", str(multi)]) == 0
    for p in sorted(single.iterdir()):
        assert _sha(p) == _sha(multi / p.name), p.name


def test_generate_training_layout(tmp_path):
    labels = make_label_phantom((8, 8, 8), seed=0)
    lp = tmp_path / "caseC.nii.gz"
    write_volume(labels, lp)
    out = tmp_path / "train"
    assert main(["generate", "--labels", str(lp), "--out", str(out),
                 "--export-training-layout"]) == 0
    assert (out / "imagesTr" / "caseC_0_0000.nii.gz").exists()
    assert (out / "labelsTr" / "caseC_0.nii.gz").exists()
    img = read_volume(out / "imagesTr" / "caseC_0_0000.nii.gz", kind="image")
    lbl = read_volume(out / "labelsTr" / "caseC_0.nii.gz", kind="labels")
    assert img.dims == lbl.dims == (8, 8, 8)
    assert 36 not in lbl.label_domain


def test_prep_labels_cli(tmp_path):
    data = np.zeros((10, 10, 10), dtype=np.int32)
    data[4:7, 4:7, 4:7] = 2
    labels = LabelVolume(data, spacing=(0.9, 0.9, 0.9))
    img = ScalarVolume(np.random.default_rng(0).random((10, 10, 10)),
                       spacing=(0.9, 0.9, 0.9))
    lp, ip = tmp_path / "lab.nii.gz", tmp_path / "img.nii.gz"
    write_volume(labels, lp)
    write_volume(img, ip)
    out_l, out_i = tmp_path / "out_lab.nii.gz", tmp_path / "out_img.nii.gz"
    code = main(["prep-labels", "--in", str(lp), "--image", str(ip),
                 "--out-labels", str(out_l), "--out-image", str(out_i),
                 "--radius", "1"])
    assert code == 0
    new_labels = read_volume(out_l, kind="labels")
    assert 36 in new_labels.label_domain
    stripped = read_volume(out_i, kind="image")
    assert float(stripped.data[0, 0, 0]) == 0.0


def test_prep_labels_cli_without_image(tmp_path):
    data = np.zeros((8, 8, 8), dtype=np.int32)
    data[3:5, 3:5, 3:5] = 1
    lp = tmp_path / "lab.nii.gz"
    write_volume(LabelVolume(data, spacing=(1, 1, 1)), lp)
    out_l = tmp_path / "out.nii.gz"
    assert main(["prep-labels", "--in", str(lp), "--out-labels", str(out_l),
                 "--radius", "1"]) == 0
    assert 36 in read_volume(out_l, kind="labels").label_domain


def test_resample_cli(tmp_path):
    labels = make_label_phantom((16, 16, 16), seed=1, spacing=(0.7, 0.7, 0.7))
    lp = tmp_path / "lab.nii.gz"
    write_volume(labels, lp)
    out = tmp_path / "up.nii.gz"
    assert main(["resample", "--in", str(lp), "--target-res", "0.35",
                 "--kind", "labels", "--out", str(out)]) == 0
    up = read_volume(out, kind="labels")
    assert up.dims == (32, 32, 32)
    assert up.label_domain <= labels.label_domain


def test_ensemble_and_postproc_cli(tmp_path):
    rng = np.random.default_rng(0)
    probs_dir = tmp_path / "probs"
    probs_dir.mkdir()
    for i in range(2):
        raw = rng.random((6, 6, 6, 3)).astype(np.float32)
        raw /= raw.sum(axis=3, keepdims=True)
        write_probability_stack(raw, np.eye(4), probs_dir / f"fold{i}.nii.gz")
    seg = tmp_path / "seg.nii.gz"
    assert main(["ensemble", "--probs", str(probs_dir), "--out", str(seg)]) == 0
    merged = read_volume(seg, kind="labels")
    assert merged.dims == (6, 6, 6)

    policy = tmp_path / "policy.json"
    policy.write_text("[1, 2]")
    cleaned = tmp_path / "cleaned.nii.gz"
    assert main(["postproc", "--in", str(seg), "--policy", str(policy),
                 "--out", str(cleaned)]) == 0
    out = read_volume(cleaned, kind="labels")
    for lab in (1, 2):
        before = int((merged.data == lab).sum())
        after = int((out.data == lab).sum())
        assert after <= before


def test_evaluate_cli(tmp_path):
    gt_dir = tmp_path / "gt"
    pred_dir = tmp_path / "pred"
    gt_dir.mkdir()
    pred_dir.mkdir()
    data = np.zeros((8, 8, 8), dtype=np.int32)
    data[2:5, 2:5, 2:5] = 1
    data[5:7, 5:7, 5:7] = 2
    pred = np.array(data)
    pred[pred == 2] = 0  # prediction misses label 2
    for case in ("s1", "s2"):
        write_volume(LabelVolume(data, spacing=(1, 1, 1)), gt_dir / f"{case}.nii.gz")
        write_volume(LabelVolume(pred, spacing=(1, 1, 1)), pred_dir / f"{case}.nii.gz")
    out = tmp_path / "metrics.csv"
    code = main(["evaluate", "--gt", str(gt_dir), "--pred", str(pred_dir),
                 "--labels", "1,2", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "subject,label,dsc,asd_mm"
    assert len(lines) == 5  # 2 subjects x 2 labels
    rows = [line.split(",") for line in lines[1:]]
    by_key = {(r[0], r[1]): (float(r[2]), r[3]) for r in rows}
    assert by_key[("s1", "1")][0] == 1.0
    assert by_key[("s1", "2")][0] == 0.0
    assert by_key[("s1", "2")][1] == "nan"

    summary = json.loads((tmp_path / "metrics.summary.json").read_text())
    assert summary["n_subjects"] == 2
    assert summary["per_label"]["1"]["dsc"]["median"] == 1.0
    assert summary["per_label"]["2"]["asd_mm"] is None
    assert summary["overall"]["dsc"]["median"] == 0.5


def test_volumetry_cli(tmp_path):
    labels_dir = tmp_path / "labels"
    labels_dir.mkdir()
    rng = np.random.default_rng(1)
    groups_lines = ["subject,group"]
    tiv_lines = ["subject,tiv_mm3"]
    for i in range(8):
        subject = f"subj{i}"
        group = "control" if i < 4 else "patient"
        data = np.zeros((8, 8, 8), dtype=np.int32)
        side = 3 if i < 4 else 2  # controls have larger ROI 9
        data[:side, :side, :side] = 9
        data[5:7, 5:7, 5:7] = 14
        write_volume(LabelVolume(data, spacing=(1, 1, 1)),
                     labels_dir / f"{subject}.nii.gz")
        groups_lines.append(f"{subject},{group}")
        tiv_lines.append(f"{subject},{1400 + int(rng.integers(0, 100))}")
    groups = tmp_path / "groups.csv"
    tiv = tmp_path / "tiv.csv"
    groups.write_text("\n".join(groups_lines) + "\n")
    tiv.write_text("\n".join(tiv_lines) + "\n")

    out = tmp_path / "report.json"
    code = main(["volumetry", "--labels-dir", str(labels_dir),
                 "--groups", str(groups), "--tiv", str(tiv),
                 "--rois", "9,14", "--alpha", "0.05", "--n-methods", "3",
                 "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["m_tests"] == 6
    assert report["tests"]["9"]["threshold"] == pytest.approx(0.05 / 6)
    assert len(report["volumes"]) == 16
    # ROI 9 differs strongly between groups (27 vs 8 voxels)
    assert report["tests"]["9"]["p_value"] < report["tests"]["14"]["p_value"]


def test_split_folds_cli(tmp_path):
    subjects = tmp_path / "subjects.txt"
    subjects.write_text("\n".join(f"s{i}" for i in range(10)) + "\n")
    out = tmp_path / "folds.json"
    assert main(["--seed", "2", "split-folds", "--subjects", str(subjects),
                 "--k", "5", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["k"] == 5 and len(data["folds"]) == 5


def test_fold_assignment_roundtrip():
    fa = FoldAssignment(2, 0, [{"fold": 0, "train": ["b"], "val": ["a"]},
                               {"fold": 1, "train": ["a"], "val": ["b"]}])
    d = fa.to_dict()
    assert d["k"] == 2 and len(d["folds"]) == 2
