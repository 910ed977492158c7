import numpy as np
import pytest
from scipy.stats import mannwhitneyu as scipy_mwu

from oracles import enum_mwu_p
from voxtk.errors import DataError
from voxtk.volume import LabelVolume, reorient
from voxtk.volumetry import (
    GroupTestResult,
    RoiVolumeRecord,
    bonferroni,
    mann_whitney_u,
    normalize,
    roi_volume,
)


def test_roi_volume_forced_arithmetic():
    data = np.zeros((5, 5, 5), dtype=np.int32)
    data.ravel()[:10] = 9
    labels = LabelVolume(data, spacing=(0.75, 0.75, 0.75))
    assert roi_volume(labels, 9) == pytest.approx(10 * 0.421875)
    assert roi_volume(labels, 14) == 0.0

    full = LabelVolume(np.full((4, 4, 4), 3, dtype=np.int32), spacing=(1, 1, 1))
    assert roi_volume(full, 3) == 64.0


def test_roi_volume_additive_and_reorientation_invariant():
    rng = np.random.default_rng(0)
    data = rng.integers(0, 4, size=(6, 7, 8))
    labels = LabelVolume(data, spacing=(0.7, 0.7, 0.7))
    total = sum(roi_volume(labels, lab) for lab in labels.label_domain)
    assert total == pytest.approx(np.prod(labels.dims) * 0.7 ** 3, rel=1e-6)
    flipped = reorient(labels, "LIA")
    for lab in labels.label_domain:
        assert roi_volume(flipped, lab) == pytest.approx(roi_volume(labels, lab))


def test_normalize():
    assert normalize(5.0, 5.0) == 1.0
    assert normalize(0.0, 123.0) == 0.0
    with pytest.raises(DataError):
        normalize(1.0, 0.0)


def test_roi_volume_record():
    data = np.zeros((4, 4, 4), dtype=np.int32)
    data[0, 0, :2] = 14
    labels = LabelVolume(data, spacing=(1, 1, 1))
    rec = RoiVolumeRecord.compute("s01", labels, 14, 1500.0)
    assert rec.raw_mm3 == 2.0
    assert rec.normalized == pytest.approx(2.0 / 1500.0)


def test_bonferroni_values():
    assert bonferroni(0.05, 6) == pytest.approx(0.05 / 6)
    assert bonferroni(0.05, 6) < 0.0084  # the "p < 0.008" working threshold
    assert bonferroni(0.05, 1) == 0.05
    assert bonferroni(0.05, 5) == pytest.approx(0.01)
    with pytest.raises(DataError):
        bonferroni(0.05, 0)


def test_mwu_separated_groups_exact():
    res = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert res.u == 0.0
    assert res.p_value == pytest.approx(0.1, abs=1e-12)
    assert res.method == "exact"


def test_mwu_interleaved_exact():
    res = mann_whitney_u([1, 3], [2, 4])
    assert res.u == 1.0
    assert res.p_value == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_mwu_symmetry_and_u_sum():
    rng = np.random.default_rng(1)
    a = rng.normal(size=4).tolist()
    b = rng.normal(size=5).tolist()
    r_ab = mann_whitney_u(a, b)
    r_ba = mann_whitney_u(b, a)
    assert r_ab.p_value == pytest.approx(r_ba.p_value, abs=1e-12)
    assert r_ab.u + r_ba.u == pytest.approx(len(a) * len(b))


def test_mwu_exact_matches_enumeration_oracle():
    rng = np.random.default_rng(7)
    for _ in range(40):
        na = int(rng.integers(1, 6))
        nb = int(rng.integers(1, 6))
        vals = rng.permutation(np.arange(1.0, na + nb + 1.0))
        a, b = vals[:na].tolist(), vals[na:].tolist()
        u_oracle, p_oracle = enum_mwu_p(a, b)
        res = mann_whitney_u(a, b)
        assert res.method == "exact"
        assert res.u == pytest.approx(u_oracle, abs=1e-12)
        assert res.p_value == pytest.approx(p_oracle, abs=1e-12)


def test_mwu_normal_path_matches_scipy():
    rng = np.random.default_rng(3)
    a = rng.normal(0.0, 1.0, 21)
    b = rng.normal(0.6, 1.0, 24)
    res = mann_whitney_u(a, b)
    assert res.method == "normal"
    ref = scipy_mwu(a, b, alternative="two-sided", method="asymptotic",
                    use_continuity=True)
    assert res.u == pytest.approx(float(ref.statistic))
    assert res.p_value == pytest.approx(float(ref.pvalue), rel=1e-10)


def test_mwu_ties_force_normal_path():
    res = mann_whitney_u([1.0, 2.0, 2.0], [2.0, 3.0, 4.0])
    assert res.method == "normal"
    ref = scipy_mwu([1.0, 2.0, 2.0], [2.0, 3.0, 4.0], alternative="two-sided",
                    method="asymptotic", use_continuity=True)
    assert res.p_value == pytest.approx(float(ref.pvalue), rel=1e-10)


def test_mwu_thresholds_and_errors():
    res = mann_whitney_u([1, 2, 3], [4, 5, 6], alpha=0.05, m_tests=6)
    assert res.threshold == pytest.approx(0.05 / 6)
    assert not res.significant  # p = 0.1 > 0.00833
    with pytest.raises(DataError):
        mann_whitney_u([], [1.0])
    with pytest.raises(DataError):
        GroupTestResult(u=0.0, p_value=1.5, threshold=0.05,
                        significant=False, method="exact")


def test_mwu_identical_groups_p_one():
    res = mann_whitney_u([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
    assert res.p_value == 1.0
