import numpy as np
import pytest

from voxtk.errors import DataError
from voxtk.resample import ResampleSpec, resample_image, resample_labelmap, resize_grid
from voxtk.volume import LabelVolume, ScalarVolume


def _image(data, spacing):
    return ScalarVolume(np.asarray(data, dtype=np.float32), spacing=spacing)


def test_spec_validation():
    assert ResampleSpec().target_spacing == (0.7, 0.7, 0.7)
    with pytest.raises(DataError):
        ResampleSpec(target_spacing=(0.0, 1.0, 1.0))


def test_identity_spacing_is_identity():
    rng = np.random.default_rng(0)
    img = _image(rng.random((8, 9, 10)), (0.7, 0.8, 0.9))
    out = resample_image(img, ResampleSpec(target_spacing=(0.7, 0.8, 0.9)))
    assert out.dims == img.dims
    assert np.allclose(out.data, img.data, atol=1e-6)
    assert np.allclose(out.affine, img.affine, atol=1e-9)


def test_constant_survives_any_resampling():
    img = _image(np.full((12, 12, 12), 3.25), (1.0, 1.0, 1.0))
    for target in [(0.5, 0.5, 0.5), (0.7, 0.7, 0.7), (1.7, 1.3, 0.4)]:
        out = resample_image(img, ResampleSpec(target_spacing=target))
        assert np.allclose(out.data, 3.25, atol=1e-5)


def test_linear_ramp_2x_upsample_matches_analytic():
    # value equals the x index; at 2x upsampling the output voxel j sits at
    # input coordinate (j + 0.5) / 2 - 0.5
    n = 16
    ramp = np.broadcast_to(np.arange(n, dtype=np.float32)[:, None, None],
                           (n, 4, 4)).copy()
    img = _image(ramp, (1.0, 1.0, 1.0))
    out = resample_image(img, ResampleSpec(target_spacing=(0.5, 1.0, 1.0)))
    assert out.dims == (2 * n, 4, 4)
    j = np.arange(2 * n)
    expected = (j + 0.5) * 0.5 - 0.5
    interior = (expected > 1.0) & (expected < n - 2.0)  # clamped edges excluded
    got = out.data[:, 2, 2]
    assert np.allclose(got[interior], expected[interior], atol=1e-4)


def test_world_extent_preserved():
    img = _image(np.zeros((10, 10, 10)), (1.0, 1.0, 1.0))
    out = resample_image(img, ResampleSpec(target_spacing=(0.5, 0.5, 0.5)))
    assert out.dims == (20, 20, 20)
    # corner of voxel (0,0,0) is fixed: center - spacing/2 in world
    corner_in = img.voxel_to_world([0, 0, 0]) - np.array(img.spacing) / 2
    corner_out = out.voxel_to_world([0, 0, 0]) - np.array(out.spacing) / 2
    assert np.allclose(corner_in, corner_out, atol=1e-9)
    far_in = img.voxel_to_world([9, 9, 9]) + np.array(img.spacing) / 2
    far_out = out.voxel_to_world([19, 19, 19]) + np.array(out.spacing) / 2
    assert np.allclose(far_in, far_out, atol=1e-9)


def test_affine_intensity_commutes():
    rng = np.random.default_rng(42)
    img = _image(rng.random((9, 9, 9)), (1.0, 1.0, 1.0))
    spec = ResampleSpec(target_spacing=(0.6, 0.6, 0.6))
    a, b = 2.5, -1.25
    lhs = resample_image(_image(a * img.data + b, (1, 1, 1)), spec)
    rhs = a * resample_image(img, spec).data + b
    assert np.allclose(lhs.data, rhs, atol=1e-5)


def test_degenerate_output_dims_error():
    img = _image(np.zeros((4, 4, 4)), (0.5, 0.5, 0.5))
    with pytest.raises(DataError, match="degenerate"):
        resample_image(img, ResampleSpec(target_spacing=(10.0, 10.0, 10.0)))


def test_labelmap_identity_spacing():
    rng = np.random.default_rng(1)
    data = rng.integers(0, 4, size=(8, 8, 8))
    labels = LabelVolume(data, spacing=(0.7, 0.7, 0.7))
    out = resample_labelmap(labels, ResampleSpec(target_spacing=(0.7, 0.7, 0.7)))
    assert np.array_equal(out.data, labels.data)


def test_labelmap_solid_block_interior_stable():
    data = np.zeros((12, 12, 12), dtype=np.int32)
    data[3:9, 3:9, 3:9] = 5
    labels = LabelVolume(data, spacing=(1.0, 1.0, 1.0))
    for target in [(0.5, 0.5, 0.5), (2.0, 2.0, 2.0)]:
        out = resample_labelmap(labels, ResampleSpec(target_spacing=target))
        assert set(np.unique(out.data)) <= {0, 5}
        # block center stays labeled
        c = tuple(d // 2 for d in out.dims)
        assert out.data[c] == 5


def test_labelmap_never_invents_labels():
    rng = np.random.default_rng(9)
    data = rng.choice([0, 2, 7, 36], size=(10, 10, 10))
    labels = LabelVolume(data, spacing=(1.0, 1.0, 1.0))
    out = resample_labelmap(labels, ResampleSpec(target_spacing=(0.62, 0.85, 1.3)))
    assert out.label_domain <= labels.label_domain


def test_halfspace_roundtrip_agreement():
    # two-label 32^3 half-space phantom: 0.7 -> 0.35 -> 0.7 mm
    data = np.ones((32, 32, 32), dtype=np.int32)
    data[16:, :, :] = 2
    labels = LabelVolume(data, spacing=(0.7, 0.7, 0.7))
    up = resample_labelmap(labels, ResampleSpec(target_spacing=(0.35, 0.35, 0.35)))
    assert up.dims == (64, 64, 64)
    back = resample_labelmap(up, ResampleSpec(target_spacing=(0.7, 0.7, 0.7)))
    assert back.dims == labels.dims
    agreement = np.mean(back.data == labels.data)
    assert agreement >= 0.99


def test_onehot_weights_partition_unity():
    rng = np.random.default_rng(3)
    data = rng.integers(0, 5, size=(6, 6, 6))
    labels = LabelVolume(data, spacing=(1.0, 1.0, 1.0))
    total = np.zeros((9, 9, 9), dtype=np.float64)
    for lab in sorted(labels.label_domain):
        chan = (labels.data == lab).astype(np.float64)
        total += resize_grid(chan, (9, 9, 9), kernel="linear")
    assert np.allclose(total, 1.0, atol=1e-6)


def test_resize_grid_constant_and_identity():
    rng = np.random.default_rng(5)
    grid = rng.random((5, 6, 7))
    assert np.allclose(resize_grid(grid, (5, 6, 7)), grid, atol=1e-12)
    assert np.allclose(resize_grid(np.full((4, 4, 4), 2.0), (11, 3, 9)), 2.0,
                       atol=1e-9)
