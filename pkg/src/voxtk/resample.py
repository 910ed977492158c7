"""Resolution conversion: cubic-spline images, one-hot trilinear label maps.

Images are resampled with a separable interpolating cubic (Catmull-Rom
weights, clamped edges); label maps by trilinear interpolation of per-label
indicator volumes followed by an argmax. The output grid is anchored so the
input and output volumes span the same world extent (voxel centers at
``(j + 0.5) * spacing`` from the common corner).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DataError
from .volume import LabelVolume, ScalarVolume

__all__ = ["ResampleSpec", "resample_image", "resample_labelmap", "resize_grid"]


@dataclass(frozen=True)
class ResampleSpec:
    """Target grid description for resolution conversion."""

    target_spacing: Tuple[float, float, float] = (0.7, 0.7, 0.7)

    def __post_init__(self):
        sp = tuple(float(v) for v in self.target_spacing)
        if len(sp) != 3 or any(v <= 0 or not np.isfinite(v) for v in sp):
            raise DataError(f"target spacing must be 3 positive reals, got "
                            f"{self.target_spacing!r}")
        object.__setattr__(self, "target_spacing", sp)


def _cubic_weights(t: np.ndarray):
    # Catmull-Rom taps at offsets -1, 0, 1, 2; interpolating, reproduces
    # constants and linear ramps exactly.
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    )


def _resize_axis(arr: np.ndarray, axis: int, m: int, step: float, kernel: str) -> np.ndarray:
    """Resample one axis to length ``m``; output center j maps to input
    coordinate (j + 0.5) * step - 0.5. Out-of-range taps clamp to the edge."""
    n = arr.shape[axis]
    u = (np.arange(m) + 0.5) * step - 0.5
    base = np.floor(u).astype(np.int64)
    t = u - base
    if kernel == "linear":
        offsets = (0, 1)
        weights = (1.0 - t, t)
    elif kernel == "cubic":
        offsets = (-1, 0, 1, 2)
        weights = _cubic_weights(t)
    else:
        raise DataError(f"unknown interpolation kernel {kernel!r}")

    work = np.moveaxis(arr, axis, 0)
    dtype = np.float32 if arr.dtype == np.float32 else np.float64
    wshape = (m,) + (1,) * (work.ndim - 1)
    out = np.zeros((m,) + work.shape[1:], dtype=dtype)
    for off, w in zip(offsets, weights):
        idx = np.clip(base + off, 0, n - 1)
        out += w.astype(dtype).reshape(wshape) * work[idx]
    return np.moveaxis(out, 0, axis)


def resize_grid(data: np.ndarray, out_dims, kernel: str = "cubic") -> np.ndarray:
    """Extent-preserving resize of a 3D grid to ``out_dims`` samples."""
    out = np.asarray(data)
    for axis, m in enumerate(out_dims):
        if m < 1:
            raise DataError(f"degenerate output dims {tuple(out_dims)}")
        out = _resize_axis(out, axis, int(m), out.shape[axis] / float(m), kernel)
    return out


def _output_dims(dims, spacing, target) -> Tuple[int, int, int]:
    out = tuple(int(np.floor(n * s / ts + 0.5))
                for n, s, ts in zip(dims, spacing, target))
    if any(m < 1 for m in out):
        raise DataError(f"degenerate output dims {out} for target spacing {target}")
    return out


def _output_affine(affine: np.ndarray, spacing, target) -> np.ndarray:
    out = np.array(affine, dtype=float)
    for j, (s, ts) in enumerate(zip(spacing, target)):
        unit = out[:3, j] / s
        out[:3, j] = unit * ts
        # keep the grid corner fixed: first voxel center shifts by half the
        # spacing change along this axis
        out[:3, 3] += unit * (ts - s) / 2.0
    return out


def resample_image(img: ScalarVolume, spec: ResampleSpec) -> ScalarVolume:
    """Separable cubic-spline resampling of an intensity volume."""
    target = spec.target_spacing
    spacing = img.spacing
    out_dims = _output_dims(img.dims, spacing, target)
    data = img.data
    for axis in range(3):
        step = target[axis] / spacing[axis]
        data = _resize_axis(data, axis, out_dims[axis], step, "cubic")
    return ScalarVolume(data, affine=_output_affine(img.affine, spacing, target))


def resample_labelmap(labels: LabelVolume, spec: ResampleSpec) -> LabelVolume:
    """One-hot trilinear resampling of a label map.

    Each label's indicator volume is interpolated to the target grid and the
    voxelwise argmax wins; ties break toward the lowest label index. No label
    outside the input domain can appear.
    """
    target = spec.target_spacing
    spacing = labels.spacing
    out_dims = _output_dims(labels.dims, spacing, target)
    steps = [target[a] / spacing[a] for a in range(3)]

    best_w = np.full(out_dims, -np.inf, dtype=np.float32)
    best_l = np.zeros(out_dims, dtype=np.uint16)
    for lab in sorted(labels.label_domain):
        chan = (labels.data == lab).astype(np.float32)
        for axis in range(3):
            chan = _resize_axis(chan, axis, out_dims[axis], steps[axis], "linear")
        better = chan > best_w
        best_w[better] = chan[better]
        best_l[better] = lab
    return LabelVolume(best_l, affine=_output_affine(labels.affine, spacing, target))
