"""Label-map preparation: brain masks, morphology, and the extra-cerebral label.

Source whole-brain label maps are turned into training-ready maps by closing
holes in the brain mask, dilating it by a resolution-dependent radius, and
assigning the voxels gained by dilation a dedicated extra-cerebral label that
stands in for residual non-brain tissue left by imperfect skull-stripping.
The same dilated mask is applied to the intensity image to produce the
skull-stripped version.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError
from .volume import LabelVolume, ScalarVolume, require_same_geometry

__all__ = [
    "LabelEntry",
    "LABEL_TABLE",
    "EXTRA_CEREBRAL_LABEL",
    "WM_HYPOINTENSITIES_LABEL",
    "BrainMask",
    "derive_brain_mask",
    "binary_closing",
    "dilation_radius_for",
    "dilate",
    "add_extracerebral_label",
    "apply_mask",
    "prepare_training_labels",
]

EXTRA_CEREBRAL_LABEL = 36
WM_HYPOINTENSITIES_LABEL = 35

# Full 3x3x3 structuring element (26-connectivity) used for both closing and
# dilation; isotropic behavior at isotropic spacing.
_STRUCT = np.ones((3, 3, 3), dtype=bool)


@dataclass(frozen=True)
class LabelEntry:
    index: int
    name: str
    hemisphere: Optional[str]  # "lh", "rh", or None


LABEL_TABLE: Tuple[LabelEntry, ...] = (
    LabelEntry(1, "Cerebral white matter", "lh"),
    LabelEntry(2, "Cerebral cortex", "lh"),
    LabelEntry(3, "Lateral Ventricle", "lh"),
    LabelEntry(4, "Inferior Lateral Ventricle", "lh"),
    LabelEntry(5, "Cerebellar White Matter", "lh"),
    LabelEntry(6, "Cerebellar Cortex", "lh"),
    LabelEntry(7, "Thalamus", "lh"),
    LabelEntry(8, "Caudate", "lh"),
    LabelEntry(9, "Putamen", "lh"),
    LabelEntry(10, "Pallidum", "lh"),
    LabelEntry(11, "3rd-Ventricle", None),
    LabelEntry(12, "4th-Ventricle", None),
    LabelEntry(13, "Brain Stem", None),
    LabelEntry(14, "Hippocampus", "lh"),
    LabelEntry(15, "Amygdala", "lh"),
    LabelEntry(16, "CSF", None),
    LabelEntry(17, "Accumbens", "lh"),
    LabelEntry(18, "Ventral DC", "lh"),
    LabelEntry(19, "Choroid Plexus", "lh"),
    LabelEntry(20, "Cerebral white matter", "rh"),
    LabelEntry(21, "Cerebral cortex", "rh"),
    LabelEntry(22, "Lateral Ventricle", "rh"),
    LabelEntry(23, "Inferior Lateral Ventricle", "rh"),
    LabelEntry(24, "Cerebellar White Matter", "rh"),
    LabelEntry(25, "Cerebellar Cortex", "rh"),
    LabelEntry(26, "Thalamus", "rh"),
    LabelEntry(27, "Caudate", "rh"),
    LabelEntry(28, "Putamen", "rh"),
    LabelEntry(29, "Pallidum", "rh"),
    LabelEntry(30, "Hippocampus", "rh"),
    LabelEntry(31, "Amygdala", "rh"),
    LabelEntry(32, "Accumbens", "rh"),
    LabelEntry(33, "Ventral DC", "rh"),
    LabelEntry(34, "Choroid Plexus", "rh"),
    LabelEntry(35, "WM-hypointensities", None),
    LabelEntry(36, "Extra-Cerebral", None),
)

_NAME_BY_INDEX = {e.index: e for e in LABEL_TABLE}


def label_name(index: int) -> str:
    entry = _NAME_BY_INDEX.get(int(index))
    if entry is None:
        raise DataError(f"unknown label index {index}")
    if entry.hemisphere:
        return f"{entry.name} ({entry.hemisphere})"
    return entry.name


class BrainMask:
    """Binary grid sharing the geometry of its source volume."""

    def __init__(self, data, affine):
        arr = np.asfortranarray(np.asarray(data).astype(bool))
        if arr.ndim != 3:
            raise DataError(f"mask must be 3D, got shape {arr.shape}")
        affine = np.array(affine, dtype=float)
        arr.flags.writeable = False
        affine.flags.writeable = False
        self.data = arr
        self.affine = affine

    @property
    def dims(self):
        return self.data.shape

    @property
    def spacing(self):
        R = self.affine[:3, :3]
        return tuple(float(np.linalg.norm(R[:, j])) for j in range(3))

    def count(self) -> int:
        return int(self.data.sum())


def derive_brain_mask(labels: LabelVolume) -> BrainMask:
    """Foreground mask of a label map: 1 exactly where the label is nonzero."""
    fg = labels.data != 0
    if not fg.any():
        raise DataError("empty segmentation: label map has no foreground")
    return BrainMask(fg, labels.affine)


def binary_closing(mask: BrainMask) -> BrainMask:
    """One 3x3x3 closing pass (dilation then erosion).

    Computed on a one-voxel zero pad so the result equals the closing on an
    unbounded background, then cropped; closing is extensive, so no input
    voxel is ever removed.
    """
    padded = np.pad(mask.data, 1)
    dil = ndimage.binary_dilation(padded, structure=_STRUCT)
    closed = ndimage.binary_erosion(dil, structure=_STRUCT)[1:-1, 1:-1, 1:-1]
    return BrainMask(closed, mask.affine)


def dilation_radius_for(spacing, fine_radius: int = 5, coarse_radius: int = 4,
                        threshold_mm: float = 0.7) -> int:
    """Dilation radius for a voxel spacing: fine grids get one extra voxel.

    Returns ``fine_radius`` when max(spacing) <= ``threshold_mm``, else
    ``coarse_radius``. All three knobs are overridable.
    """
    s = tuple(float(v) for v in spacing)
    if len(s) != 3 or any(v <= 0 or not np.isfinite(v) for v in s):
        raise DataError(f"spacing must be 3 positive reals, got {spacing!r}")
    return fine_radius if max(s) <= threshold_mm else coarse_radius


def dilate(mask: BrainMask, radius: int) -> BrainMask:
    """Chebyshev dilation by `radius` voxels (radius 3x3x3 passes), clipped at
    the grid border."""
    if radius < 0:
        raise DataError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or not mask.data.any():
        return BrainMask(mask.data, mask.affine)
    out = ndimage.binary_dilation(mask.data, structure=_STRUCT, iterations=int(radius))
    return BrainMask(out, mask.affine)


def add_extracerebral_label(labels: LabelVolume, new_mask: BrainMask) -> LabelVolume:
    """Assign the extra-cerebral label to mask voxels not covered by the map.

    Voxels where ``new_mask`` is set but the label map is background receive
    label 36; every nonzero input label is left untouched.
    """
    if labels.dims != new_mask.dims or not np.allclose(labels.affine, new_mask.affine, atol=1e-4):
        raise DataError(f"geometry mismatch between labels {labels.dims} "
                        f"and mask {new_mask.dims}")
    out = np.array(labels.data)
    out[new_mask.data & (labels.data == 0)] = EXTRA_CEREBRAL_LABEL
    return LabelVolume(out, affine=labels.affine)


def apply_mask(image: ScalarVolume, mask: BrainMask) -> ScalarVolume:
    """Zero an image outside the mask (skull-stripping by masking)."""
    if image.dims != mask.dims or not np.allclose(image.affine, mask.affine, atol=1e-4):
        raise DataError(f"geometry mismatch between image {image.dims} "
                        f"and mask {mask.dims}")
    return image.with_data(np.where(mask.data, image.data, np.float32(0.0)))


def prepare_training_labels(labels: LabelVolume, image: Optional[ScalarVolume] = None,
                            radius: Optional[int] = None):
    """Full preparation pipeline for one subject.

    Derives the brain mask, closes holes, dilates by ``radius`` (resolution
    rule when None), adds the extra-cerebral label, and masks the intensity
    image when one is given. Returns ``(new_labels, new_mask, stripped)``
    where ``stripped`` is None without an image.
    """
    if image is not None:
        require_same_geometry(labels, image, "labels and image")
    mask = derive_brain_mask(labels)
    closed = binary_closing(mask)
    if radius is None:
        radius = dilation_radius_for(labels.spacing)
    grown = dilate(closed, radius)
    new_labels = add_extracerebral_label(labels, grown)
    stripped = apply_mask(image, grown) if image is not None else None
    return new_labels, grown, stripped
