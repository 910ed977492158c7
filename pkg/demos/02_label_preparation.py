"""
Preparing label maps: closing, dilation, extra-cerebral shell
=============================================================

Whole-brain label maps get an extra-cerebral label before synthesis: the
brain mask is closed (fills interior holes), dilated by a resolution-
dependent radius, and every voxel gained by the dilation becomes label 36.
The dilated mask also skull-strips the matching intensity image.
"""
import numpy as np

from voxtk import ScalarVolume, prepare_training_labels
from voxtk.labelprep import dilation_radius_for, label_name
from voxtk.volume import LabelVolume

# a toy "brain": two nested boxes of cortex and white matter, with a hole
data = np.zeros((48, 48, 48), dtype=np.int32)
data[10:38, 10:38, 10:38] = 2    # cortex
data[18:30, 18:30, 18:30] = 1    # white matter
data[24, 24, 24] = 0             # a segmentation hole, closing will not leak
labels = LabelVolume(data, spacing=(0.7, 0.7, 0.7))
image = ScalarVolume(np.random.default_rng(1).random(labels.dims),
                     affine=labels.affine)

# the dilation radius follows the voxel size: fine grids grow one voxel more
for spacing in [(0.6,) * 3, (0.7,) * 3, (0.9,) * 3]:
    print(f"spacing {spacing[0]} mm -> dilation radius",
          dilation_radius_for(spacing))

new_labels, mask, stripped = prepare_training_labels(labels, image)

shell = new_labels.data == 36
print("\nextra-cerebral voxels:", int(shell.sum()))
print("original labels untouched:",
      np.array_equal(new_labels.data[data != 0], data[data != 0]))
print("skull-stripped background is zero:",
      float(np.abs(stripped.data[~mask.data]).max()) == 0.0)

# per-label voxel counts after preparation
for lab in sorted(new_labels.label_domain - {0}):
    count = int((new_labels.data == lab).sum())
    print(f"  label {lab:2d} {label_name(lab):30s} {count:7d} voxels")
