"""voxtk: volumetric toolkit for brain-MRI segmentation workflows.

Label-map preparation with an extra-cerebral label, domain-randomized
synthetic image generation, resolution resampling, model-output ensembling
and component cleanup, overlap/surface-distance metrics, and group
volumetry statistics.
"""

__version__ = "0.1.0"

from .errors import DataError
from .genmodel import GenerativeConfig, generate_sample, sample_seed_sequence
from .labelprep import (
    EXTRA_CEREBRAL_LABEL,
    LABEL_TABLE,
    derive_brain_mask,
    prepare_training_labels,
)
from .metrics import aggregate, asd, dsc, evaluate
from .postproc import PostprocPolicy, ProbabilityStack, apply_policy, ensemble, \
    largest_component, select_policy
from .resample import ResampleSpec, resample_image, resample_labelmap
from .volume import LabelVolume, ScalarVolume, read_volume, reorient, write_volume
from .volumetry import bonferroni, mann_whitney_u, normalize, roi_volume

__all__ = [
    "DataError",
    "GenerativeConfig",
    "generate_sample",
    "sample_seed_sequence",
    "EXTRA_CEREBRAL_LABEL",
    "LABEL_TABLE",
    "derive_brain_mask",
    "prepare_training_labels",
    "aggregate",
    "asd",
    "dsc",
    "evaluate",
    "PostprocPolicy",
    "ProbabilityStack",
    "apply_policy",
    "ensemble",
    "largest_component",
    "select_policy",
    "ResampleSpec",
    "resample_image",
    "resample_labelmap",
    "LabelVolume",
    "ScalarVolume",
    "read_volume",
    "reorient",
    "write_volume",
    "bonferroni",
    "mann_whitney_u",
    "normalize",
    "roi_volume",
]
