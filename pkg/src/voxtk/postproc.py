"""Inference post-processing: softmax ensembling and largest-component cleanup.

Probability stacks from several models are averaged voxelwise before the
argmax decision. Keeping only the largest 26-connected component of a label
is validation-gated: a label enters the policy only when doing so strictly
improves its mean overlap score on (ground truth, prediction) pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError
from .metrics import dsc
from .volume import LabelVolume, read_probability_stack

__all__ = [
    "ProbabilityStack",
    "PostprocPolicy",
    "ensemble",
    "largest_component",
    "apply_policy",
    "select_policy",
]

_STRUCT26 = np.ones((3, 3, 3), dtype=bool)


class ProbabilityStack:
    """Per-label probability volumes with shared geometry.

    ``probs`` has shape (nx, ny, nz, L); channel i holds the probability of
    ``labels[i]``. Per-voxel probabilities must be non-negative and sum to 1
    within 1e-4.
    """

    def __init__(self, probs: np.ndarray, affine: np.ndarray,
                 labels: Sequence[int] = None):
        probs = np.asfortranarray(probs, dtype=np.float32)
        if probs.ndim != 4:
            raise DataError(f"probability stack must be 4D, got {probs.shape}")
        if labels is None:
            labels = range(probs.shape[3])
        labels = tuple(int(l) for l in labels)
        if len(labels) != probs.shape[3]:
            raise DataError("label list does not match probability channels")
        if list(labels) != sorted(set(labels)):
            raise DataError("labels must be strictly increasing")
        if probs.size:
            if float(probs.min()) < -1e-6:
                raise DataError("probabilities must be non-negative")
            sums = probs.sum(axis=3)
            worst = float(np.abs(sums - 1.0).max())
            if worst > 1e-4:
                raise DataError(f"per-voxel probabilities must sum to 1 "
                                f"(worst deviation {worst:.2e})")
        self.probs = probs
        self.affine = np.array(affine, dtype=float)
        self.labels = labels

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.probs.shape[:3]

    @classmethod
    def from_file(cls, path) -> "ProbabilityStack":
        probs, affine = read_probability_stack(path)
        return cls(probs, affine)


def ensemble(stacks: Sequence[ProbabilityStack]) -> LabelVolume:
    """Voxelwise mean of the stacks, then argmax (ties to the lowest label)."""
    if len(stacks) == 0:
        raise DataError("ensemble requires at least one probability stack")
    first = stacks[0]
    for other in stacks[1:]:
        if other.dims != first.dims or not np.allclose(other.affine, first.affine,
                                                       atol=1e-4):
            raise DataError("probability stacks have mismatched geometry")
        if other.labels != first.labels:
            raise DataError("probability stacks have mismatched label sets")
    mean = stacks[0].probs.astype(np.float64)
    for other in stacks[1:]:
        mean += other.probs
    mean /= len(stacks)
    # channels are sorted ascending, so argmax resolves ties toward the
    # lowest label index
    winner = np.argmax(mean, axis=3)
    out = np.asarray(first.labels, dtype=np.uint16)[winner]
    return LabelVolume(out, affine=first.affine)


def _component_sizes(binary: np.ndarray):
    comps, n = ndimage.label(binary, structure=_STRUCT26)
    sizes = np.bincount(comps.ravel())
    sizes[0] = 0
    return comps, n, sizes


def largest_component(labels: LabelVolume, label: int) -> LabelVolume:
    """Erase all but the largest 26-connected component of one label.

    Removed voxels become background. Among equally large components the one
    whose first voxel comes earliest in x-fastest scan order wins. A label
    with no voxels or a single component is returned unchanged.
    """
    binary = labels.data == label
    if not binary.any():
        return labels
    comps, n, sizes = _component_sizes(binary)
    if n <= 1:
        return labels
    biggest = int(sizes.max())
    cands = np.flatnonzero(sizes == biggest)
    if len(cands) == 1:
        keep = int(cands[0])
    else:
        flat = comps.ravel(order="F")
        hits = np.flatnonzero(np.isin(flat, cands))
        keep = int(flat[hits[0]])
    out = np.array(labels.data)
    out[binary & (comps != keep)] = 0
    return LabelVolume(out, affine=labels.affine)


@dataclass(frozen=True)
class PostprocPolicy:
    """Labels for which keep-largest-component is enabled."""

    enabled: frozenset

    def __post_init__(self):
        enabled = frozenset(int(l) for l in self.enabled)
        if not enabled <= set(range(1, 36)):
            raise DataError("policy labels must be a subset of 1..35")
        object.__setattr__(self, "enabled", enabled)

    def to_json(self) -> str:
        return json.dumps(sorted(self.enabled))

    @classmethod
    def from_json(cls, text: str) -> "PostprocPolicy":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"invalid policy JSON: {exc}") from exc
        if not isinstance(data, list):
            raise DataError("policy JSON must be a list of label indices")
        return cls(frozenset(data))


def apply_policy(labels: LabelVolume, policy: PostprocPolicy) -> LabelVolume:
    """Keep-largest-component for every label enabled in the policy."""
    out = labels
    for label in sorted(policy.enabled):
        out = largest_component(out, label)
    return out


def select_policy(validation_pairs: Sequence[Tuple[LabelVolume, LabelVolume]]
                  ) -> PostprocPolicy:
    """Enable keep-largest per label iff it strictly improves mean DSC.

    ``validation_pairs`` holds (ground truth, prediction) volumes. For every
    candidate label the mean DSC across pairs is compared with and without
    the cleanup; ties leave the label disabled.
    """
    if len(validation_pairs) == 0:
        raise DataError("select_policy requires a nonempty validation set")
    candidates = set()
    for gt, pred in validation_pairs:
        if gt.dims != pred.dims:
            raise DataError("validation pair geometry mismatch")
        candidates |= (gt.label_domain | pred.label_domain)
    candidates = sorted(candidates & set(range(1, 36)))

    enabled = []
    for label in candidates:
        raw_scores = []
        cleaned_scores = []
        for gt, pred in validation_pairs:
            g = gt.data == label
            raw_scores.append(dsc(g, pred.data == label))
            cleaned = largest_component(pred, label)
            cleaned_scores.append(dsc(g, cleaned.data == label))
        if np.mean(cleaned_scores) > np.mean(raw_scores):
            enabled.append(label)
    return PostprocPolicy(frozenset(enabled))
