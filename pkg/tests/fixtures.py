"""Shared synthetic fixtures for tests and the acceptance suite."""
from __future__ import annotations

import numpy as np

from voxtk.volume import LabelVolume


def make_label_phantom(dims=(48, 48, 48), n_labels: int = 8, seed: int = 0,
                       shell: bool = True, spacing=(1.0, 1.0, 1.0)) -> LabelVolume:
    """Blobby multi-label phantom: Voronoi cells of random centers inside a
    sphere, optionally wrapped in an extra-cerebral shell (label 36)."""
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    centers = rng.uniform(0.3, 0.7, size=(n_labels, 3)) * np.asarray(dims)

    grids = np.meshgrid(*(np.arange(d, dtype=np.float32) for d in dims),
                        indexing="ij")
    pos = np.stack(grids, axis=-1)
    d2 = np.stack([((pos - c) ** 2).sum(axis=-1) for c in centers])
    nearest = np.argmin(d2, axis=0).astype(np.uint16) + 1

    center = (np.asarray(dims) - 1.0) / 2.0
    r2 = ((pos - center) ** 2).sum(axis=-1)
    brain_r = 0.36 * min(dims)
    shell_r = 0.44 * min(dims)

    data = np.zeros(dims, dtype=np.uint16)
    inside = r2 <= brain_r ** 2
    data[inside] = nearest[inside]
    if shell:
        ring = (r2 > brain_r ** 2) & (r2 <= shell_r ** 2)
        data[ring] = 36
    return LabelVolume(data, spacing=spacing)
