"""Domain-randomization generative model for synthetic training pairs.

From a prepared label map, each sample draws a random affine (rotation,
scale, shear, translation), a smooth random displacement field, per-label
Gaussian intensity statistics, a smooth multiplicative bias field, and a
gamma exponent, producing a synthetic image plus the deformed label map it
was synthesized from. All randomization priors live in
:class:`GenerativeConfig`; every draw comes from counter-based Philox
streams, so a sample is a pure function of ``(labels, config, seed)``
regardless of scheduling or thread count.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import DataError
from .labelprep import EXTRA_CEREBRAL_LABEL
from .resample import resize_grid
from .volume import MAX_LABEL, LabelVolume, ScalarVolume

__all__ = [
    "GenerativeConfig",
    "AffineSample",
    "DeformationField",
    "IntensityPrior",
    "sample_affine",
    "sample_nonlinear_field",
    "deform_labelmap",
    "sample_intensity_prior",
    "sample_intensities",
    "apply_bias_field",
    "apply_gamma",
    "finalize_pair",
    "generate_sample",
    "sample_seed_sequence",
]


@dataclass(frozen=True)
class GenerativeConfig:
    """Randomization priors; intervals are inclusive bounds for uniform draws.

    Rotations are in degrees, translations and the deformation bound in mm,
    intensity statistics assume a [0, 255] sampling range. ``b_B`` bounds the
    log-amplitude of the multiplicative bias field and ``sigma2_gamma`` is
    the variance of the log-gamma exponent. The two control-grid sizes govern
    how coarse the random fields are before smooth upsampling.
    """

    a_rot: float = -20.0
    b_rot: float = 20.0
    a_sc: float = 0.8
    b_sc: float = 1.2
    a_sh: float = -0.015
    b_sh: float = 0.015
    a_tr: float = -30.0
    b_tr: float = 30.0
    b_nonlin: float = 4.0
    a_mu: float = 0.0
    b_mu: float = 255.0
    a_sigma: float = 0.0
    b_sigma: float = 35.0
    b_B: float = 0.9
    sigma2_gamma: float = 0.4
    nonlin_ctrl: int = 10
    bias_ctrl: int = 4

    def __post_init__(self):
        for lo, hi in (("a_rot", "b_rot"), ("a_sc", "b_sc"), ("a_sh", "b_sh"),
                       ("a_tr", "b_tr"), ("a_mu", "b_mu"), ("a_sigma", "b_sigma")):
            if getattr(self, lo) > getattr(self, hi):
                raise DataError(f"config requires {lo} <= {hi}")
        for name in ("b_nonlin", "b_B", "sigma2_gamma", "a_sigma"):
            if getattr(self, name) < 0:
                raise DataError(f"config requires {name} >= 0")
        for name in ("nonlin_ctrl", "bias_ctrl"):
            if getattr(self, name) < 2:
                raise DataError(f"config requires {name} >= 2")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "GenerativeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise DataError(f"unknown generative config key: {sorted(unknown)[0]!r}")
        return cls(**mapping)

    @classmethod
    def from_file(cls, path) -> "GenerativeConfig":
        return cls.from_mapping(_load_config_mapping(path))

    def to_dict(self) -> dict:
        return asdict(self)


def _load_config_mapping(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except Exception as exc:
            raise DataError(f"invalid TOML config {path}: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except Exception as exc:
        raise DataError(f"invalid JSON config {path}: {exc}") from exc


@dataclass(frozen=True)
class AffineSample:
    """One random spatial transform.

    ``matrix`` is the 4x4 composition ``T @ Rx @ Ry @ Rz @ Shear @ Scale``
    acting on volume-center-relative mm coordinates (backward convention: it
    maps output positions to source positions).
    """

    rotation_deg: Tuple[float, float, float]
    scale: Tuple[float, float, float]
    shear: Tuple[float, float, float]
    translation_mm: Tuple[float, float, float]
    matrix: np.ndarray = field(repr=False, default=None)

    @staticmethod
    def compose(rotation_deg, scale, shear, translation_mm) -> np.ndarray:
        rx, ry, rz = (math.radians(a) for a in rotation_deg)
        cx, sx = math.cos(rx), math.sin(rx)
        cy, sy = math.cos(ry), math.sin(ry)
        cz, sz = math.cos(rz), math.sin(rz)
        Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]], dtype=float)
        Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]], dtype=float)
        Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]], dtype=float)
        Sh = np.array([[1, shear[0], shear[1]],
                       [0, 1, shear[2]],
                       [0, 0, 1]], dtype=float)
        Sc = np.diag(np.asarray(scale, dtype=float))
        out = np.eye(4)
        out[:3, :3] = Rx @ Ry @ Rz @ Sh @ Sc
        out[:3, 3] = translation_mm
        return out


def sample_affine(cfg: GenerativeConfig, rng: np.random.Generator) -> AffineSample:
    """Uniform per-axis draw of rotation/scale/shear/translation."""
    rot = tuple(rng.uniform(cfg.a_rot, cfg.b_rot, 3))
    sc = tuple(rng.uniform(cfg.a_sc, cfg.b_sc, 3))
    sh = tuple(rng.uniform(cfg.a_sh, cfg.b_sh, 3))
    tr = tuple(rng.uniform(cfg.a_tr, cfg.b_tr, 3))
    return AffineSample(rot, sc, sh, tr, AffineSample.compose(rot, sc, sh, tr))


@dataclass(frozen=True)
class DeformationField:
    """Per-voxel displacement vectors in mm, plus the control-grid size."""

    displacement: np.ndarray  # (nx, ny, nz, 3) float32
    ctrl_dims: Tuple[int, int, int]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.displacement.shape[:3]


def sample_nonlinear_field(cfg: GenerativeConfig, rng: np.random.Generator,
                           dims, spacing=None) -> DeformationField:
    """Smooth random displacement field.

    A coarse grid of i.i.d. Gaussian 3-vectors (per-axis std drawn uniformly
    from [0, b_nonlin] mm) is upsampled with the separable cubic kernel to
    the full grid.
    """
    dims = tuple(int(d) for d in dims)
    c = cfg.nonlin_ctrl
    stds = rng.uniform(0.0, cfg.b_nonlin, 3)
    ctrl = (rng.standard_normal((c, c, c, 3)) * stds).astype(np.float32)
    disp = np.empty(dims + (3,), dtype=np.float32)
    for i in range(3):
        disp[..., i] = resize_grid(ctrl[..., i], dims, kernel="cubic")
    return DeformationField(disp, (c, c, c))


def deform_labelmap(labels: LabelVolume, aff: AffineSample,
                    deformation: Optional[DeformationField]) -> LabelVolume:
    """Backward nearest-neighbor warp of a label map.

    The output voxel at grid position x takes the label found at source
    position ``aff(x + displacement(x))``, both expressed in mm relative to
    the volume center; sources falling outside the grid map to label 0.
    """
    dims = labels.dims
    spacing = np.asarray(labels.spacing, dtype=np.float32)
    if deformation is not None and deformation.dims != dims:
        raise DataError(f"deformation field dims {deformation.dims} do not "
                        f"match labels {dims}")
    center = (np.asarray(dims, dtype=np.float32) - 1.0) / 2.0 * spacing

    axes = [(np.arange(n, dtype=np.float32) * s - c)
            for n, s, c in zip(dims, spacing, center)]
    px = axes[0][:, None, None]
    py = axes[1][None, :, None]
    pz = axes[2][None, None, :]
    if deformation is not None:
        px = px + deformation.displacement[..., 0]
        py = py + deformation.displacement[..., 1]
        pz = pz + deformation.displacement[..., 2]

    M = aff.matrix[:3, :3].astype(np.float32)
    t = aff.matrix[:3, 3].astype(np.float32)
    out = np.zeros(dims, dtype=np.uint16)
    inside = None
    src_idx = []
    for r in range(3):
        s = M[r, 0] * px + M[r, 1] * py + M[r, 2] * pz + t[r]
        idx = np.floor((s + center[r]) / spacing[r] + 0.5).astype(np.int32)
        ok = (idx >= 0) & (idx < dims[r])
        inside = ok if inside is None else (inside & ok)
        src_idx.append(idx)
    ii, jj, kk = (np.clip(idx, 0, d - 1) for idx, d in zip(src_idx, dims))
    out[inside] = labels.data[ii[inside], jj[inside], kk[inside]]
    return LabelVolume(out, affine=labels.affine)


@dataclass(frozen=True)
class IntensityPrior:
    """Per-label Gaussian statistics: mean and std per label index."""

    labels: Tuple[int, ...]
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if len(self.labels) != len(self.mu) or len(self.labels) != len(self.sigma):
            raise DataError("intensity prior arrays must align with labels")

    def lookup_tables(self) -> Tuple[np.ndarray, np.ndarray]:
        """(mu_lut, sigma_lut) indexable by label value; NaN for labels
        without an entry."""
        size = max(self.labels) + 1
        mu = np.full(size, np.nan, dtype=np.float32)
        sg = np.full(size, np.nan, dtype=np.float32)
        mu[list(self.labels)] = self.mu
        sg[list(self.labels)] = self.sigma
        return mu, sg


def sample_intensity_prior(cfg: GenerativeConfig,
                           rng: np.random.Generator) -> IntensityPrior:
    """Uniform draw of (mu, sigma) for every label index 0..36.

    Always draws the full table so the stream position does not depend on
    which labels happen to be present.
    """
    n = MAX_LABEL + 1
    mu = rng.uniform(cfg.a_mu, cfg.b_mu, n).astype(np.float32)
    sigma = rng.uniform(cfg.a_sigma, cfg.b_sigma, n).astype(np.float32)
    return IntensityPrior(tuple(range(n)), mu, sigma)


def _minmax(data: np.ndarray) -> np.ndarray:
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        return np.zeros_like(data)
    return (data - lo) / np.float32(hi - lo)


def sample_intensities(labels: LabelVolume, prior: IntensityPrior,
                       rng: np.random.Generator,
                       normalize: bool = True) -> ScalarVolume:
    """Per-voxel draw from the label's Normal(mu, sigma), then min-max
    normalization to [0, 1] (skipped when ``normalize`` is False)."""
    missing = labels.label_domain - set(prior.labels)
    if missing:
        raise DataError(f"label without prior entry: {sorted(missing)[0]}")
    mu_lut, sg_lut = prior.lookup_tables()
    z = rng.standard_normal(labels.dims, dtype=np.float32)
    raw = mu_lut[labels.data] + sg_lut[labels.data] * z
    return ScalarVolume(_minmax(raw) if normalize else raw, affine=labels.affine)


def apply_bias_field(img: ScalarVolume, cfg: GenerativeConfig,
                     rng: np.random.Generator,
                     control: Optional[np.ndarray] = None) -> ScalarVolume:
    """Multiply by a smooth exponentiated random field.

    A coarse Gaussian control grid (std drawn uniformly from [0, b_B]) is
    cubically upsampled and exponentiated; positive voxels stay positive.
    ``control`` substitutes the sampled control grid, for reproducing a
    known field.
    """
    if control is None:
        std = rng.uniform(0.0, cfg.b_B)
        c = cfg.bias_ctrl
        control = rng.standard_normal((c, c, c)) * std
    logf = resize_grid(np.asarray(control, dtype=np.float32), img.dims,
                       kernel="cubic")
    return img.with_data(img.data * np.exp(logf))


def apply_gamma(img: ScalarVolume, cfg: GenerativeConfig,
                rng: np.random.Generator,
                log_gamma: Optional[float] = None) -> ScalarVolume:
    """Monotone gamma transform ``img ** exp(g)`` with g ~ N(0, sigma2_gamma).

    Input intensities must lie in [0, 1]. ``log_gamma`` forces g.
    """
    data = img.data
    if data.size and (data.min() < -1e-6 or data.max() > 1.0 + 1e-6):
        raise DataError("gamma transform requires intensities in [0, 1]")
    g = rng.normal(0.0, math.sqrt(cfg.sigma2_gamma)) if log_gamma is None else log_gamma
    out = np.clip(data, 0.0, 1.0) ** np.float32(math.exp(g))
    return img.with_data(out)


def finalize_pair(img: ScalarVolume, deformed: LabelVolume):
    """Strip the extra-cerebral label from the training target.

    The synthetic image keeps the signal generated for label 36; the target
    label map has those voxels set to background.
    """
    if img.dims != deformed.dims:
        raise DataError(f"image {img.dims} and labels {deformed.dims} differ")
    target = np.array(deformed.data)
    target[target == EXTRA_CEREBRAL_LABEL] = 0
    return img, LabelVolume(target, affine=deformed.affine)


def sample_seed_sequence(master_seed: int, subject: str, index: int) -> np.random.SeedSequence:
    """Stable per-sample seed stream from (master seed, subject id, index).

    The subject id is hashed with SHA-256 so streams do not depend on
    iteration order, platform, or Python hash randomization.
    """
    digest = hashlib.sha256(str(subject).encode("utf-8")).digest()
    subject_key = int.from_bytes(digest[:8], "little")
    return np.random.SeedSequence(entropy=int(master_seed),
                                  spawn_key=(subject_key, int(index)))


def _stage_rngs(seed, n: int):
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(n)]


def generate_sample(labels: LabelVolume, cfg: GenerativeConfig, seed):
    """One synthetic (image, target) training pair.

    Pipeline: random affine -> random displacement field -> nearest-neighbor
    label warp -> per-label Gaussian intensities (including extra-cerebral)
    -> bias field -> gamma, with min-max normalization keeping intensities
    in [0, 1]; finally the extra-cerebral label is removed from the target.
    Deterministic in ``(labels, cfg, seed)``; ``seed`` may be an int or a
    ``numpy.random.SeedSequence`` (see :func:`sample_seed_sequence`).
    """
    r_aff, r_field, r_prior, r_noise, r_bias, r_gamma = _stage_rngs(seed, 6)
    aff = sample_affine(cfg, r_aff)
    deformation = sample_nonlinear_field(cfg, r_field, labels.dims, labels.spacing)
    warped = deform_labelmap(labels, aff, deformation)
    prior = sample_intensity_prior(cfg, r_prior)
    img = sample_intensities(warped, prior, r_noise)
    img = apply_bias_field(img, cfg, r_bias)
    img = img.with_data(_minmax(img.data))
    img = apply_gamma(img, cfg, r_gamma)
    img = img.with_data(_minmax(img.data))
    return finalize_pair(img, warped)
