"""Volumetric data model, orientation handling, and NIfTI-1 file I/O.

Volumes couple a dense 3D array with a 4x4 voxel-to-world affine (RAS+ world
axes, millimeters). Voxel spacing and the axis-code orientation (e.g. ``LIA``,
``RAS``) are derived from the affine. The in-memory convention is index order
``[x, y, z]`` with x fastest (Fortran layout), matching the on-disk layout of
NIfTI files.

Volumes are immutable after construction and safe to share across workers;
the held array is marked read-only and every operation returns a new volume.
"""
from __future__ import annotations

import gzip
import struct
import warnings
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from .errors import DataError

__all__ = [
    "ScalarVolume",
    "LabelVolume",
    "MAX_LABEL",
    "axcodes_from_affine",
    "validate_axcodes",
    "read_volume",
    "write_volume",
    "reorient",
    "same_geometry",
]

# Highest label index the toolkit knows about (extra-cerebral tissue).
MAX_LABEL = 36

# World axis letters for positive / negative direction, RAS+ convention.
_POS_CODES = "RAS"
_NEG_CODES = "LPI"

_CODE_TO_AXIS = {
    "R": (0, 1), "L": (0, -1),
    "A": (1, 1), "P": (1, -1),
    "S": (2, 1), "I": (2, -1),
}


def validate_axcodes(code) -> Tuple[str, str, str]:
    """Validate an orientation code such as ``"LIA"``; returns the 3 letters.

    One letter is required from each anatomical pair (L/R, A/P, I/S), one per
    data axis, no repeated world axis.
    """
    if isinstance(code, str):
        letters = tuple(code.upper())
    else:
        letters = tuple(str(c).upper() for c in code)
    if len(letters) != 3 or any(c not in _CODE_TO_AXIS for c in letters):
        raise DataError(f"invalid orientation code: {code!r}")
    axes = [_CODE_TO_AXIS[c][0] for c in letters]
    if sorted(axes) != [0, 1, 2]:
        raise DataError(f"orientation code must name each anatomical axis once: {code!r}")
    return letters


def axcodes_from_affine(affine: np.ndarray, obliquity_tol: float = 1e-4) -> str:
    """Nearest axis codes for each data axis of a voxel-to-world affine.

    Each column of the 3x3 direction block is snapped to its
    largest-magnitude world axis. Oblique affines (off-axis components above
    ``obliquity_tol`` of the column norm) are snapped with a warning.
    """
    R = np.asarray(affine, dtype=float)[:3, :3]
    codes = []
    taken = []
    for j in range(3):
        col = R[:, j]
        norm = np.linalg.norm(col)
        if not np.isfinite(norm) or norm == 0.0:
            raise DataError("degenerate affine: zero or non-finite direction column")
        r = int(np.argmax(np.abs(col)))
        if r in taken:
            raise DataError("degenerate affine: two axes map to the same world axis")
        taken.append(r)
        off = np.delete(np.abs(col), r)
        if off.max() > obliquity_tol * norm:
            warnings.warn(
                "oblique affine snapped to nearest axis codes; "
                "world geometry is only approximate",
                stacklevel=2,
            )
        codes.append(_POS_CODES[r] if col[r] > 0 else _NEG_CODES[r])
    return "".join(codes)


def _affine_from_spacing(spacing) -> np.ndarray:
    aff = np.eye(4)
    aff[0, 0], aff[1, 1], aff[2, 2] = spacing
    return aff


def _check_spacing(spacing) -> Tuple[float, float, float]:
    s = tuple(float(v) for v in spacing)
    if len(s) != 3 or any(not np.isfinite(v) or v <= 0 for v in s):
        raise DataError(f"spacing must be 3 positive reals, got {spacing!r}")
    return s


class ScalarVolume:
    """3D float32 intensity grid with voxel-to-world affine geometry.

    Construct from ``data`` plus either a 4x4 ``affine`` or a ``spacing``
    triple (axis-aligned RAS affine is assumed then). The held array is
    marked read-only; treat volumes as immutable values.
    """

    def __init__(self, data, affine=None, spacing=None):
        raw = np.asarray(data)
        if raw.ndim != 3 or min(raw.shape) < 1:
            raise DataError(f"volume data must be 3D, got shape {raw.shape}")
        arr = self._coerce(raw)
        if affine is None:
            sp = _check_spacing(spacing) if spacing is not None else (1.0, 1.0, 1.0)
            affine = _affine_from_spacing(sp)
        else:
            affine = np.array(affine, dtype=float)
            if affine.shape != (4, 4) or not np.all(np.isfinite(affine)):
                raise DataError("affine must be a finite 4x4 matrix")
        arr.flags.writeable = False
        affine.flags.writeable = False
        self._data = arr
        self._affine = affine

    def _coerce(self, raw: np.ndarray) -> np.ndarray:
        return np.asfortranarray(raw, dtype=np.float32)

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def affine(self) -> np.ndarray:
        return self._affine

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self._data.shape

    @property
    def spacing(self) -> Tuple[float, float, float]:
        R = self._affine[:3, :3]
        return tuple(float(np.linalg.norm(R[:, j])) for j in range(3))

    @property
    def orientation(self) -> str:
        return axcodes_from_affine(self._affine)

    def voxel_to_world(self, ijk: np.ndarray) -> np.ndarray:
        """Map voxel indices (..., 3) to world mm coordinates (..., 3)."""
        ijk = np.asarray(ijk, dtype=float)
        return ijk @ self._affine[:3, :3].T + self._affine[:3, 3]

    def with_data(self, data: np.ndarray, affine: np.ndarray = None):
        """New volume of the same class, reusing this geometry by default."""
        return type(self)(data, affine=self._affine if affine is None else affine)

    def __repr__(self):
        sp = ", ".join(f"{v:g}" for v in self.spacing)
        return (f"{type(self).__name__}(dims={self.dims}, spacing=({sp}) mm, "
                f"orientation={self.orientation})")


class LabelVolume(ScalarVolume):
    """3D non-negative integer label grid; indices limited to 0..MAX_LABEL."""

    def _coerce(self, raw: np.ndarray) -> np.ndarray:
        if not np.issubdtype(raw.dtype, np.integer):
            rounded = np.rint(raw)
            if not np.allclose(raw, rounded, atol=1e-6, equal_nan=False):
                raise DataError("label data must be integer-valued")
            raw = rounded
        if raw.size and (raw.min() < 0 or raw.max() > MAX_LABEL):
            raise DataError(
                f"label values must lie in 0..{MAX_LABEL}, "
                f"found range {int(raw.min())}..{int(raw.max())}"
            )
        return np.asfortranarray(raw, dtype=np.uint16)

    @property
    def label_domain(self) -> frozenset:
        domain = getattr(self, "_domain", None)
        if domain is None:
            counts = np.bincount(self._data.ravel(), minlength=MAX_LABEL + 1)
            domain = frozenset(int(i) for i in np.flatnonzero(counts))
            self._domain = domain
        return domain


Volume = Union[ScalarVolume, LabelVolume]


def same_geometry(a: ScalarVolume, b: ScalarVolume, tol: float = 1e-4) -> bool:
    return a.dims == b.dims and np.allclose(a.affine, b.affine, atol=tol)


def require_same_geometry(a: ScalarVolume, b: ScalarVolume, what: str = "volumes"):
    if not same_geometry(a, b):
        raise DataError(f"geometry mismatch between {what}: dims {a.dims} vs {b.dims}")


# ---------------------------------------------------------------------------
# Reorientation

def reorient(vol: Volume, target) -> Volume:
    """Permute/flip a volume's axes so its orientation matches ``target``.

    No interpolation happens; the data multiset and the world position of
    every voxel are unchanged.
    """
    letters = validate_axcodes(target)
    cur = axcodes_from_affine(vol.affine)
    if "".join(letters) == cur:
        return vol

    cur_axes = [_CODE_TO_AXIS[c] for c in cur]          # per data axis: (world, sign)
    world_to_old = {world: (j, sign) for j, (world, sign) in enumerate(cur_axes)}

    perm = []
    flips = []
    for c in letters:
        world, want_sign = _CODE_TO_AXIS[c]
        j, have_sign = world_to_old[world]
        perm.append(j)
        flips.append(have_sign != want_sign)

    data = np.transpose(vol.data, perm)
    for a, f in enumerate(flips):
        if f:
            data = np.flip(data, axis=a)

    # old_index = T @ new_index in homogeneous coordinates
    T = np.zeros((4, 4))
    T[3, 3] = 1.0
    for a, (j, f) in enumerate(zip(perm, flips)):
        if f:
            T[j, a] = -1.0
            T[j, 3] = vol.dims[j] - 1
        else:
            T[j, a] = 1.0
    affine = vol.affine @ T
    return type(vol)(data, affine=affine)


# ---------------------------------------------------------------------------
# NIfTI-1 I/O
#
# Single-file .nii / .nii.gz, NIfTI-1 header (348 bytes). Fields honored:
# dim, pixdim, datatype, scl_slope/inter, sform and qform affines. Written
# files always populate the sform.

_DTYPES = {
    2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64,
    256: np.int8, 512: np.uint16, 768: np.uint32, 1024: np.int64, 1280: np.uint64,
}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}
_HDR_SIZE = 348


def _read_file_bytes(path) -> bytes:
    # gzip detected by content, not filename
    with Path(path).open("rb") as f:
        blob = f.read()
    if blob[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(blob)
        except (OSError, EOFError) as exc:
            raise DataError(f"unreadable file {path}: {exc}") from exc
    return blob


def _quaternion_affine(hdr) -> np.ndarray:
    b, c, d = hdr["quatern"]
    a = max(0.0, 1.0 - b * b - c * c - d * d) ** 0.5
    R = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ])
    qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
    zoom = np.array([hdr["pixdim"][1], hdr["pixdim"][2], hdr["pixdim"][3] * qfac])
    aff = np.eye(4)
    aff[:3, :3] = R * zoom
    aff[:3, 3] = hdr["qoffset"]
    return aff


def _parse_header(buf: bytes) -> dict:
    if len(buf) < _HDR_SIZE:
        raise DataError("unreadable file: truncated NIfTI header")
    for order in ("<", ">"):
        if struct.unpack(order + "i", buf[0:4])[0] == _HDR_SIZE:
            break
    else:
        raise DataError("unreadable file: not a NIfTI-1 volume")
    magic = buf[344:348]
    if magic[:2] not in (b"n+", b"ni"):
        raise DataError("unreadable file: bad NIfTI magic")
    return {
        "order": order,
        "dim": struct.unpack(order + "8h", buf[40:56]),
        "datatype": struct.unpack(order + "h", buf[70:72])[0],
        "pixdim": struct.unpack(order + "8f", buf[76:108]),
        "vox_offset": struct.unpack(order + "f", buf[108:112])[0],
        "scl_slope": struct.unpack(order + "f", buf[112:116])[0],
        "scl_inter": struct.unpack(order + "f", buf[116:120])[0],
        "qform_code": struct.unpack(order + "h", buf[252:254])[0],
        "sform_code": struct.unpack(order + "h", buf[254:256])[0],
        "quatern": struct.unpack(order + "3f", buf[256:268]),
        "qoffset": struct.unpack(order + "3f", buf[268:280]),
        "srow": np.array(struct.unpack(order + "12f", buf[280:328])).reshape(3, 4),
    }


def _read_nifti(path) -> Tuple[np.ndarray, np.ndarray]:
    """Raw (data, affine) from a NIfTI-1 file; data keeps its file dimensionality."""
    try:
        buf = _read_file_bytes(path)
    except OSError as exc:
        raise DataError(f"unreadable file {path}: {exc}") from exc

    hdr = _parse_header(buf)
    ndim = hdr["dim"][0]
    if not 1 <= ndim <= 7:
        raise DataError(f"unreadable file: bad dim[0]={ndim}")
    shape = tuple(int(v) for v in hdr["dim"][1:1 + ndim])
    if any(v < 1 for v in shape):
        raise DataError(f"unreadable file: non-positive dimension in {shape}")

    if hdr["datatype"] not in _DTYPES:
        raise DataError(f"unsupported NIfTI datatype code {hdr['datatype']}")
    dtype = np.dtype(_DTYPES[hdr["datatype"]]).newbyteorder(hdr["order"])

    offset = int(hdr["vox_offset"]) if hdr["vox_offset"] >= _HDR_SIZE else _HDR_SIZE + 4
    count = int(np.prod(shape))
    expected = offset + count * dtype.itemsize
    if len(buf) < expected:
        raise DataError(f"unreadable file {path}: truncated voxel data")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F")

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope not in (0.0, 1.0) or inter != 0.0:
        data = data * (slope if slope != 0.0 else 1.0) + inter

    if hdr["sform_code"] > 0:
        affine = np.eye(4)
        affine[:3, :] = hdr["srow"]
    elif hdr["qform_code"] > 0:
        affine = _quaternion_affine(hdr)
    else:
        affine = _affine_from_spacing([max(p, 1e-6) for p in hdr["pixdim"][1:4]])
    if not np.all(np.isfinite(affine)):
        raise DataError("non-finite affine in NIfTI header")
    return data, affine


def _squeeze_3d(data: np.ndarray) -> np.ndarray:
    if data.ndim < 3:
        raise DataError(f"non-3D volume: file has {data.ndim} dimensions")
    if data.ndim > 3:
        if any(s != 1 for s in data.shape[3:]):
            raise DataError(f"non-3D volume: file shape {data.shape}")
        data = data.reshape(data.shape[:3], order="F")
    return data


def read_volume(path, kind: str = "auto") -> Volume:
    """Read a NIfTI-1 volume (.nii or .nii.gz).

    ``kind`` selects the returned type: ``"image"`` for :class:`ScalarVolume`,
    ``"labels"`` for :class:`LabelVolume`, or ``"auto"`` to pick
    :class:`LabelVolume` for integer-typed files whose values fit the label
    domain.
    """
    if kind not in ("auto", "image", "labels"):
        raise DataError(f"kind must be auto|image|labels, got {kind!r}")
    data, affine = _read_nifti(path)
    data = _squeeze_3d(data)

    integral = np.issubdtype(data.dtype, np.integer)
    if kind == "labels" or (kind == "auto" and integral and data.size
                            and data.min() >= 0 and data.max() <= MAX_LABEL):
        try:
            return LabelVolume(data, affine=affine)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from exc
    return ScalarVolume(data, affine=affine)


def read_probability_stack(path) -> Tuple[np.ndarray, np.ndarray]:
    """Read a 4D NIfTI probability stack; returns (float32 array, affine).

    The 4th dimension indexes labels, starting at 0.
    """
    data, affine = _read_nifti(path)
    if data.ndim != 4:
        raise DataError(f"probability stack must be 4D, file has {data.ndim} dims")
    return np.asfortranarray(data, dtype=np.float32), affine


def _build_header(shape, dtype: np.dtype, affine: np.ndarray) -> bytes:
    code = _DTYPE_CODES[np.dtype(dtype)]
    ndim = len(shape)
    dim = [ndim] + list(shape) + [1] * (7 - ndim)
    R = np.asarray(affine, dtype=float)[:3, :3]
    zooms = [float(np.linalg.norm(R[:, j])) for j in range(3)]
    pixdim = [1.0] + zooms + [1.0] * 4

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, np.dtype(dtype).itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(_HDR_SIZE + 4))
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)          # scl_slope, scl_inter
    struct.pack_into("<B", hdr, 123, 2)                  # xyzt_units: mm
    struct.pack_into("<80s", hdr, 148, b"voxtk")
    struct.pack_into("<2h", hdr, 252, 0, 1)              # qform off, sform on
    struct.pack_into("<12f", hdr, 280, *np.asarray(affine, dtype=float)[:3, :].ravel())
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    return bytes(hdr) + b"\x00\x00\x00\x00"              # no extensions


def _write_nifti(data: np.ndarray, affine: np.ndarray, path):
    path = Path(path)
    payload = _build_header(data.shape, data.dtype, affine) + data.tobytes(order="F")
    try:
        if path.name.endswith(".gz"):
            # mtime and compression level pinned so identical volumes
            # produce identical bytes
            with path.open("wb") as raw, gzip.GzipFile(
                    fileobj=raw, mode="wb", compresslevel=6, mtime=0) as f:
                f.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def write_volume(vol: Volume, path) -> None:
    """Write a volume as single-file NIfTI-1; gzip when the name ends in .gz."""
    _write_nifti(vol.data, vol.affine, path)


def write_probability_stack(probs: np.ndarray, affine: np.ndarray, path) -> None:
    """Write per-label probabilities as 4D NIfTI (4th dim = label index)."""
    probs = np.asarray(probs, dtype=np.float32)
    if probs.ndim != 4:
        raise DataError(f"probability stack must be 4D, got shape {probs.shape}")
    _write_nifti(probs, affine, path)
