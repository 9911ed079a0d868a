"""Volumetric grid type, MetaImage codec and deterministic 3D transforms.

Volumes are stored as numpy arrays indexed [z, y, x] so that the C-order
flat layout is x-fastest, matching the MetaImage raw data convention.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


class VolumeError(Exception):
    """Problem with volumetric data or its encoding."""


class MhaDecodeError(VolumeError):
    """Malformed MetaImage stream; message names the offending header key."""


class DegenerateInputError(VolumeError):
    """Input does not carry enough information for the transform."""


_ELEMENT_TYPES = {
    "MET_FLOAT": np.float32,
    "MET_UCHAR": np.uint8,
}
_SCALAR_KINDS = {
    "float32": np.float32,
    "uint8": np.uint8,
}

# 6-connectivity: faces only, no edges or corners
_STRUCT_6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class VolumeGrid:
    """A 3D scalar lattice with physical spacing and origin (millimetres).

    ``data`` has shape (nz, ny, nx); ``dims`` is reported as (nx, ny, nz)
    to match the on-disk DimSize order.
    """

    data: np.ndarray
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise VolumeError("volume data must be 3-dimensional, got %dD" % arr.ndim)
        if arr.dtype not in (np.float32, np.uint8):
            raise VolumeError("unsupported scalar type %s" % arr.dtype)
        if any(s <= 0 for s in self.spacing_mm):
            raise VolumeError("spacing components must be positive")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def scalar_kind(self) -> str:
        return "float32" if self.data.dtype == np.float32 else "uint8"

    def with_data(self, data: np.ndarray) -> "VolumeGrid":
        return VolumeGrid(data, self.spacing_mm, self.origin_mm)

    def same_geometry(self, other: "VolumeGrid") -> bool:
        return (
            self.dims == other.dims
            and self.spacing_mm == other.spacing_mm
            and self.origin_mm == other.origin_mm
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, VolumeGrid):
            return NotImplemented
        return (
            self.data.dtype == other.data.dtype
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
            and self.spacing_mm == other.spacing_mm
            and self.origin_mm == other.origin_mm
        )


def volume_from_flat(
    flat: np.ndarray,
    dims: tuple[int, int, int],
    spacing_mm=(1.0, 1.0, 1.0),
    origin_mm=(0.0, 0.0, 0.0),
) -> VolumeGrid:
    """Build a VolumeGrid from an x-fastest flat array and (nx, ny, nz) dims."""
    nx, ny, nz = dims
    if flat.size != nx * ny * nz:
        raise VolumeError(
            "flat array length %d does not match dims %s" % (flat.size, (nx, ny, nz))
        )
    return VolumeGrid(flat.reshape(nz, ny, nx), spacing_mm, origin_mm)


# ---------------------------------------------------------------------------
# MetaImage codec (uncompressed, ElementDataFile = LOCAL)

def encode_mha(vol: VolumeGrid) -> bytes:
    nx, ny, nz = vol.dims
    element_type = "MET_FLOAT" if vol.scalar_kind == "float32" else "MET_UCHAR"
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        "DimSize = %d %d %d\n" % (nx, ny, nz)
        + "ElementSpacing = %.17g %.17g %.17g\n" % vol.spacing_mm
        + "Offset = %.17g %.17g %.17g\n" % vol.origin_mm
        + "ElementType = %s\n" % element_type
        + "ElementDataFile = LOCAL\n"
    )
    raw = np.ascontiguousarray(vol.data).astype("<f4" if vol.scalar_kind == "float32" else "u1")
    return header.encode("ascii") + raw.tobytes()


def decode_mha(blob: bytes) -> VolumeGrid:
    stream = io.BytesIO(blob)
    fields: dict[str, str] = {}
    while True:
        line = stream.readline()
        if not line:
            raise MhaDecodeError("ElementDataFile: header ended before data section")
        try:
            text = line.decode("ascii").strip()
        except UnicodeDecodeError:
            raise MhaDecodeError("header contains non-ASCII bytes") from None
        if not text:
            continue
        if "=" not in text:
            raise MhaDecodeError("malformed header line %r" % text)
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        fields[key] = value
        if key == "ElementDataFile":
            break

    if fields.get("NDims") != "3":
        raise MhaDecodeError("NDims must be 3, got %r" % fields.get("NDims"))
    if fields["ElementDataFile"] != "LOCAL":
        raise MhaDecodeError("ElementDataFile must be LOCAL")
    if fields.get("BinaryDataByteOrderMSB", "False") == "True":
        raise MhaDecodeError("BinaryDataByteOrderMSB: big-endian data not supported")
    try:
        element_type = fields["ElementType"]
    except KeyError:
        raise MhaDecodeError("ElementType missing") from None
    if element_type not in _ELEMENT_TYPES:
        raise MhaDecodeError("ElementType %r not supported" % element_type)
    dtype = _ELEMENT_TYPES[element_type]

    def _triple(key, cast, default=None):
        if key not in fields:
            if default is not None:
                return default
            raise MhaDecodeError("%s missing" % key)
        parts = fields[key].split()
        if len(parts) != 3:
            raise MhaDecodeError("%s must have 3 components" % key)
        try:
            return tuple(cast(p) for p in parts)
        except ValueError:
            raise MhaDecodeError("%s has non-numeric component" % key) from None

    nx, ny, nz = _triple("DimSize", int)
    if min(nx, ny, nz) <= 0:
        raise MhaDecodeError("DimSize components must be positive")
    spacing = _triple("ElementSpacing", float, (1.0, 1.0, 1.0))
    if min(spacing) <= 0:
        raise MhaDecodeError("ElementSpacing components must be positive")
    origin = _triple("Offset", float, (0.0, 0.0, 0.0))

    itemsize = np.dtype(dtype).itemsize
    expected = nx * ny * nz * itemsize
    raw = stream.read()
    if len(raw) != expected:
        raise MhaDecodeError(
            "voxel data truncated or oversized: expected %d bytes, got %d"
            % (expected, len(raw))
        )
    arr = np.frombuffer(raw, dtype="<f4" if dtype is np.float32 else "u1")
    arr = arr.astype(dtype).reshape(nz, ny, nx)
    return VolumeGrid(arr, spacing, origin)


def encode_volume_payload(vol: VolumeGrid) -> str:
    """Text-safe (base64) encoding of the MHA byte stream."""
    return base64.b64encode(encode_mha(vol)).decode("ascii")


def decode_volume_payload(payload: str) -> VolumeGrid:
    try:
        blob = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise VolumeError("volume payload is not valid base64: %s" % exc) from exc
    return decode_mha(blob)


# ---------------------------------------------------------------------------
# Transforms

def resample_to_shape(vol: VolumeGrid, target: tuple[int, int, int]) -> VolumeGrid:
    """Resample to (nx, ny, nz), preserving the physical extent.

    Trilinear for float32, nearest-neighbour for uint8. Sampling is
    voxel-center aligned: target center i maps to source coordinate
    (i + 0.5) * n_src / n_tgt - 0.5.
    """
    nx_t, ny_t, nz_t = target
    if min(target) <= 0:
        raise VolumeError("target dims must be positive")
    if target == vol.dims:
        return vol

    nx, ny, nz = vol.dims
    ratios = (nz / nz_t, ny / ny_t, nx / nx_t)  # [z, y, x] order
    grids = [
        (np.arange(n_t, dtype=np.float64) + 0.5) * r - 0.5
        for n_t, r in zip((nz_t, ny_t, nx_t), ratios)
    ]
    coords = np.meshgrid(*grids, indexing="ij")
    order = 1 if vol.scalar_kind == "float32" else 0
    out = ndimage.map_coordinates(
        vol.data.astype(np.float64) if order else vol.data,
        coords,
        order=order,
        mode="nearest",
    )
    out = out.astype(vol.data.dtype)

    sx, sy, sz = vol.spacing_mm
    new_spacing = (sx * nx / nx_t, sy * ny / ny_t, sz * nz / nz_t)
    ox, oy, oz = vol.origin_mm
    new_origin = (
        ox + 0.5 * (new_spacing[0] - sx),
        oy + 0.5 * (new_spacing[1] - sy),
        oz + 0.5 * (new_spacing[2] - sz),
    )
    return VolumeGrid(out, new_spacing, new_origin)


def znormalize(vol: VolumeGrid) -> VolumeGrid:
    """Shift/scale to zero mean, unit population std; constant input -> zeros."""
    if vol.scalar_kind != "float32":
        raise VolumeError("znormalize requires float32 input")
    data = vol.data.astype(np.float64)
    std = data.std()
    if std < 1e-12:
        return vol.with_data(np.zeros_like(vol.data))
    out = (data - data.mean()) / std
    return vol.with_data(out.astype(np.float32))


def otsu_threshold(vol: VolumeGrid, bins: int = 256) -> float:
    """Threshold maximizing between-class variance over a histogram of
    ``bins`` equal-width bins spanning [min, max].

    Ties break toward the lowest qualifying bin; the returned value is the
    upper edge of the chosen bin.
    """
    if vol.scalar_kind != "float32":
        raise VolumeError("otsu_threshold requires float32 input")
    data = vol.data.astype(np.float64).ravel()
    lo, hi = float(data.min()), float(data.max())
    if hi - lo < 1e-12:
        raise DegenerateInputError("otsu_threshold needs at least two distinct values")

    hist, edges = np.histogram(data, bins=bins, range=(lo, hi))
    total = hist.sum()
    weights = hist / total
    centers = 0.5 * (edges[:-1] + edges[1:])

    w0 = np.cumsum(weights)
    mu0_num = np.cumsum(weights * centers)
    mu_total = mu0_num[-1]
    best_k, best_score = None, -1.0
    for k in range(bins - 1):  # class 0 = bins 0..k, class 1 must be nonempty
        wa, wb = w0[k], 1.0 - w0[k]
        if wa <= 0 or wb <= 0:
            continue
        mu_a = mu0_num[k] / wa
        mu_b = (mu_total - mu0_num[k]) / wb
        score = wa * wb * (mu_a - mu_b) ** 2
        if score > best_score + 1e-18:
            best_score, best_k = score, k
    if best_k is None:
        raise DegenerateInputError("all voxels fall in one histogram bin")
    return float(edges[best_k + 1])


def binarize(vol: VolumeGrid, threshold: float) -> VolumeGrid:
    if vol.scalar_kind != "float32":
        raise VolumeError("binarize requires float32 input")
    mask = (vol.data > threshold).astype(np.uint8)
    return vol.with_data(mask)


def largest_connected_component(label: VolumeGrid) -> VolumeGrid:
    """Keep only the biggest 6-connected foreground component.

    Size ties break toward the component containing the smallest flat
    (x-fastest) voxel index. All-background input is returned unchanged.
    """
    if label.scalar_kind != "uint8":
        raise VolumeError("largest_connected_component requires uint8 input")
    values = np.unique(label.data)
    if not np.all(np.isin(values, (0, 1))):
        raise VolumeError("input must be binary (values in {0, 1})")
    labeled, count = ndimage.label(label.data, structure=_STRUCT_6)
    if count == 0:
        return label
    sizes = ndimage.sum_labels(np.ones_like(labeled), labeled, index=range(1, count + 1))
    best = 1 + int(np.argmax(sizes))  # argmax takes the first maximum; label ids
    # are assigned in raster (x-fastest) order, so first max == smallest min index
    keep = (labeled == best).astype(np.uint8)
    return label.with_data(keep)


def dice(a: VolumeGrid, b: VolumeGrid) -> float:
    """Overlap 2|A∩B| / (|A|+|B|) between binary masks; 1.0 if both empty."""
    if a.scalar_kind != "uint8" or b.scalar_kind != "uint8":
        raise VolumeError("dice requires uint8 masks")
    if a.dims != b.dims:
        raise VolumeError("dice requires equal dims, got %s vs %s" % (a.dims, b.dims))
    fa = a.data > 0
    fb = b.data > 0
    denom = int(fa.sum()) + int(fb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((fa & fb).sum()) / denom
