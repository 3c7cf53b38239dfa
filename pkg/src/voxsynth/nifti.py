"""Single-file NIfTI-1 reading and writing.

Implements the 348-byte binary header plus raw voxel payload, optionally
inside a gzip container (detected by magic bytes on read, by a ``.gz`` suffix
on write). Only 3D volumes and the four datatypes used by this package are
supported: uint8, int16, int32, float32. Written files are deterministic at
the byte level (gzip mtime pinned to zero) so identical volumes produce
identical files.

Layout notes: voxel data is stored x-fastest, matching the ``[x, y, z]``
index convention of :class:`voxsynth.volume.Volume`; the grid-to-world map is
written to the sform rows and read back with the standard sform > qform >
pixdim-diagonal precedence.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Volume

__all__ = ["NiftiHeader", "read_nifti", "write_nifti", "read_nifti_header"]

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# NIfTI-1 datatype codes for the supported dtypes.
_CODE_FOR_DTYPE = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.int32): 8,
    np.dtype(np.float32): 16,
}
_DTYPE_FOR_CODE = {code: dt for dt, code in _CODE_FOR_DTYPE.items()}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32}


@dataclass(frozen=True)
class NiftiHeader:
    """Decoded subset of the NIfTI-1 header that this package acts on."""

    datatype: int
    dims: tuple[int, int, int]
    pixdim: tuple[float, float, float]
    scl_slope: float
    scl_inter: float
    vox_offset: int
    qform_code: int
    sform_code: int
    affine: np.ndarray
    magic: bytes


def _is_gzip(path: Path) -> bool:
    with open(path, "rb") as f:
        head = f.read(2)
    return head == b"\x1f\x8b"


def _read_bytes(path: Path) -> bytes:
    if _is_gzip(path):
        with gzip.open(path, "rb") as f:
            return f.read()
    with open(path, "rb") as f:
        return f.read()


def _quaternion_affine(b: float, c: float, d: float, offsets, pixdim, qfac: float) -> np.ndarray:
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a_sq) if a_sq > 0 else 0.0
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    affine = np.eye(4)
    affine[:3, 0] = rot[:, 0] * pixdim[0]
    affine[:3, 1] = rot[:, 1] * pixdim[1]
    affine[:3, 2] = rot[:, 2] * pixdim[2] * qfac
    affine[:3, 3] = offsets
    return affine


def _parse_header(raw: bytes) -> tuple[NiftiHeader, str]:
    """Decode the fixed header; returns the header and the byte-order prefix."""
    if len(raw) < HEADER_SIZE:
        raise OSError(f"truncated file: {len(raw)} bytes, header needs {HEADER_SIZE}")
    order = "<"
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != HEADER_SIZE:
        order = ">"
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise ValueError("not a NIfTI-1 file (bad sizeof_hdr)")

    magic = raw[344:348]
    if magic == MAGIC_PAIR:
        raise ValueError("two-file NIfTI (.hdr/.img) is not supported; use single-file .nii")
    if magic != MAGIC_SINGLE:
        raise ValueError(f"not a single-file NIfTI-1 (magic {magic!r})")

    dim = struct.unpack_from(order + "8h", raw, 40)
    if dim[0] != 3:
        raise ValueError(f"expected a 3D volume, header declares {dim[0]} dimensions")
    dims = (int(dim[1]), int(dim[2]), int(dim[3]))
    if min(dims) < 1:
        raise ValueError(f"invalid dims {dims}")

    (datatype,) = struct.unpack_from(order + "h", raw, 70)
    pixdim = struct.unpack_from(order + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(order + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(order + "2h", raw, 252)
    quatern = struct.unpack_from(order + "3f", raw, 256)
    qoffset = struct.unpack_from(order + "3f", raw, 268)
    srow_x = struct.unpack_from(order + "4f", raw, 280)
    srow_y = struct.unpack_from(order + "4f", raw, 296)
    srow_z = struct.unpack_from(order + "4f", raw, 312)

    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(s <= 0 for s in spacing):
        raise ValueError(f"non-positive pixdim {spacing}")

    if sform_code > 0:
        affine = np.array([srow_x, srow_y, srow_z, [0.0, 0.0, 0.0, 1.0]], dtype=np.float64)
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] < 0 else 1.0
        affine = _quaternion_affine(*quatern, qoffset, spacing, qfac)
    else:
        affine = np.diag([spacing[0], spacing[1], spacing[2], 1.0])

    header = NiftiHeader(
        datatype=int(datatype),
        dims=dims,
        pixdim=spacing,
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        vox_offset=int(vox_offset),
        qform_code=int(qform_code),
        sform_code=int(sform_code),
        affine=affine,
        magic=magic,
    )
    return header, order


def read_nifti_header(path) -> NiftiHeader:
    header, _ = _parse_header(_read_bytes(Path(path))[:HEADER_SIZE])
    return header


def read_nifti(path) -> Volume:
    """Load a ``.nii`` or ``.nii.gz`` file as a :class:`Volume`.

    Voxel values are rescaled by ``scl_slope``/``scl_inter`` when the header
    declares a non-trivial scaling (slope not in {0, 1} or nonzero intercept),
    in which case the result is a float image.
    """
    path = Path(path)
    raw = _read_bytes(path)
    header, order = _parse_header(raw)

    if header.datatype not in _DTYPE_FOR_CODE:
        raise ValueError(
            f"unsupported NIfTI datatype code {header.datatype}; "
            "supported: uint8 (2), int16 (4), int32 (8), float32 (16)"
        )
    dtype = _DTYPE_FOR_CODE[header.datatype].newbyteorder(order)
    count = int(np.prod(header.dims))
    start = header.vox_offset if header.vox_offset >= HEADER_SIZE else VOX_OFFSET
    end = start + count * dtype.itemsize
    if len(raw) < end:
        raise OSError(f"truncated file: need {end} bytes of voxel data, have {len(raw)}")

    data = np.frombuffer(raw[start:end], dtype=dtype).reshape(header.dims, order="F")
    data = np.ascontiguousarray(data.astype(dtype.newbyteorder("="), copy=True))

    slope, inter = header.scl_slope, header.scl_inter
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data.astype(np.float64) * slope + inter

    return Volume(data, header.pixdim, header.affine)


def _resolve_datatype(v: Volume, datatype) -> np.dtype:
    if datatype is not None:
        dt = np.dtype(datatype)
        if dt not in _CODE_FOR_DTYPE:
            raise ValueError(f"unsupported write datatype {dt}; use uint8/int16/int32/float32")
        return dt
    if not v.is_labels:
        return np.dtype(np.float32)
    if v.dtype in _CODE_FOR_DTYPE:
        return v.dtype
    return np.dtype(np.int32)


def write_nifti(v: Volume, path, datatype=None, quantize: bool = False) -> None:
    """Write a volume as single-file NIfTI-1, gzipped when `path` ends in .gz.

    The requested datatype must represent the data exactly: integer data maps
    to integer datatypes (range-checked), float data to float32. Writing float
    data into an integer datatype rounds and clips, and is refused unless
    `quantize` is set. No intensity scaling is written, so a read of the file
    reproduces the stored array bit-exactly.
    """
    path = Path(path)
    dt = _resolve_datatype(v, datatype)
    data = v.data

    if v.is_labels and not np.issubdtype(dt, np.integer):
        raise ValueError("label volumes must be written with an integer datatype")
    if np.issubdtype(dt, np.integer):
        if not v.is_labels:
            if not quantize:
                raise ValueError(
                    f"writing float data as {dt} requires quantize=True (rounds and clips)"
                )
            info = np.iinfo(dt)
            data = np.clip(np.rint(data), info.min, info.max)
        else:
            info = np.iinfo(dt)
            lo, hi = int(data.min()), int(data.max())
            if lo < info.min or hi > info.max:
                raise ValueError(
                    f"label range [{lo}, {hi}] does not fit datatype {dt} "
                    f"([{info.min}, {info.max}])"
                )
    out = np.asarray(data).astype(dt.newbyteorder("<"), copy=False)

    code = _CODE_FOR_DTYPE[np.dtype(dt)]
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, v.dims[0], v.dims[1], v.dims[2], 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, code)
    struct.pack_into("<h", header, 72, _BITPIX[code])
    struct.pack_into("<8f", header, 76, 1.0, v.spacing[0], v.spacing[1], v.spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", header, 108, float(VOX_OFFSET))
    struct.pack_into("<2f", header, 112, 0.0, 0.0)  # no scaling: round trips bit-exactly
    struct.pack_into("<B", header, 123, 2)  # spatial units: millimetres
    descrip = b"voxsynth"
    header[148 : 148 + len(descrip)] = descrip
    struct.pack_into("<2h", header, 252, 0, 1)  # qform off, sform on
    affine = v.affine
    struct.pack_into("<4f", header, 280, *affine[0])
    struct.pack_into("<4f", header, 296, *affine[1])
    struct.pack_into("<4f", header, 312, *affine[2])
    header[344:348] = MAGIC_SINGLE

    payload = bytes(header) + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + out.tobytes(order="F")

    if str(path).endswith(".gz"):
        with open(path, "wb") as f:
            # mtime and filename pinned so identical volumes give identical bytes
            with gzip.GzipFile(filename="", fileobj=f, mode="wb", mtime=0) as gz:
                gz.write(payload)
    else:
        with open(path, "wb") as f:
            f.write(payload)
