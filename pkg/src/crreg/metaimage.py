"""MetaImage (.mhd header + .raw payload) reading and writing.

Only the subset needed here is supported: 3-D, uncompressed, little-endian,
``MET_FLOAT`` for images and displacement fields (3 interleaved channels)
and ``MET_USHORT`` for label maps. Payloads are x-fastest.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .grid import DisplacementField, LabelVolume, Volume

_DTYPES = {"MET_FLOAT": np.dtype("<f4"), "MET_USHORT": np.dtype("<u2")}


class MetaImageError(ValueError):
    """Raised when a MetaImage header or payload cannot be loaded."""


def _raw_path(path: Path) -> Path:
    return path.with_suffix(".raw")


def _write(path, payload: np.ndarray, dims, spacing, element_type, channels=1):
    path = Path(path)
    raw = _raw_path(path)
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "DimSize = " + " ".join(str(int(n)) for n in dims),
        "ElementSpacing = " + " ".join(repr(float(s)) for s in spacing),
    ]
    if channels != 1:
        lines.append(f"ElementNumberOfChannels = {channels}")
    lines += [f"ElementType = {element_type}", f"ElementDataFile = {raw.name}"]
    raw.write_bytes(payload.astype(_DTYPES[element_type]).tobytes())
    path.write_text("\n".join(lines) + "\n")


def _parse_header(path: Path) -> dict:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise MetaImageError(f"header file not found: {path}") from None
    header = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def _read(path, expected_type, channels=1):
    path = Path(path)
    header = _parse_header(path)
    for key in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if key not in header:
            raise MetaImageError(f"{path}: missing header field {key}")
    if header["NDims"] != "3":
        raise MetaImageError(f"{path}: NDims must be 3, got {header['NDims']}")
    try:
        dims = tuple(int(v) for v in header["DimSize"].split())
    except ValueError:
        raise MetaImageError(f"{path}: malformed DimSize {header['DimSize']!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise MetaImageError(f"{path}: DimSize must hold 3 positive integers")
    spacing = (1.0, 1.0, 1.0)
    if "ElementSpacing" in header:
        try:
            spacing = tuple(float(v) for v in header["ElementSpacing"].split())
        except ValueError:
            raise MetaImageError(f"{path}: malformed ElementSpacing") from None
        if len(spacing) != 3:
            raise MetaImageError(f"{path}: ElementSpacing must hold 3 values")
    etype = header["ElementType"]
    if etype != expected_type:
        raise MetaImageError(f"{path}: ElementType {etype} unsupported here, expected {expected_type}")
    if header.get("BinaryDataByteOrderMSB", "False") not in ("False", "false", "0"):
        raise MetaImageError(f"{path}: BinaryDataByteOrderMSB must be False")
    if header.get("CompressedData", "False") not in ("False", "false", "0"):
        raise MetaImageError(f"{path}: CompressedData is not supported")
    nchan = int(header.get("ElementNumberOfChannels", "1"))
    if nchan != channels:
        raise MetaImageError(f"{path}: ElementNumberOfChannels is {nchan}, expected {channels}")

    raw = Path(header["ElementDataFile"])
    if not raw.is_absolute():
        raw = path.parent / raw
    try:
        payload = raw.read_bytes()
    except FileNotFoundError:
        raise MetaImageError(f"{path}: ElementDataFile not found: {raw}") from None
    dtype = _DTYPES[etype]
    expected = int(np.prod(dims)) * channels
    if len(payload) != expected * dtype.itemsize:
        raise MetaImageError(
            f"{path}: DimSize {dims} x {channels} channel(s) needs {expected} elements, "
            f"ElementDataFile holds {len(payload) / dtype.itemsize:g}"
        )
    values = np.frombuffer(payload, dtype=dtype)
    if values.dtype.kind == "f" and not np.all(np.isfinite(values)):
        raise MetaImageError(f"{path}: ElementDataFile contains non-finite values")
    return values, dims, spacing


def save_volume(v: Volume, path) -> None:
    _write(path, v.flat, v.dims, v.spacing, "MET_FLOAT")


def load_volume(path) -> Volume:
    values, dims, spacing = _read(path, "MET_FLOAT")
    return Volume.from_flat(dims, values.astype(np.float64), spacing)


def save_field(u: DisplacementField, path) -> None:
    payload = u.vectors.transpose(2, 1, 0, 3).ravel()
    _write(path, payload, u.dims, u.spacing, "MET_FLOAT", channels=3)


def load_field(path) -> DisplacementField:
    values, (nx, ny, nz), spacing = _read(path, "MET_FLOAT", channels=3)
    vectors = values.astype(np.float64).reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
    return DisplacementField(vectors, spacing)


def save_labels(lab: LabelVolume, path) -> None:
    if lab.labels.max(initial=0) > np.iinfo(np.uint16).max:
        raise ValueError("labels exceed the MET_USHORT range")
    _write(path, lab.labels.ravel(order="F"), lab.dims, lab.spacing, "MET_USHORT")


def load_labels(path) -> LabelVolume:
    values, dims, spacing = _read(path, "MET_USHORT")
    return LabelVolume(values.astype(np.int64).reshape(dims, order="F"), spacing)
