"""Binary dataset container, format v1.

Layout (little-endian)::

    b"SUNO"                 4 bytes magic
    version                 u32, currently 1
    header_len              u64
    header                  UTF-8 JSON, header_len bytes
    payload                 record arrays back to back

Each header record lists ``id, split, height, width, ncoils, noise_sigma``
and, under ``offsets``, a ``[byte_offset, byte_length]`` pair (relative to the
payload start) for ``ground_truth``, ``smaps`` and ``kspace_full``. Arrays are
row-major, coil-major, stored as interleaved (real, imag) float64 pairs
(numpy ``<c16``), so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContainerError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .mrimodel import ScanRecord
from .phantom import Dataset

MAGIC = b"SUNO"
VERSION = 1
DTYPE = "<c16"
_PREFIX = struct.Struct("<4sIQ")
_ITEM = np.dtype(DTYPE).itemsize
_FIELDS = ("ground_truth", "smaps", "kspace_full")


def write_container(path, dataset: Dataset) -> None:
    records = []
    chunks = []
    offset = 0
    for rec, split in zip(dataset.records, dataset.splits):
        h, w = rec.shape
        entry = {
            "id": rec.id,
            "split": split,
            "height": h,
            "width": w,
            "ncoils": rec.ncoils,
            "noise_sigma": rec.noise_sigma,
            "offsets": {},
        }
        for name in _FIELDS:
            raw = np.ascontiguousarray(getattr(rec, name), dtype=DTYPE).tobytes()
            entry["offsets"][name] = [offset, len(raw)]
            chunks.append(raw)
            offset += len(raw)
        records.append(entry)
    header = json.dumps(
        {"dtype": DTYPE, "meta": dataset.meta, "records": records}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def read_container(path) -> Dataset:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic, not a SUNO container")
    if len(blob) < _PREFIX.size:
        raise TruncatedPayloadError(f"{path}: truncated file prefix")
    _, version, header_len = _PREFIX.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatchError(
            f"{path}: container version {version}, expected {VERSION}"
        )
    start = _PREFIX.size + header_len
    if len(blob) < start:
        raise TruncatedPayloadError(f"{path}: header runs past end of file")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
        entries = header["records"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ContainerError(f"{path}: unreadable header: {exc}") from exc
    if header.get("dtype", DTYPE) != DTYPE:
        raise ContainerError(f"{path}: unsupported dtype {header['dtype']!r}")
    payload = memoryview(blob)[start:]

    records, splits = [], []
    for e in entries:
        try:
            h, w, nc = int(e["height"]), int(e["width"]), int(e["ncoils"])
            shapes = {
                "ground_truth": (h, w),
                "smaps": (nc, h, w),
                "kspace_full": (nc, h, w),
            }
            arrays = {}
            for name in _FIELDS:
                off, nbytes = (int(v) for v in e["offsets"][name])
                expected = int(np.prod(shapes[name])) * _ITEM
                if nbytes != expected:
                    raise ShapeMismatchError(
                        f"{path}: record {e['id']!r} {name} holds {nbytes} bytes, "
                        f"header shape {shapes[name]} needs {expected}"
                    )
                if off < 0 or off + nbytes > len(payload):
                    raise TruncatedPayloadError(
                        f"{path}: record {e['id']!r} {name} runs past end of payload"
                    )
                arrays[name] = np.frombuffer(
                    payload[off:off + nbytes], dtype=DTYPE
                ).reshape(shapes[name])
            records.append(
                ScanRecord(
                    id=str(e["id"]),
                    noise_sigma=float(e["noise_sigma"]),
                    **arrays,
                )
            )
            splits.append(str(e["split"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ContainerError(f"{path}: malformed record entry: {exc}") from exc
    return Dataset(records, splits, meta=header.get("meta", {}))
