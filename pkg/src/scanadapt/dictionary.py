"""Nearest-neighbor mask selection from low-frequency k-space.

Each training scan contributes a feature (the magnitude of its zero-filled
reconstruction from the central ``n_low_freq`` lines, center-cropped,
flattened and scaled to unit L2 norm) together with its optimized mask. At
test time the same feature is computed from the calibration lines of the
new scan and the mask of the closest training feature is returned.

On disk a dictionary is a directory holding ``manifest.json``, one
``<scan_id>.mask.json`` and one ``<scan_id>.f64`` (little-endian float64
vector) per entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DegenerateFeatureError, DimensionError, LookupFailure, UsageError
from .metrics import central_crop, default_crop
from .mrimodel import CartesianMask, adjoint, apply_mask
from .sampling import mask_low_frequency

MANIFEST = "manifest.json"


def extract_feature(kspace, smaps, n_low_freq: int, crop=None) -> np.ndarray:
    kspace = np.asarray(kspace)
    n_y = kspace.shape[-1]
    if not 1 <= n_low_freq <= n_y:
        raise UsageError(f"n_low_freq={n_low_freq} outside [1, {n_y}]")
    if crop is None:
        crop = default_crop(*kspace.shape[-2:])
    lf = mask_low_frequency(n_y, n_low_freq)
    img = np.abs(adjoint(apply_mask(kspace, lf), smaps))
    feat = central_crop(img, *crop).ravel()
    norm = np.linalg.norm(feat)
    if not norm > 0:
        raise DegenerateFeatureError("low-frequency reconstruction has zero energy")
    return feat / norm


@dataclass(frozen=True)
class DictionaryEntry:
    scan_id: str
    feature: np.ndarray
    mask: CartesianMask


class MaskDictionary:
    """Training features paired with their masks, searched by Euclidean distance."""

    def __init__(self, entries, n_low_freq: int, shape, crop):
        self.entries = sorted(entries, key=lambda e: e.scan_id)
        self.n_low_freq = int(n_low_freq)
        self.shape = tuple(int(v) for v in shape)
        self.crop = tuple(int(v) for v in crop)
        ids = [e.scan_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise UsageError("duplicate scan ids in dictionary")
        length = self.crop[0] * self.crop[1]
        for e in self.entries:
            if e.feature.shape != (length,):
                raise DimensionError(f"entry {e.scan_id}: feature length mismatch")
            if e.mask.n_y != self.shape[1]:
                raise DimensionError(f"entry {e.scan_id}: mask n_y mismatch")
        self._features = (
            np.stack([e.feature for e in self.entries]) if self.entries else np.empty((0, length))
        )
        self._index = {sid: i for i, sid in enumerate(ids)}

    def __len__(self):
        return len(self.entries)

    @property
    def scan_ids(self):
        return [e.scan_id for e in self.entries]

    def mask_for(self, scan_id: str) -> CartesianMask:
        try:
            return self.entries[self._index[scan_id]].mask
        except KeyError:
            raise LookupFailure(f"scan {scan_id!r} not in dictionary") from None

    def feature(self, kspace, smaps) -> np.ndarray:
        if tuple(np.shape(kspace)[-2:]) != self.shape:
            raise DimensionError(
                f"k-space shape {np.shape(kspace)[-2:]} differs from dictionary {self.shape}"
            )
        return extract_feature(kspace, smaps, self.n_low_freq, self.crop)

    def distances(self, feature) -> np.ndarray:
        feature = np.asarray(feature)
        if feature.shape != (self._features.shape[1],):
            raise DimensionError("query feature length does not match the dictionary")
        return np.sqrt(np.sum((self._features - feature) ** 2, axis=1))

    def k_nearest(self, feature, k: int) -> list[tuple[str, float]]:
        """``k`` closest entries, ascending by distance then scan id."""
        if not 1 <= k <= len(self):
            raise UsageError(f"k={k} outside [1, {len(self)}]")
        d = self.distances(feature)
        order = sorted(range(len(self)), key=lambda i: (d[i], self.entries[i].scan_id))
        return [(self.entries[i].scan_id, float(d[i])) for i in order[:k]]

    def select_mask(self, kspace_lf, smaps) -> tuple[CartesianMask, str, float]:
        if not self.entries:
            raise UsageError("dictionary is empty")
        sid, dist = self.k_nearest(self.feature(kspace_lf, smaps), 1)[0]
        return self.mask_for(sid), sid, dist

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "n_low_freq": self.n_low_freq,
            "shape": list(self.shape),
            "crop": list(self.crop),
            "entries": [],
        }
        for e in self.entries:
            mask_file = f"{e.scan_id}.mask.json"
            feature_file = f"{e.scan_id}.f64"
            e.mask.save(directory / mask_file)
            (directory / feature_file).write_bytes(e.feature.astype("<f8").tobytes())
            manifest["entries"].append(
                {"scan_id": e.scan_id, "mask_file": mask_file, "feature_file": feature_file}
            )
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")

    @classmethod
    def load(cls, directory) -> "MaskDictionary":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST).read_text())
            shape = manifest["shape"]
            crop = manifest.get("crop") or default_crop(*shape)
            entries = []
            for item in manifest["entries"]:
                raw = (directory / item["feature_file"]).read_bytes()
                feature = np.frombuffer(raw, dtype="<f8").astype(np.float64)
                mask = CartesianMask.load(directory / item["mask_file"])
                entries.append(DictionaryEntry(item["scan_id"], feature, mask))
            return cls(entries, manifest["n_low_freq"], shape, crop)
        except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot load dictionary from {directory}: {exc}") from exc


def build_dictionary(train, masks, n_low_freq: int, crop=None) -> MaskDictionary:
    """One entry per training scan; ``masks`` maps scan id to mask (or aligns by position)."""
    records = list(train.split("train") if hasattr(train, "split") else train)
    if not records:
        raise UsageError("no training scans")
    if isinstance(masks, dict):
        if set(masks) != {r.id for r in records}:
            raise UsageError("masks do not match the training scan ids")
        mask_of = masks
    else:
        masks = list(masks)
        if len(masks) != len(records):
            raise UsageError("one mask per training scan is required")
        mask_of = {r.id: m for r, m in zip(records, masks)}
    shape = records[0].shape
    if crop is None:
        crop = default_crop(*shape)
    entries = [
        DictionaryEntry(r.id, extract_feature(r.kspace_full, r.smaps, n_low_freq, crop), mask_of[r.id])
        for r in records
    ]
    return MaskDictionary(entries, n_low_freq, shape, crop)


def select_mask(dictionary: MaskDictionary, kspace_lf, smaps):
    return dictionary.select_mask(kspace_lf, smaps)


def k_nearest(dictionary: MaskDictionary, feature, k: int):
    return dictionary.k_nearest(feature, k)
