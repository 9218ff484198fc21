"""Synthetic multi-coil scans built from jittered Shepp-Logan ellipses."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import rng as _rng
from .errors import DimensionError, LookupFailure, UsageError
from .mrimodel import ScanRecord, forward

__all__ = [
    "Dataset",
    "PhantomSpec",
    "generate_dataset",
    "generate_phantom",
    "generate_smaps",
    "simulate_scan",
]

# Modified Shepp-Logan (Toft): intensity, semi-axis a, semi-axis b, x0, y0, angle (deg)
SHEPP_LOGAN = np.array(
    [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
    ]
)

# Base phase coefficients: constant, x, y, radial^2 (radians)
_BASE_PHASE = np.array([0.0, 0.25, -0.15, 0.3])


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    n_ellipses: int = 10
    seed: int = 0
    ncoils: int = 4
    noise_sigma: float = 0.01
    jitter: float = 0.25

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise UsageError("phantom height and width must be at least 8")
        if self.n_ellipses < 1:
            raise UsageError("n_ellipses must be at least 1")
        if self.ncoils < 1:
            raise UsageError("ncoils must be at least 1")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be non-negative")
        if not 0.0 <= self.jitter <= 0.5:
            raise UsageError("jitter must lie in [0, 0.5]")
        if not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def _grid(height, width):
    y = (np.arange(height) - height // 2) / (height / 2)
    x = (np.arange(width) - width // 2) / (width / 2)
    return np.meshgrid(x, y)


def _base_ellipses(spec: PhantomSpec) -> np.ndarray:
    n_table = min(spec.n_ellipses, len(SHEPP_LOGAN))
    table = SHEPP_LOGAN[:n_table].copy()
    extra = spec.n_ellipses - n_table
    if extra:
        r = _rng.make_rng(spec.seed, _rng.PHANTOM_BASE)
        rows = np.column_stack(
            [
                r.uniform(-0.1, 0.2, extra),
                r.uniform(0.02, 0.15, extra),
                r.uniform(0.02, 0.15, extra),
                r.uniform(-0.45, 0.45, extra),
                r.uniform(-0.6, 0.6, extra),
                r.uniform(0.0, 180.0, extra),
            ]
        )
        table = np.vstack([table, rows])
    return table


def generate_phantom(spec: PhantomSpec, scan_index: int) -> np.ndarray:
    """Complex phantom image for one scan, peak magnitude normalized to 1.

    Each ellipse parameter is the base value perturbed by ``jitter`` times a
    uniform draw in [-1, 1]: centers move by up to 0.1 (image half-widths),
    axes and intensities scale by up to 50%, angles rotate by up to 30
    degrees. The same scaling applies to the coefficients of a smooth
    low-order phase map.
    """
    table = _base_ellipses(spec)
    n = len(table)
    r = _rng.make_rng(spec.seed, _rng.PHANTOM_JITTER, scan_index)
    u = r.uniform(-1.0, 1.0, size=(n, 6))
    pu = r.uniform(-1.0, 1.0, size=4)
    j = spec.jitter

    inten = table[:, 0] * (1 + 0.5 * j * u[:, 0])
    a = table[:, 1] * (1 + 0.5 * j * u[:, 1])
    b = table[:, 2] * (1 + 0.5 * j * u[:, 2])
    x0 = table[:, 3] + 0.1 * j * u[:, 3]
    y0 = table[:, 4] + 0.1 * j * u[:, 4]
    theta = np.deg2rad(table[:, 5] + 30.0 * j * u[:, 5])

    xx, yy = _grid(spec.height, spec.width)
    mag = np.zeros((spec.height, spec.width))
    for k in range(n):
        dx, dy = xx - x0[k], yy - y0[k]
        c, s = np.cos(theta[k]), np.sin(theta[k])
        xr = dx * c + dy * s
        yr = -dx * s + dy * c
        mag += inten[k] * ((xr / a[k]) ** 2 + (yr / b[k]) ** 2 <= 1.0)
    mag = np.abs(mag)

    p = _BASE_PHASE + 0.3 * j * pu
    phase = p[0] + p[1] * xx + p[2] * yy + p[3] * (xx**2 + yy**2)
    img = mag * np.exp(1j * phase)
    peak = np.max(np.abs(img))
    if peak == 0:
        raise UsageError("phantom has no support at this resolution")
    return img / peak


def generate_smaps(spec: PhantomSpec) -> np.ndarray:
    """Smooth coil maps with pixelwise unit sum of squares.

    Coil ``c`` is a complex Gaussian lobe centered just outside the field of
    view at angle ``2*pi*c/ncoils`` (plus a seeded rotation of the array),
    with a seeded constant phase and a gentle linear phase.
    """
    r = _rng.make_rng(spec.seed, _rng.SMAPS)
    rot = r.uniform(0, 2 * np.pi / spec.ncoils)
    phases = r.uniform(-np.pi, np.pi, spec.ncoils)
    xx, yy = _grid(spec.height, spec.width)
    width = 0.8
    maps = np.empty((spec.ncoils, spec.height, spec.width), dtype=np.complex128)
    for c in range(spec.ncoils):
        ang = rot + 2 * np.pi * c / spec.ncoils
        cx, cy = 1.2 * np.cos(ang), 1.2 * np.sin(ang)
        lobe = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width**2))
        ph = phases[c] + 0.5 * (xx * np.cos(ang) + yy * np.sin(ang))
        maps[c] = lobe * np.exp(1j * ph)
    sos = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / sos


def simulate_scan(spec: PhantomSpec, scan_index: int) -> ScanRecord:
    gt = generate_phantom(spec, scan_index)
    smaps = generate_smaps(spec)
    ksp = forward(gt, smaps)
    if spec.noise_sigma > 0:
        r = _rng.make_rng(spec.seed, _rng.NOISE, scan_index)
        noise = r.standard_normal((2,) + ksp.shape)
        ksp = ksp + spec.noise_sigma * (noise[0] + 1j * noise[1])
    return ScanRecord(
        id=f"scan{scan_index:04d}",
        ground_truth=gt,
        smaps=smaps,
        kspace_full=ksp,
        noise_sigma=float(spec.noise_sigma),
    )


SPLITS = ("train", "val", "test")


@dataclass(eq=False)
class Dataset:
    """Scans with train/val/test labels; all scans share one geometry."""

    records: list[ScanRecord]
    splits: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.records) != len(self.splits):
            raise UsageError("one split label per record is required")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise UsageError("scan ids must be unique")
        for s in self.splits:
            if s not in SPLITS:
                raise UsageError(f"unknown split {s!r}")
        if self.records:
            geom = (self.records[0].shape, self.records[0].ncoils)
            for r in self.records:
                if (r.shape, r.ncoils) != geom:
                    raise DimensionError(f"scan {r.id} geometry differs from the dataset")

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.splits == other.splits
            and self.meta == other.meta
            and len(self.records) == len(other.records)
            and all(a == b for a, b in zip(self.records, other.records))
        )

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list[ScanRecord]:
        return [r for r, s in zip(self.records, self.splits) if s == name]

    def get(self, scan_id: str) -> ScanRecord:
        for r in self.records:
            if r.id == scan_id:
                return r
        raise LookupFailure(f"unknown scan id {scan_id!r}")

    @property
    def shape(self):
        return self.records[0].shape

    @property
    def ncoils(self):
        return self.records[0].ncoils


def generate_dataset(spec: PhantomSpec, n_train=40, n_val=8, n_test=8) -> Dataset:
    """Simulate consecutive scan indices and label them train, val, test in order."""
    counts = (n_train, n_val, n_test)
    if min(counts) < 0:
        raise UsageError("split sizes must be non-negative")
    records, splits = [], []
    index = 0
    for name, count in zip(SPLITS, counts):
        for _ in range(count):
            records.append(simulate_scan(spec, index))
            splits.append(name)
            index += 1
    return Dataset(records, splits, meta={"phantom_spec": spec.to_dict()})
