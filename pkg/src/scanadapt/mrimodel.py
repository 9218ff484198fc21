"""Multi-coil Cartesian MRI forward model.

Images, sensitivity maps and k-space are plain complex128 numpy arrays:

* image: ``(height, width)``
* sensitivity maps and k-space: ``(ncoils, height, width)``

Both domains use a *centered* layout: DC sits at ``(height // 2, width // 2)``
and the FFT is unitary (``norm="ortho"``), so the adjoint of the Fourier
transform is its inverse. Phase encoding runs along the width (last) axis;
a phase-encode line is one k-space column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, UsageError

__all__ = [
    "CartesianMask",
    "ScanRecord",
    "adjoint",
    "apply_mask",
    "center_block",
    "center_slice",
    "fft2c",
    "forward",
    "ifft2c",
    "zero_filled_recon",
]


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered unitary 2D FFT over the last two axes."""
    axes = (-2, -1)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(x, axes=axes), norm="ortho"), axes=axes
    )


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Centered unitary inverse 2D FFT over the last two axes."""
    axes = (-2, -1)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(k, axes=axes), norm="ortho"), axes=axes
    )


def center_slice(n: int, count: int) -> slice:
    """Slice of ``count`` contiguous indices centered on ``n // 2``.

    The block spans ``[n//2 - ceil(count/2), n//2 + floor(count/2) - 1]``,
    e.g. ``n=368, count=30`` gives indices 169..198.
    """
    if not 0 <= count <= n:
        raise UsageError(f"cannot take {count} central indices out of {n}")
    # only odd n with count == n would start at -1; clamp keeps it in range
    start = min(max(n // 2 - (count + 1) // 2, 0), n - count)
    return slice(start, start + count)


def center_block(n: int, count: int) -> tuple[int, ...]:
    s = center_slice(n, count)
    return tuple(range(s.start, s.stop))


@dataclass(frozen=True)
class CartesianMask:
    """Set of sampled phase-encode lines.

    ``fixed_center`` is the contiguous central block that optimizers may not
    move; ``budget`` equals the number of sampled lines.
    """

    n_y: int
    lines: tuple[int, ...]
    fixed_center: tuple[int, ...] = ()
    budget: int | None = field(default=None)

    def __post_init__(self):
        lines = tuple(int(v) for v in self.lines)
        center = tuple(int(v) for v in self.fixed_center)
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "fixed_center", center)
        if self.budget is None:
            object.__setattr__(self, "budget", len(lines))
        if self.n_y < 1:
            raise UsageError("n_y must be positive")
        if not lines:
            raise UsageError("a mask must sample at least one line")
        if len(lines) != self.budget:
            raise UsageError(
                f"mask holds {len(lines)} lines but budget is {self.budget}"
            )
        if any(b <= a for a, b in zip(lines, lines[1:])):
            raise UsageError("mask lines must be strictly increasing")
        if lines and (lines[0] < 0 or lines[-1] >= self.n_y):
            raise DimensionError(f"mask lines out of range [0, {self.n_y})")
        if center != center_block(self.n_y, len(center)):
            raise UsageError(
                "fixed_center must be the centered contiguous block of its size"
            )
        if not set(center) <= set(lines):
            raise UsageError("fixed_center lines must be sampled")

    @classmethod
    def from_lines(cls, n_y, lines, n_center=0):
        """Build a mask from an arbitrary iterable of line indices."""
        lines = [int(v) for v in lines]
        uniq = sorted(set(lines))
        if len(uniq) != len(lines):
            raise UsageError("duplicate line indices")
        return cls(n_y, tuple(uniq), center_block(n_y, n_center))

    @property
    def n_center(self) -> int:
        return len(self.fixed_center)

    @property
    def movable(self) -> tuple[int, ...]:
        center = set(self.fixed_center)
        return tuple(v for v in self.lines if v not in center)

    def as_array(self) -> np.ndarray:
        """Boolean indicator of length ``n_y``."""
        out = np.zeros(self.n_y, dtype=bool)
        out[list(self.lines)] = True
        return out

    def to_dict(self) -> dict:
        return {
            "n_y": self.n_y,
            "budget": self.budget,
            "fixed_center": list(self.fixed_center),
            "lines": list(self.lines),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartesianMask":
        try:
            return cls(
                int(d["n_y"]),
                tuple(d["lines"]),
                tuple(d.get("fixed_center", ())),
                int(d["budget"]),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed mask record: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "CartesianMask":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.complex128, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScanRecord:
    """One fully sampled scan with its reference image and coil maps."""

    id: str
    ground_truth: np.ndarray
    smaps: np.ndarray
    kspace_full: np.ndarray
    noise_sigma: float = 0.0

    def __post_init__(self):
        gt = _readonly(self.ground_truth)
        smaps = _readonly(self.smaps)
        ksp = _readonly(self.kspace_full)
        if gt.ndim != 2 or smaps.ndim != 3 or ksp.ndim != 3:
            raise DimensionError("expected 2D image and 3D coil arrays")
        if smaps.shape[1:] != gt.shape or ksp.shape != smaps.shape:
            raise DimensionError(
                f"inconsistent shapes: image {gt.shape}, smaps {smaps.shape}, "
                f"kspace {ksp.shape}"
            )
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be non-negative")
        for name, a in (("ground_truth", gt), ("smaps", smaps), ("kspace_full", ksp)):
            if not np.all(np.isfinite(a)):
                raise DataError(f"scan {self.id!r}: non-finite values in {name}")
        object.__setattr__(self, "ground_truth", gt)
        object.__setattr__(self, "smaps", smaps)
        object.__setattr__(self, "kspace_full", ksp)

    @property
    def shape(self) -> tuple[int, int]:
        return self.ground_truth.shape

    @property
    def ncoils(self) -> int:
        return self.smaps.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ScanRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.noise_sigma == other.noise_sigma
            and np.array_equal(self.ground_truth, other.ground_truth)
            and np.array_equal(self.smaps, other.smaps)
            and np.array_equal(self.kspace_full, other.kspace_full)
        )


def _check_coil_shapes(a: np.ndarray, smaps: np.ndarray, what: str) -> None:
    if smaps.ndim != 3:
        raise DimensionError("sensitivity maps must be (ncoils, height, width)")
    expected = smaps.shape[1:] if a.ndim == 2 else smaps.shape
    if a.shape != expected:
        raise DimensionError(
            f"{what} shape {a.shape} does not match sensitivity maps {smaps.shape}"
        )


def forward(x: np.ndarray, smaps: np.ndarray) -> np.ndarray:
    """Fully sampled multi-coil operator ``A x = F (S x)``."""
    x = np.asarray(x)
    smaps = np.asarray(smaps)
    if x.ndim != 2:
        raise DimensionError("image must be 2D")
    _check_coil_shapes(x, smaps, "image")
    return fft2c(smaps * x)


def adjoint(y: np.ndarray, smaps: np.ndarray) -> np.ndarray:
    """Adjoint ``A^H y = sum_c conj(S_c) F^H y_c``."""
    y = np.asarray(y)
    smaps = np.asarray(smaps)
    if y.ndim != 3:
        raise DimensionError("k-space must be (ncoils, height, width)")
    _check_coil_shapes(y, smaps, "k-space")
    return np.sum(np.conj(smaps) * ifft2c(y), axis=0)


def apply_mask(y: np.ndarray, mask: CartesianMask) -> np.ndarray:
    """Keep sampled phase-encode columns, zero the rest."""
    y = np.asarray(y)
    if y.shape[-1] != mask.n_y:
        raise DimensionError(
            f"mask has n_y={mask.n_y} but k-space width is {y.shape[-1]}"
        )
    return np.where(mask.as_array(), y, 0).astype(y.dtype, copy=False)


def zero_filled_recon(y: np.ndarray, mask: CartesianMask, smaps: np.ndarray) -> np.ndarray:
    return adjoint(apply_mask(y, mask), smaps)
