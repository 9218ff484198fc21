"""Classical reconstructors and regularization fitting.

A reconstructor maps masked multi-coil k-space to an image. Two are
provided: the zero-filled adjoint and Tikhonov-regularized least squares
solved by conjugate gradients,

    argmin_x ||M A x - y||^2 + lam ||x||^2   <=>   (A^H M A + lam I) x = A^H M y.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import LookupFailure, NumericalError, UsageError
from .metrics import central_crop, default_crop, nrmse
from .mrimodel import CartesianMask, ScanRecord, adjoint, apply_mask, zero_filled_recon

__all__ = [
    "CGResult",
    "CGTikhonov",
    "ReconConfig",
    "Reconstructor",
    "ZeroFilled",
    "cg_solve",
    "cr_solve",
    "fit_lambda",
    "lambda_curve",
    "local_adapt",
    "make_reconstructor",
    "reconstruct_cg_tikhonov",
    "reconstruct_zero_filled",
    "tikhonov_normal_operator",
]


@dataclass(frozen=True)
class ReconConfig:
    method: str = "cg_tikhonov"
    lam: float = 1e-3
    cg_tol: float = 1e-5
    cg_max_iter: int = 50
    solver: str = "cr"

    def __post_init__(self):
        if self.method not in ("zero_filled", "cg_tikhonov"):
            raise UsageError(f"unknown reconstruction method {self.method!r}")
        if not self.lam >= 0:
            raise UsageError("lambda must be non-negative")
        if not 0 < self.cg_tol < 1:
            raise UsageError("cg_tol must lie in (0, 1)")
        if self.cg_max_iter < 1:
            raise UsageError("cg_max_iter must be at least 1")
        if self.solver not in _SOLVERS:
            raise UsageError(f"unknown Krylov solver {self.solver!r}")

    def with_lambda(self, lam: float) -> "ReconConfig":
        return ReconConfig(self.method, float(lam), self.cg_tol, self.cg_max_iter, self.solver)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class Reconstructor(Protocol):
    """Deterministic, reentrant map from masked k-space to an image."""

    def reconstruct(
        self, y_masked: np.ndarray, mask: CartesianMask, smaps: np.ndarray
    ) -> np.ndarray: ...


def reconstruct_zero_filled(y_masked, mask, smaps):
    return zero_filled_recon(y_masked, mask, smaps)


@dataclass
class CGResult:
    image: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)

    @property
    def converged_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


def _check_finite(value, it, what):
    if not math.isfinite(value):
        raise NumericalError(f"non-finite {what} at iteration {it}", iteration=it)


def cg_solve(normal_op, rhs: np.ndarray, tol: float, max_iter: int) -> CGResult:
    """Conjugate gradients for a Hermitian positive (semi)definite operator.

    Starts from zero and stops once ``||r_k|| <= tol * ||rhs||`` or after
    ``max_iter`` iterations. ``residuals`` holds the relative residual after
    each iteration, preceded by 1.0 for the starting point. Plain CG
    minimizes the energy norm of the error; its residual may oscillate.
    """
    x = np.zeros_like(rhs)
    bnorm = math.sqrt(np.vdot(rhs, rhs).real)
    if bnorm == 0:
        return CGResult(x, 0, [0.0])
    r = rhs.copy()
    p = r.copy()
    rs = bnorm * bnorm
    history = [1.0]
    it = 0
    while it < max_iter and history[-1] > tol:
        it += 1
        ap = normal_op(p)
        pap = np.vdot(p, ap).real
        _check_finite(pap, it, "curvature")
        if pap <= 0:
            break
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        rs_new = np.vdot(r, r).real
        _check_finite(rs_new, it, "residual")
        history.append(math.sqrt(rs_new) / bnorm)
        p *= rs_new / rs
        p += r
        rs = rs_new
    return CGResult(x, it, history)


def cr_solve(normal_op, rhs: np.ndarray, tol: float, max_iter: int) -> CGResult:
    """Conjugate-residual variant of CG.

    Same Krylov subspaces and stopping rule as :func:`cg_solve`, but each
    iterate minimizes the residual norm, so the relative residual history is
    non-increasing. One operator application per iteration plus one at the
    start.
    """
    x = np.zeros_like(rhs)
    bnorm = math.sqrt(np.vdot(rhs, rhs).real)
    if bnorm == 0:
        return CGResult(x, 0, [0.0])
    r = rhs.copy()
    ar = normal_op(r)
    p = r.copy()
    ap = ar.copy()
    rar = np.vdot(r, ar).real
    history = [1.0]
    it = 0
    while it < max_iter and history[-1] > tol:
        it += 1
        apap = np.vdot(ap, ap).real
        _check_finite(apap, it, "curvature")
        if apap == 0 or rar <= 0:
            break
        alpha = rar / apap
        x += alpha * p
        r -= alpha * ap
        rnorm = math.sqrt(np.vdot(r, r).real)
        _check_finite(rnorm, it, "residual")
        history.append(rnorm / bnorm)
        if history[-1] <= tol or it == max_iter:
            break
        ar = normal_op(r)
        rar_new = np.vdot(r, ar).real
        _check_finite(rar_new, it, "residual energy")
        beta = rar_new / rar
        p *= beta
        p += r
        ap *= beta
        ap += ar
        rar = rar_new
    return CGResult(x, it, history)


_SOLVERS = {"cg": cg_solve, "cr": cr_solve}


def tikhonov_normal_operator(mask: CartesianMask, smaps: np.ndarray, lam: float):
    """``x -> A^H M A x + lam x`` in the centered image layout.

    The mask selects whole phase-encode columns, so the readout-direction
    transforms cancel and only 1D transforms along the width remain. The
    returned operator works on images that have been ``ifftshift``-ed along
    the width axis; :func:`reconstruct_cg_tikhonov` handles the shifts.
    """
    s = np.fft.ifftshift(np.asarray(smaps), axes=-1)
    sc = np.conj(s)
    keep = np.fft.ifftshift(mask.as_array())

    def op(x):
        k = np.fft.fft(s * x, axis=-1, norm="ortho")
        k *= keep
        out = np.fft.ifft(k, axis=-1, norm="ortho")
        out *= sc
        res = out.sum(axis=0)
        res += lam * x
        return res

    return op


def solve_cg_tikhonov(y_masked, mask: CartesianMask, smaps, cfg: ReconConfig) -> CGResult:
    rhs = adjoint(apply_mask(y_masked, mask), smaps)
    op = tikhonov_normal_operator(mask, smaps, cfg.lam)
    solve = _SOLVERS[cfg.solver]
    res = solve(op, np.fft.ifftshift(rhs, axes=-1), cfg.cg_tol, cfg.cg_max_iter)
    res.image = np.fft.fftshift(res.image, axes=-1)
    return res


def reconstruct_cg_tikhonov(y_masked, mask: CartesianMask, smaps, cfg: ReconConfig) -> np.ndarray:
    return solve_cg_tikhonov(y_masked, mask, smaps, cfg).image


class ZeroFilled:
    def reconstruct(self, y_masked, mask, smaps):
        return reconstruct_zero_filled(y_masked, mask, smaps)

    def __repr__(self):
        return "ZeroFilled()"


class CGTikhonov:
    def __init__(self, cfg: ReconConfig | None = None, **kwargs):
        self.cfg = cfg if cfg is not None else ReconConfig(**kwargs)

    def reconstruct(self, y_masked, mask, smaps):
        return reconstruct_cg_tikhonov(y_masked, mask, smaps, self.cfg)

    def __repr__(self):
        return f"CGTikhonov({self.cfg!r})"


def make_reconstructor(cfg: ReconConfig, lam: float | None = None) -> Reconstructor:
    if cfg.method == "zero_filled":
        return ZeroFilled()
    return CGTikhonov(cfg if lam is None else cfg.with_lambda(lam))


def scan_loss(scan: ScanRecord, mask: CartesianMask, recon: Reconstructor, crop=None) -> float:
    """NRMSE of the reconstruction from ``mask`` on the central crop."""
    if crop is None:
        crop = default_crop(*scan.shape)
    est = recon.reconstruct(apply_mask(scan.kspace_full, mask), mask, scan.smaps)
    return nrmse(central_crop(scan.ground_truth, *crop), central_crop(est, *crop))


def lambda_curve(
    records: Sequence[ScanRecord],
    masks: Sequence[CartesianMask],
    grid: Sequence[float],
    cfg: ReconConfig,
    crop=None,
) -> list[float]:
    """Mean training NRMSE for each grid value, in grid order."""
    if not records:
        raise UsageError("cannot fit lambda on an empty split")
    if len(records) != len(masks):
        raise UsageError("one mask per training scan is required")
    if len(grid) == 0:
        raise UsageError("lambda grid is empty")
    out = []
    for lam in grid:
        rec = CGTikhonov(cfg.with_lambda(lam))
        losses = [scan_loss(s, m, rec, crop) for s, m in zip(records, masks)]
        out.append(float(np.mean(losses)))
    return out


def fit_lambda(records, masks, grid, cfg: ReconConfig, crop=None) -> float:
    """Grid value minimizing mean NRMSE; ties go to the smaller lambda."""
    curve = lambda_curve(records, masks, grid, cfg, crop)
    best = min(range(len(grid)), key=lambda i: (curve[i], grid[i]))
    return float(grid[best])


def local_adapt(dictionary, train, neighbor_ids, grid, cfg: ReconConfig, crop=None) -> float:
    """Refit lambda on a neighborhood, each neighbor using its dictionary mask."""
    if not neighbor_ids:
        raise UsageError("neighbor list is empty")
    records_in = train.split("train") if hasattr(train, "split") else train
    by_id = {r.id: r for r in records_in}
    records, masks = [], []
    for sid in neighbor_ids:
        if sid not in by_id:
            raise LookupFailure(f"neighbor {sid!r} is not a training scan")
        records.append(by_id[sid])
        masks.append(dictionary.mask_for(sid))
    return fit_lambda(records, masks, grid, cfg, crop)
