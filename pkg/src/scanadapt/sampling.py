"""Phase-encode line selection: fixed baselines and loss-driven optimizers.

The optimizers score a candidate line set by reconstructing the scan from
those lines and comparing against the ground truth on the central crop.
Greedy selection grows the fixed central block one line at a time; the
iterative coordinate descent (ICD) then relocates each movable line to its
best free position, one line at a time, for ``n_iter`` sweeps.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import NumericalError, UsageError
from .metrics import central_crop, default_crop, nrmse, ssim
from .mrimodel import CartesianMask, ScanRecord, apply_mask, center_block

__all__ = [
    "MaskObjective",
    "OptTrace",
    "SamplerConfig",
    "exhaustive_oracle",
    "greedy_call_count",
    "greedy_optimize",
    "icd_call_count",
    "icd_optimize",
    "mask_equispaced",
    "mask_low_frequency",
    "mask_uniform_random",
    "mask_vdpd_1d",
]

ORACLE_LIMIT = 10**5
LOSSES = ("nrmse", "one_minus_ssim")


def _check_counts(n_y, budget, n_center):
    if n_y < 1:
        raise UsageError("n_y must be positive")
    if not 0 <= n_center <= budget <= n_y:
        raise UsageError(
            f"need 0 <= center ({n_center}) <= budget ({budget}) <= n_y ({n_y})"
        )


def _complement(n_y, taken):
    taken = set(taken)
    return [k for k in range(n_y) if k not in taken]


def mask_low_frequency(n_y: int, budget: int, n_center: int = 0) -> CartesianMask:
    """The ``budget`` central lines."""
    _check_counts(n_y, budget, n_center)
    return CartesianMask(n_y, center_block(n_y, budget), center_block(n_y, n_center))


def mask_equispaced(n_y: int, budget: int, n_center: int) -> CartesianMask:
    """Central block plus lines at a uniform stride through the remaining indices."""
    _check_counts(n_y, budget, n_center)
    center = center_block(n_y, n_center)
    rest = _complement(n_y, center)
    extra = budget - n_center
    picks = [rest[(i * len(rest)) // extra] for i in range(extra)] if extra else []
    return CartesianMask(n_y, tuple(sorted(set(center) | set(picks))), center)


def mask_uniform_random(n_y: int, budget: int, n_center: int, seed: int) -> CartesianMask:
    """Central block plus lines drawn uniformly without replacement."""
    _check_counts(n_y, budget, n_center)
    center = center_block(n_y, n_center)
    rest = _complement(n_y, center)
    r = _rng.make_rng(seed, _rng.MASK_UNIFORM)
    picks = r.choice(rest, size=budget - n_center, replace=False) if rest else []
    return CartesianMask(n_y, tuple(sorted(set(center) | {int(v) for v in picks})), center)


def _dart_throw(n_y, center, count, gap, weights, seed):
    """Place ``count`` lines, each at distance >= ``gap`` from every placed line.

    Each throw picks among the currently admissible positions with
    probability proportional to ``weights``, which is the accepted-dart
    distribution of rejection sampling. Returns None when space runs out.
    """
    r = _rng.make_rng(seed, _rng.MASK_VDPD, gap)
    allowed = np.ones(n_y, dtype=bool)
    placed = list(center)
    for k in placed:
        allowed[max(0, k - gap + 1):k + gap] = False
    picks = []
    for _ in range(count):
        idx = np.flatnonzero(allowed)
        if idx.size == 0:
            return None
        w = weights[idx]
        k = int(r.choice(idx, p=w / w.sum()))
        picks.append(k)
        allowed[max(0, k - gap + 1):k + gap] = False
    return picks


def mask_vdpd_1d(
    n_y: int,
    budget: int,
    n_center: int,
    seed: int,
    density_power: float = 2.0,
    return_gap: bool = False,
):
    """1D variable-density Poisson-disc mask.

    Outside the central block, lines are thrown with density
    ``(1 + |k - n_y//2| / (n_y//2)) ** -density_power`` subject to a minimum
    spacing ``g`` to every placed line. ``g`` is the largest spacing for
    which the seeded throw places all lines, found by binary search. With
    ``return_gap`` the pair ``(mask, g)`` is returned.
    """
    _check_counts(n_y, budget, n_center)
    if density_power < 0:
        raise UsageError("density_power must be non-negative")
    center = center_block(n_y, n_center)
    count = budget - n_center
    if count == 0:
        mask = CartesianMask(n_y, center, center)
        return (mask, 1) if return_gap else mask
    mid = max(n_y // 2, 1)
    weights = (1.0 + np.abs(np.arange(n_y) - n_y // 2) / mid) ** (-density_power)

    best = _dart_throw(n_y, center, count, 1, weights, seed)
    if best is None:
        raise UsageError("budget does not fit even at unit spacing")
    lo, hi = 1, n_y
    while lo < hi:
        mid_gap = (lo + hi + 1) // 2
        trial = _dart_throw(n_y, center, count, mid_gap, weights, seed)
        if trial is not None:
            lo, best = mid_gap, trial
        else:
            hi = mid_gap - 1
    mask = CartesianMask(n_y, tuple(sorted(set(center) | set(best))), center)
    return (mask, lo) if return_gap else mask


@dataclass(frozen=True)
class SamplerConfig:
    budget: int
    n_center: int
    n_iter: int = 1
    loss: str = "nrmse"
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_iter < 1:
            raise UsageError("n_iter must be at least 1")
        if self.loss not in LOSSES:
            raise UsageError(f"unknown loss {self.loss!r}")
        if not 0 <= self.n_center <= self.budget:
            raise UsageError("need 0 <= n_center <= budget")

    def check(self, n_y: int) -> None:
        _check_counts(n_y, self.budget, self.n_center)

    @property
    def movable(self) -> int:
        return self.budget - self.n_center


@dataclass
class OptTrace:
    """Optimization log.

    ``recon_calls`` counts fresh candidate evaluations only; the incumbent's
    loss is cached. Evaluating the starting mask (when its loss was not
    supplied) is tallied separately in ``baseline_calls``.
    """

    loss_history: list[float] = field(default_factory=list)
    recon_calls: int = 0
    moved_lines: list[tuple[int | None, int]] = field(default_factory=list)
    initial_loss: float | None = None
    baseline_calls: int = 0

    @property
    def final_loss(self) -> float | None:
        if self.loss_history:
            return self.loss_history[-1]
        return self.initial_loss

    def to_dict(self) -> dict:
        return {
            "loss_history": list(self.loss_history),
            "recon_calls": self.recon_calls,
            "moved_lines": [list(m) for m in self.moved_lines],
            "initial_loss": self.initial_loss,
            "baseline_calls": self.baseline_calls,
        }


class MaskObjective:
    """Loss of reconstructing ``scan`` from a given set of lines."""

    def __init__(self, scan: ScanRecord, recon, loss="nrmse", n_center=0, crop=None):
        if loss not in LOSSES:
            raise UsageError(f"unknown loss {loss!r}")
        self.scan = scan
        self.recon = recon
        self.loss = loss
        self.n_y = scan.shape[1]
        self.center = center_block(self.n_y, n_center)
        self.crop = crop if crop is not None else default_crop(*scan.shape)
        self._ref = central_crop(scan.ground_truth, *self.crop)

    def mask(self, lines) -> CartesianMask:
        return CartesianMask(self.n_y, tuple(sorted(lines)), self.center)

    def __call__(self, lines) -> float:
        m = self.mask(lines)
        try:
            est = self.recon.reconstruct(
                apply_mask(self.scan.kspace_full, m), m, self.scan.smaps
            )
        except NumericalError as exc:
            raise NumericalError(
                f"scan {self.scan.id}: {exc} (lines {list(m.lines)})",
                iteration=exc.iteration,
            ) from exc
        est = central_crop(est, *self.crop)
        if self.loss == "nrmse":
            return nrmse(self._ref, est)
        return 1.0 - ssim(self._ref, est)


@contextmanager
def _mapper(workers):
    if workers is None or workers <= 1:
        yield map
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            yield pool.map


def _score(objective, mapper, base, candidates):
    """Losses of ``base | {c}`` for each candidate, in candidate order."""

    def one(c):
        try:
            return objective(base | {c})
        except NumericalError as exc:
            exc.line = c
            raise

    return list(mapper(one, candidates))


def greedy_call_count(n_y: int, budget: int, n_center: int) -> int:
    return sum(n_y - n_center - j for j in range(budget - n_center))


def icd_call_count(n_y: int, budget: int, n_center: int, n_iter: int) -> int:
    return n_iter * (budget - n_center) * (n_y - budget)


def greedy_optimize(scan: ScanRecord, recon, cfg: SamplerConfig, workers: int = 1, crop=None):
    """Grow the central block by repeatedly adding the loss-minimizing line.

    Ties go to the lowest index. ``loss_history`` records the best loss of
    each step.
    """
    n_y = scan.shape[1]
    cfg.check(n_y)
    objective = MaskObjective(scan, recon, cfg.loss, cfg.n_center, crop)
    lines = set(objective.center)
    trace = OptTrace()
    with _mapper(workers) as mapper:
        for _ in range(cfg.movable):
            cands = _complement(n_y, lines)
            losses = _score(objective, mapper, lines, cands)
            trace.recon_calls += len(cands)
            best = min(range(len(cands)), key=lambda i: (losses[i], cands[i]))
            lines.add(cands[best])
            trace.loss_history.append(losses[best])
            trace.moved_lines.append((None, cands[best]))
    return objective.mask(lines), trace


def icd_optimize(
    scan: ScanRecord,
    recon,
    cfg: SamplerConfig,
    init: CartesianMask,
    workers: int = 1,
    init_loss: float | None = None,
    crop=None,
):
    """Iterative coordinate descent over the movable (non-central) lines.

    Each sweep visits the movable lines of the current mask in ascending
    order. A line is removed and every free position outside the remaining
    set is scored (``n_y - budget`` fresh reconstructions; the line's current
    position keeps its cached loss). The line moves only on strict
    improvement; among equal challengers the lowest index wins. The loss is
    therefore non-increasing.
    """
    n_y = scan.shape[1]
    cfg.check(n_y)
    if init.n_y != n_y:
        raise UsageError(f"initial mask has n_y={init.n_y}, scan has {n_y}")
    if init.budget != cfg.budget:
        raise UsageError(f"initial mask has {init.budget} lines, budget is {cfg.budget}")
    objective = MaskObjective(scan, recon, cfg.loss, cfg.n_center, crop)
    if not set(objective.center) <= set(init.lines):
        raise UsageError("initial mask does not contain the fixed central block")

    current = set(init.lines)
    trace = OptTrace()
    if init_loss is None:
        init_loss = objective(current)
        trace.baseline_calls = 1
    trace.initial_loss = cur_loss = float(init_loss)
    center = set(objective.center)

    with _mapper(workers) as mapper:
        for _ in range(cfg.n_iter):
            for line in sorted(current - center):
                rest = current - {line}
                cands = [k for k in _complement(n_y, rest) if k != line]
                losses = _score(objective, mapper, rest, cands)
                trace.recon_calls += len(cands)
                best = min(range(len(cands)), key=lambda i: (losses[i], cands[i]))
                if losses[best] < cur_loss:
                    current = rest | {cands[best]}
                    cur_loss = losses[best]
                    trace.moved_lines.append((line, cands[best]))
                trace.loss_history.append(cur_loss)
    return objective.mask(current), trace


def exhaustive_oracle(scan: ScanRecord, recon, cfg: SamplerConfig, crop=None):
    """Global optimum over all masks with the fixed center (tiny instances only).

    Ties go to the lexicographically smallest line list.
    """
    n_y = scan.shape[1]
    cfg.check(n_y)
    objective = MaskObjective(scan, recon, cfg.loss, cfg.n_center, crop)
    pool = _complement(n_y, objective.center)
    total = math.comb(len(pool), cfg.movable)
    if total > ORACLE_LIMIT:
        raise UsageError(
            f"exhaustive search over {total} masks exceeds the limit of {ORACLE_LIMIT}"
        )
    center = set(objective.center)
    best_lines, best_loss = None, math.inf
    for combo in itertools.combinations(pool, cfg.movable):
        lines = center | set(combo)
        loss = objective(lines)
        if loss < best_loss or (
            loss == best_loss and sorted(lines) < sorted(best_lines)
        ):
            best_lines, best_loss = lines, loss
    return objective.mask(best_lines), best_loss
