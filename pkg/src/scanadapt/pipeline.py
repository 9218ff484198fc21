"""End-to-end training, test-time selection and benchmarking."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as _rng
from .dictionary import MaskDictionary, build_dictionary
from .errors import NumericalError, ScanAdaptError, StageError, UsageError
from .metrics import MetricReport, default_crop, evaluate
from .mrimodel import CartesianMask, apply_mask
from .recon import ReconConfig, local_adapt, make_reconstructor, scan_loss
from .sampling import (
    SamplerConfig,
    greedy_optimize,
    icd_optimize,
    mask_equispaced,
    mask_low_frequency,
    mask_uniform_random,
    mask_vdpd_1d,
)

log = logging.getLogger(__name__)

SCHEMA = "suno-manifest/1"
BASELINE_KINDS = ("lf", "equispaced", "uniform_random", "vdpd")
ALL_KINDS = BASELINE_KINDS + ("suno", "oracle")
INIT_KINDS = ("uniform_random", "lf", "equispaced", "vdpd", "provided")
CSV_COLUMNS = ("id", "mask_kind", "accel", "nrmse", "ssim", "psnr_db")


def derive_seed(seed: int, stream: int, index: int) -> int:
    return int(_rng.make_rng(seed, stream, index).integers(0, 2**63))


@dataclass
class RunManifest:
    accel: float | str = 4
    budget: int | None = None
    n_center: int | None = None
    center_fraction: float = 1 / 3
    n_iter: int = 1
    loss: str = "nrmse"
    recon: ReconConfig = field(default_factory=ReconConfig)
    lambda_grid: list[float] = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1])
    rounds: int = 2
    init: str = "uniform_random"
    init_masks: str | None = None
    greedy: bool = True
    n_low_freq: int | None = None
    vdpd_density_power: float = 2.0
    local_k: int | None = None
    seed: int = 0
    dataset: str | None = None
    error_display_max: float = 0.1

    def __post_init__(self):
        if isinstance(self.recon, dict):
            self.recon = ReconConfig.from_dict(self.recon)
        if self.accel == "custom":
            if self.budget is None:
                raise UsageError("accel 'custom' requires an explicit budget")
        elif not (isinstance(self.accel, (int, float)) and self.accel >= 1):
            raise UsageError(f"accel must be >= 1 or 'custom', got {self.accel!r}")
        if self.rounds < 0:
            raise UsageError("rounds must be non-negative")
        if self.init not in INIT_KINDS:
            raise UsageError(f"unknown init kind {self.init!r}")
        if self.init == "provided" and not self.init_masks:
            raise UsageError("init 'provided' requires init_masks (a directory of mask JSON files)")
        if not self.lambda_grid:
            raise UsageError("lambda_grid is empty")
        if not 0 <= self.center_fraction <= 1:
            raise UsageError("center_fraction must lie in [0, 1]")
        self.lambda_grid = [float(v) for v in self.lambda_grid]
        # validates n_iter and loss
        SamplerConfig(1, 0, self.n_iter, self.loss)

    def counts(self, n_y: int) -> tuple[int, int]:
        """``(budget, n_center)``: ``round(n_y/accel)`` and ``floor(budget*fraction)``."""
        if self.budget is not None:
            budget = self.budget
        else:
            budget = int(math.floor(n_y / float(self.accel) + 0.5))
        if self.n_center is not None:
            c = self.n_center
        else:
            c = int(math.floor(budget * self.center_fraction + 1e-9))
        SamplerConfig(budget, c).check(n_y)
        return budget, c

    def sampler(self, n_y: int) -> SamplerConfig:
        b, c = self.counts(n_y)
        return SamplerConfig(b, c, self.n_iter, self.loss, self.seed)

    def accel_label(self, n_y: int):
        if self.accel == "custom":
            return n_y / self.counts(n_y)[0]
        return self.accel

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            d[name] = v.to_dict() if isinstance(v, ReconConfig) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        schema = d.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise UsageError(f"unsupported manifest schema {schema!r}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise UsageError(f"unknown manifest fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def resolve_threads(threads: int | None) -> int:
    if not threads:
        return os.cpu_count() or 1
    return int(threads)


def _map_scans(fn, records, threads, stage):
    """Apply ``fn`` per scan, in order, wrapping failures with the stage and scan id."""

    def run(rec):
        try:
            return fn(rec)
        except StageError:
            raise
        except ScanAdaptError as exc:
            raise StageError(stage, rec.id, exc) from exc

    threads = resolve_threads(threads)
    if threads <= 1 or len(records) <= 1:
        return [run(r) for r in records]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, records))


def baseline_mask(kind, n_y, budget, n_center, seed, density_power=2.0) -> CartesianMask:
    if kind == "lf":
        return mask_low_frequency(n_y, budget, n_center)
    if kind == "equispaced":
        return mask_equispaced(n_y, budget, n_center)
    if kind == "uniform_random":
        return mask_uniform_random(n_y, budget, n_center, seed)
    if kind == "vdpd":
        return mask_vdpd_1d(n_y, budget, n_center, seed, density_power)
    raise UsageError(f"unknown baseline mask kind {kind!r}")


def _per_scan_baselines(kind, records, dataset_index, manifest, n_y, stream):
    budget, c = manifest.counts(n_y)
    return {
        r.id: baseline_mask(
            kind, n_y, budget, c,
            derive_seed(manifest.seed, stream, dataset_index[r.id]),
            manifest.vdpd_density_power,
        )
        for r in records
    }


def _fit(records, masks, manifest, threads, crop):
    """Refit lambda on the grid; returns (lambda, per-scan losses at lambda)."""
    rcfg = manifest.recon
    if rcfg.method == "zero_filled":
        rec = make_reconstructor(rcfg)
        losses = _map_scans(lambda r: scan_loss(r, masks[r.id], rec, crop), records, threads, "fit_lambda")
        return rcfg.lam, losses
    table = []
    for lam in manifest.lambda_grid:
        rec = make_reconstructor(rcfg, lam)
        table.append(
            _map_scans(lambda r: scan_loss(r, masks[r.id], rec, crop), records, threads, "fit_lambda")
        )
    means = [float(np.mean(row)) for row in table]
    best = min(range(len(means)), key=lambda i: (means[i], manifest.lambda_grid[i]))
    return manifest.lambda_grid[best], table[best]


@dataclass
class TrainResult:
    dictionary: MaskDictionary
    lam: float
    masks: dict
    losses: dict
    logs: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)
    recon_calls: int = 0
    timings: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "lambda": self.lam,
            "logs": self.logs,
            "recon_calls": self.recon_calls,
            "timings": self.timings,
        }


def _load_provided_masks(directory, records):
    directory = Path(directory)
    return {r.id: CartesianMask.load(directory / f"{r.id}.mask.json") for r in records}


def alternating_train(dataset, manifest: RunManifest, threads: int = 1) -> TrainResult:
    """Alternate lambda refits with per-scan mask optimization.

    Round 0 initializes masks, fits lambda and (unless disabled) replaces the
    masks by greedy selections. Each later round refits lambda on the current
    masks, then runs ICD per scan from them.
    """
    records = dataset.split("train")
    if not records:
        raise UsageError("training split is empty")
    n_y = dataset.shape[1]
    scfg = manifest.sampler(n_y)
    crop = default_crop(*dataset.shape)
    index = {r.id: i for i, r in enumerate(dataset.records)}
    logs, traces, timings = [], {}, {}
    calls = 0

    def stamp(stage, start):
        timings[stage] = timings.get(stage, 0.0) + time.perf_counter() - start

    t0 = time.perf_counter()
    if manifest.init == "provided":
        masks = _load_provided_masks(manifest.init_masks, records)
    else:
        masks = _per_scan_baselines(manifest.init, records, index, manifest, n_y, _rng.INIT_MASKS)
    lam, losses = _fit(records, masks, manifest, threads, crop)
    stamp("fit_lambda", t0)
    logs.append({"round": 0, "stage": "fit_lambda", "lambda": lam, "mean_loss": float(np.mean(losses))})
    log.info("round 0: lambda=%g mean loss %.6f (init %s)", lam, np.mean(losses), manifest.init)
    losses = dict(zip((r.id for r in records), losses))

    if manifest.greedy:
        t0 = time.perf_counter()
        rec = make_reconstructor(manifest.recon, lam)
        out = _map_scans(lambda r: greedy_optimize(r, rec, scfg, crop=crop), records, threads, "greedy")
        stamp("greedy", t0)
        for r, (m, tr) in zip(records, out):
            masks[r.id] = m
            losses[r.id] = tr.final_loss
            traces[(0, r.id)] = tr
            calls += tr.recon_calls
        logs.append({"round": 0, "stage": "greedy", "lambda": lam, "mean_loss": float(np.mean(list(losses.values())))})
        log.info("round 0: greedy mean loss %.6f", logs[-1]["mean_loss"])

    for rnd in range(1, manifest.rounds + 1):
        t0 = time.perf_counter()
        lam, fitted = _fit(records, masks, manifest, threads, crop)
        stamp("fit_lambda", t0)
        losses = dict(zip((r.id for r in records), fitted))
        logs.append({"round": rnd, "stage": "fit_lambda", "lambda": lam, "mean_loss": float(np.mean(fitted))})

        t0 = time.perf_counter()
        rec = make_reconstructor(manifest.recon, lam)
        out = _map_scans(
            lambda r: icd_optimize(r, rec, scfg, masks[r.id], init_loss=losses[r.id], crop=crop),
            records, threads, "icd",
        )
        stamp("icd", t0)
        for r, (m, tr) in zip(records, out):
            masks[r.id] = m
            losses[r.id] = tr.final_loss
            traces[(rnd, r.id)] = tr
            calls += tr.recon_calls
        logs.append({"round": rnd, "stage": "icd", "lambda": lam, "mean_loss": float(np.mean(list(losses.values())))})
        log.info("round %d: lambda=%g ICD mean loss %.6f", rnd, lam, logs[-1]["mean_loss"])

    t0 = time.perf_counter()
    n_lf = manifest.n_low_freq or max(scfg.n_center, 1)
    dictionary = build_dictionary(records, masks, n_lf, crop)
    stamp("dictionary", t0)
    return TrainResult(dictionary, lam, masks, losses, logs, traces, calls, timings)


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    masks: dict = field(default_factory=dict)
    images: dict = field(default_factory=dict)
    references: dict = field(default_factory=dict)
    lambdas: dict = field(default_factory=dict)
    neighbors: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    recon_calls: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    train_logs: list = field(default_factory=list)

    def kinds(self):
        seen = []
        for r in self.rows:
            if r["mask_kind"] not in seen:
                seen.append(r["mask_kind"])
        return seen

    def values(self, kind, metric="nrmse"):
        return [r[metric] for r in self.rows if r["mask_kind"] == kind]

    def mean(self, kind, metric="nrmse"):
        return float(np.mean(self.values(kind, metric)))

    def aggregate(self) -> dict:
        out = {}
        for kind in self.kinds():
            out[kind] = {"count": len(self.values(kind))}
            for metric in ("nrmse", "ssim", "psnr_db"):
                v = np.asarray(self.values(kind, metric), dtype=float)
                std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
                out[kind][metric] = {"mean": float(np.mean(v)), "std": std}
        return out

    def add(self, scan, kind, accel, mask, image, crop):
        rep: MetricReport = evaluate(scan.ground_truth, image, crop)
        self.rows.append(
            {
                "id": scan.id,
                "mask_kind": kind,
                "accel": accel,
                "nrmse": rep.nrmse,
                "ssim": rep.ssim,
                "psnr_db": rep.psnr_db,
            }
        )
        self.masks[(scan.id, kind)] = mask
        self.images[(scan.id, kind)] = image
        self.references[scan.id] = scan.ground_truth


def _reconstruct(scan, mask, manifest, lam):
    rec = make_reconstructor(manifest.recon, lam)
    return rec.reconstruct(apply_mask(scan.kspace_full, mask), mask, scan.smaps)


def test_pipeline(
    dictionary: MaskDictionary,
    lam: float,
    test_records,
    manifest: RunManifest,
    threads: int = 1,
    train=None,
    report: BenchReport | None = None,
) -> BenchReport:
    """Select each test scan's mask from its calibration lines, reconstruct, score.

    With ``manifest.local_k`` set and ``train`` given, a second row kind
    ``suno_local`` reconstructs with lambda refit on the K nearest neighbors.
    """
    if len(dictionary) == 0:
        raise UsageError("dictionary is empty")
    report = report if report is not None else BenchReport()
    test_records = list(test_records)
    if not test_records:
        return report
    n_y = test_records[0].shape[1]
    crop = default_crop(*test_records[0].shape)
    accel = manifest.accel_label(n_y)
    b, c = manifest.counts(n_y)
    lf = mask_low_frequency(n_y, dictionary.n_low_freq)

    def one(scan):
        calib = apply_mask(scan.kspace_full, lf)
        mask, sid, dist = dictionary.select_mask(calib, scan.smaps)
        if mask.budget != b:
            raise UsageError(f"dictionary mask has {mask.budget} lines, manifest budget is {b}")
        out = {"mask": mask, "neighbor": sid, "distance": dist,
               "image": _reconstruct(scan, mask, manifest, lam)}
        if manifest.local_k and train is not None:
            feat = dictionary.feature(calib, scan.smaps)
            ids = [i for i, _ in dictionary.k_nearest(feat, manifest.local_k)]
            lam_local = local_adapt(dictionary, train, ids, manifest.lambda_grid, manifest.recon, crop)
            out["lam_local"] = lam_local
            out["image_local"] = _reconstruct(scan, mask, manifest, lam_local)
        return out

    t0 = time.perf_counter()
    results = _map_scans(one, test_records, threads, "select")
    report.timings["select"] = report.timings.get("select", 0.0) + time.perf_counter() - t0
    report.lambdas["suno"] = lam
    for scan, res in zip(test_records, results):
        report.add(scan, "suno", accel, res["mask"], res["image"], crop)
        report.neighbors[scan.id] = {"neighbor": res["neighbor"], "distance": res["distance"]}
        if "image_local" in res:
            report.add(scan, "suno_local", accel, res["mask"], res["image_local"], crop)
            report.neighbors[scan.id]["lambda_local"] = res["lam_local"]
    return report


test_pipeline.__test__ = False  # keep pytest from collecting it when imported


def bench(
    dataset,
    manifest: RunManifest,
    kinds=ALL_KINDS,
    threads: int = 1,
    train_result: TrainResult | None = None,
) -> tuple[BenchReport, TrainResult | None]:
    """Compare mask kinds on the test split.

    Baseline kinds get their own lambda, fitted on the training split with
    masks of that kind. ``suno`` uses the trained dictionary and lambda;
    ``oracle`` runs ICD on each test scan against its ground truth, starting
    from the SUNO-selected mask, so it can only match or improve on it.
    """
    kinds = list(dict.fromkeys(kinds))
    if not kinds:
        raise UsageError("no mask kinds requested")
    for k in kinds:
        if k not in ALL_KINDS:
            raise UsageError(f"unknown mask kind {k!r}; choose from {', '.join(ALL_KINDS)}")
    test = dataset.split("test")
    train = dataset.split("train")
    if not test:
        raise UsageError("test split is empty")
    n_y = dataset.shape[1]
    crop = default_crop(*dataset.shape)
    accel = manifest.accel_label(n_y)
    index = {r.id: i for i, r in enumerate(dataset.records)}
    report = BenchReport()

    for kind in kinds:
        if kind not in BASELINE_KINDS:
            continue
        t0 = time.perf_counter()
        stream = _rng.TEST_DATA + 1 + BASELINE_KINDS.index(kind)
        if train:
            train_masks = _per_scan_baselines(kind, train, index, manifest, n_y, stream)
            lam, _ = _fit(train, train_masks, manifest, threads, crop)
        else:
            lam = manifest.recon.lam
        test_masks = _per_scan_baselines(kind, test, index, manifest, n_y, stream)
        images = _map_scans(lambda s: _reconstruct(s, test_masks[s.id], manifest, lam), test, threads, kind)
        for scan, img in zip(test, images):
            report.add(scan, kind, accel, test_masks[scan.id], img, crop)
        report.lambdas[kind] = lam
        report.timings[kind] = time.perf_counter() - t0

    if "suno" in kinds or "oracle" in kinds:
        if train_result is None:
            t0 = time.perf_counter()
            train_result = alternating_train(dataset, manifest, threads)
            report.timings["train"] = time.perf_counter() - t0
        report.train_logs = train_result.logs
        report.recon_calls["train"] = train_result.recon_calls
        sub = BenchReport()
        test_pipeline(train_result.dictionary, train_result.lam, test, manifest, threads, train, sub)
        report.neighbors = sub.neighbors
        report.timings.update(sub.timings)
        if "suno" in kinds:
            report.rows += [r for r in sub.rows if r["mask_kind"] in ("suno", "suno_local")]
            report.masks.update(sub.masks)
            report.images.update(sub.images)
            report.references.update(sub.references)
            report.lambdas["suno"] = train_result.lam
        if "oracle" in kinds:
            t0 = time.perf_counter()
            scfg = manifest.sampler(n_y)
            lam = train_result.lam
            rec = make_reconstructor(manifest.recon, lam)
            start = {s.id: sub.masks[(s.id, "suno")] for s in test}
            start_loss = {r["id"]: r["nrmse"] for r in sub.rows if r["mask_kind"] == "suno"}
            use_cache = manifest.loss == "nrmse"

            def oracle(s):
                return icd_optimize(
                    s, rec, scfg, start[s.id],
                    init_loss=start_loss[s.id] if use_cache else None, crop=crop,
                )

            out = _map_scans(oracle, test, threads, "oracle")
            calls = 0
            for scan, (m, tr) in zip(test, out):
                calls += tr.recon_calls
                report.traces[scan.id] = tr
                report.add(scan, "oracle", accel, m, _reconstruct(scan, m, manifest, lam), crop)
            report.recon_calls["oracle"] = calls
            report.lambdas["oracle"] = lam
            report.timings["oracle"] = time.perf_counter() - t0
    return report, train_result


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in report.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            for c in ("nrmse", "ssim", "psnr_db"):
                r[c] = float(r[c])
            rows.append(r)
    return rows


def write_pgm(path, img8: np.ndarray) -> None:
    """8-bit binary portable graymap (P5)."""
    img8 = np.ascontiguousarray(img8, dtype=np.uint8)
    h, w = img8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img8.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def to_display(values: np.ndarray, vmax: float) -> np.ndarray:
    """Map ``[0, vmax]`` linearly onto 0..255, clipping outside."""
    return np.round(np.clip(np.asarray(values, dtype=float) / vmax, 0.0, 1.0) * 255).astype(np.uint8)


def mask_image(mask: CartesianMask, height: int) -> np.ndarray:
    row = np.where(mask.as_array(), 255, 0).astype(np.uint8)
    return np.repeat(row[None, :], height, axis=0)


def emit_reports(report: BenchReport, out_dir, error_display_max: float = 0.1) -> None:
    """Write metrics.csv, summary.json, mask JSON files and PGM images."""
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out / "metrics.csv")
    summary = {
        "aggregate": report.aggregate(),
        "lambdas": report.lambdas,
        "recon_calls": report.recon_calls,
        "timings_s": report.timings,
        "neighbors": report.neighbors,
        "train_logs": report.train_logs,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    for (sid, kind), mask in sorted(report.masks.items()):
        mask.save(out / "masks" / f"{sid}__{kind}.json")
    for sid, ref in sorted(report.references.items()):
        peak = float(np.max(np.abs(ref)))
        write_pgm(out / "images" / f"{sid}__reference.pgm", to_display(np.abs(ref) / peak, 1.0))
    for (sid, kind), img in sorted(report.images.items()):
        ref = report.references[sid]
        peak = float(np.max(np.abs(ref)))
        mag = np.abs(img) / peak
        err = np.abs(np.abs(img) - np.abs(ref)) / peak
        write_pgm(out / "images" / f"{sid}__{kind}_recon.pgm", to_display(mag, 1.0))
        write_pgm(out / "images" / f"{sid}__{kind}_error.pgm", to_display(err, error_display_max))
        write_pgm(out / "images" / f"{sid}__{kind}_mask.pgm", mask_image(report.masks[(sid, kind)], ref.shape[0]))
