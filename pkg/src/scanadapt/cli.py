"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .dictionary import MaskDictionary
from .errors import DataError, NumericalError, ScanAdaptError, StageError, UsageError
from .metrics import evaluate
from .mrimodel import CartesianMask, apply_mask
from .phantom import PhantomSpec, generate_dataset
from .pipeline import ALL_KINDS, RunManifest, TrainResult, alternating_train, bench, emit_reports
from .recon import ReconConfig, make_reconstructor
from .sampling import mask_low_frequency

log = logging.getLogger("scanadapt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
TRAINING_FILE = "training.json"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here usage errors exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def _manifest(args) -> RunManifest:
    m = RunManifest.from_dict(_read_json(args.manifest)) if args.manifest else RunManifest()
    if args.seed is not None:
        m = replace(m, seed=args.seed)
    return m


def cmd_phantom_gen(args):
    d = _read_json(args.spec) if args.spec else {}
    if args.seed is not None:
        d["seed"] = args.seed
    spec = PhantomSpec.from_dict(d)
    ds = generate_dataset(
        spec, d.get("n_train", 40), d.get("n_val", 8), d.get("n_test", 8)
    )
    write_container(args.out, ds)
    log.info("wrote %d scans to %s", len(ds), args.out)


def cmd_train(args):
    ds = read_container(args.data)
    manifest = _manifest(args)
    result = alternating_train(ds, manifest, args.threads)
    out = Path(args.out)
    result.dictionary.save(out)
    info = {"manifest": manifest.to_dict(), **result.summary()}
    (out / TRAINING_FILE).write_text(json.dumps(info, indent=1) + "\n")
    print(json.dumps({"lambda": result.lam, "entries": len(result.dictionary), "logs": result.logs}))


def cmd_select(args):
    ds = read_container(args.data)
    d = MaskDictionary.load(args.dict)
    scan = ds.get(args.scan)
    lf = mask_low_frequency(scan.shape[1], d.n_low_freq)
    mask, sid, dist = d.select_mask(apply_mask(scan.kspace_full, lf), scan.smaps)
    if args.out:
        mask.save(args.out)
    print(json.dumps({"scan": scan.id, "neighbor": sid, "distance": dist, "mask": mask.to_dict()}))


def cmd_recon(args):
    ds = read_container(args.data)
    scan = ds.get(args.scan)
    mask = CartesianMask.load(args.mask)
    cfg = ReconConfig(method=args.method)
    rec = make_reconstructor(cfg, args.lam)
    img = rec.reconstruct(apply_mask(scan.kspace_full, mask), mask, scan.smaps)
    if args.out:
        np.save(args.out, img)
    rep = evaluate(scan.ground_truth, img)
    print(json.dumps({"scan": scan.id, "nrmse": rep.nrmse, "ssim": rep.ssim, "psnr_db": rep.psnr_db}))


def _load_image(path, data=None, scan=None):
    if path is not None:
        try:
            return np.load(path)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load image {path}: {exc}") from exc
    if data is None or scan is None:
        raise UsageError("give --ref, or --data together with --scan")
    return read_container(data).get(scan).ground_truth


def cmd_eval(args):
    pred = _load_image(args.pred)
    ref = _load_image(args.ref, args.data, args.scan)
    crop = tuple(args.crop) if args.crop else None
    rep = evaluate(ref, pred, crop)
    print(json.dumps({"nrmse": rep.nrmse, "ssim": rep.ssim, "psnr_db": rep.psnr_db, "crop": rep.crop}))


def cmd_bench(args):
    ds = read_container(args.data)
    manifest = _manifest(args)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    prior = None
    if args.dict:
        info = _read_json(Path(args.dict) / TRAINING_FILE)
        prior = TrainResult(MaskDictionary.load(args.dict), info["lambda"], {}, {}, info.get("logs", []))
    report, _ = bench(ds, manifest, kinds, args.threads, prior)
    emit_reports(report, args.out, manifest.error_display_max)
    for kind, agg in report.aggregate().items():
        print(
            f"{kind:16s} nrmse {agg['nrmse']['mean']:.5f} ± {agg['nrmse']['std']:.5f}"
            f"  ssim {agg['ssim']['mean']:.4f}  psnr {agg['psnr_db']['mean']:.2f} dB"
        )


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the copy on
    # the subcommands suppresses defaults so it cannot clobber earlier values
    def flags(with_defaults):
        def dflt(v):
            return v if with_defaults else argparse.SUPPRESS

        f = _Parser(add_help=False)
        f.add_argument("--threads", type=int, default=dflt(1), help="worker threads, 0 = all cores")
        f.add_argument("--seed", type=int, default=dflt(None), help="override the spec or manifest seed")
        f.add_argument("--verbose", "-v", action="store_true", default=dflt(False))
        return f

    common = flags(False)
    p = _Parser(prog="scanadapt", description=__doc__.splitlines()[0], parents=[flags(True)])
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    ph = sub.add_parser("phantom", help="synthetic data")
    phsub = ph.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    phsub.required = True
    g = phsub.add_parser("gen", parents=[common], help="simulate a phantom dataset")
    g.add_argument("--spec", help="phantom spec JSON (defaults apply when omitted)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_phantom_gen)

    t = sub.add_parser("train", parents=[common], help="optimize masks and build the dictionary")
    t.add_argument("--data", required=True)
    t.add_argument("--manifest")
    t.add_argument("--out", required=True, help="dictionary directory")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("select", parents=[common], help="pick a mask for one scan")
    s.add_argument("--dict", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--scan", required=True)
    s.add_argument("--out", help="write the selected mask JSON here")
    s.set_defaults(func=cmd_select)

    r = sub.add_parser("recon", parents=[common], help="reconstruct one scan from a mask")
    r.add_argument("--data", required=True)
    r.add_argument("--scan", required=True)
    r.add_argument("--mask", required=True)
    r.add_argument("--lambda", dest="lam", type=float, default=None)
    r.add_argument("--method", choices=("cg_tikhonov", "zero_filled"), default="cg_tikhonov")
    r.add_argument("--out", help="save the complex image as .npy")
    r.set_defaults(func=cmd_recon)

    e = sub.add_parser("eval", parents=[common], help="metrics of a prediction against a reference")
    e.add_argument("--pred", required=True, help=".npy image")
    e.add_argument("--ref", help=".npy image")
    e.add_argument("--data", help="container holding the reference scan")
    e.add_argument("--scan")
    e.add_argument("--crop", type=int, nargs=2, metavar=("H", "W"))
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="compare mask kinds on the test split")
    b.add_argument("--data", required=True)
    b.add_argument("--manifest")
    b.add_argument("--kinds", default=",".join(ALL_KINDS), help="comma-separated mask kinds")
    b.add_argument("--dict", help="reuse a trained dictionary instead of training")
    b.add_argument("--out", default="bench_out")
    b.set_defaults(func=cmd_bench)
    return p


def _exit_code(exc) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 0:
        parser.error("--threads must be non-negative")
    try:
        args.func(args)
    except ScanAdaptError as exc:
        print(f"scanadapt: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"scanadapt: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
