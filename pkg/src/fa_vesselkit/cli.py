"""Command-line entry point.

Every command reads files, writes files and prints a JSON report to stdout.
Exit status: 0 success, 1 domain error (one JSON object on stderr), 2 usage.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .chamfer_em import EMConfig, register
from .geometry import TransformParams
from .hitl import IterationManifest, advance_iteration, mask_diff, run_predict_hook
from .metrics import curve, summary, write_curves_csv
from .morphvessel import MorphParams, detect_vessels
from .raster import load_gray, load_mask, save_gray, save_mask, save_soft
from .synth import PhantomSpec, WarpSpec, gen_phantom, perturb
from .transfer import make_training_pair, write_training_pair

FORMAT_VERSION = f"fa-vesselkit/{__version__}"


class DomainError(Exception):
    pass


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DomainError(f"malformed JSON in {path}: {exc}") from exc


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise DomainError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def _resolve(path, overrides) -> dict:
    data = _read_json(path) if path else {}
    if not isinstance(data, dict):
        raise DomainError(f"{path} must hold a JSON object")
    data.update(overrides)
    return data


def _report(command, config, **fields):
    return {"format_version": FORMAT_VERSION, "command": command, "config": config, **fields}


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def _load_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(r[0]), float(r[1])] for r in rows if r], dtype=np.float64).reshape(-1, 2)


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


# --------------------------------------------------------------- commands


def cmd_detect(args):
    params = MorphParams.from_dict(_resolve(args.params, _overrides(args.set)))
    img = load_gray(args.input)
    mask, soft = detect_vessels(img, params)
    save_mask(mask, args.out_mask)
    if args.out_soft:
        save_soft(soft, args.out_soft)
    return _report("detect", params.to_dict(), vessel_pixels=int(mask.sum()),
                   shape=list(mask.shape))


def cmd_register(args):
    cfg = EMConfig.from_dict(_resolve(args.config, _overrides(args.set)))
    reference = load_mask(args.reference)
    if str(args.moving).lower().endswith(".csv"):
        moving = _load_points_csv(args.moving)
    else:
        moving = load_mask(args.moving)
    rep = register(reference, moving, cfg)
    rep.final.save(args.out_transform)
    report = _report("register", cfg.to_dict(), **rep.to_dict())
    if args.report:
        _write_json(args.report, report)
    if args.posteriors:
        with open(args.posteriors, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "d", "p"])
            for i, d, p in zip(rep.point_index, rep.distances, rep.posteriors):
                w.writerow([int(i), repr(float(d)), repr(float(p))])
    return report


def cmd_transfer(args):
    t = TransformParams.from_dict(_read_json(args.transform))
    fa = load_gray(args.fa)
    vessels = load_mask(args.cf_vessels)
    cf_fov = load_mask(args.cf_fov) if args.cf_fov else None
    fa_fov = load_mask(args.fa_fov) if args.fa_fov else None
    pair = make_training_pair(fa, vessels, t, cf_fov=cf_fov, fa_fov=fa_fov)
    entry = write_training_pair(pair, args.out_prefix, {"transform": t.to_dict(), "source": "transferred"})
    return _report("transfer", {"transform": t.to_dict()}, entry=entry)


def cmd_eval(args):
    soft = load_gray(args.soft)
    gt = load_mask(args.gt)
    roi = load_mask(args.roi) if args.roi else None
    summ = summary(soft, gt, roi)
    if args.out_curves:
        write_curves_csv(args.out_curves, curve(soft, gt, roi, "roc"), curve(soft, gt, roi, "pr"))
    report = _report("eval", {"thresholds": 257}, **summ)
    if args.out_summary:
        _write_json(args.out_summary, report)
    return report


def cmd_diff(args):
    rep = mask_diff(load_mask(args.before), load_mask(args.after))
    return {**rep.to_dict(), "format_version": FORMAT_VERSION}, rep.summary()


def cmd_synth(args):
    raw = _resolve(args.spec, _overrides(args.set))
    warp_raw = raw.pop("warp", None)
    phantom = PhantomSpec.from_dict(raw.pop("phantom", raw))
    img, mask = gen_phantom(phantom)
    prefix = args.out_prefix
    save_gray(img, f"{prefix}_img.png")
    save_mask(mask, f"{prefix}_mask.png")
    if warp_raw is None:
        warp_raw = {"truth": {"model": "poly2", "beta": [0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0]}}
    warp = WarpSpec.from_dict(warp_raw)
    pts, truth, inlier = perturb(mask, warp, return_inliers=True)
    with open(f"{prefix}_points.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "inlier"])
        for (x, y), flag in zip(pts, inlier):
            w.writerow([repr(float(x)), repr(float(y)), int(flag)])
    truth.save(f"{prefix}_truth.json")
    return _report("synth", {"phantom": phantom.to_dict(), "warp": warp.to_dict()},
                   vessel_pixels=int(mask.sum()), points=int(len(pts)))


def cmd_advance(args):
    manifest = IterationManifest.load(args.manifest)
    if len(args.predicted or []) != len(args.corrected or []):
        raise DomainError("--predicted and --corrected need the same number of masks")
    nxt = advance_iteration(manifest, args.predicted or [], args.corrected or [])
    predictions = []
    if args.predict:
        predictions = run_predict_hook(nxt, args.predict, args.out_dir or ".")
    nxt.save(args.manifest)
    added, removed = nxt.total_effort()
    return _report("advance", {"manifest": args.manifest}, iteration=nxt.iteration,
                   entries=len(nxt.entries), total_added=added, total_removed=removed,
                   predictions=predictions)


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fa-vesselkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=FORMAT_VERSION)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="morphological vessel detection")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--params")
    d.add_argument("--out-mask", required=True)
    d.add_argument("--out-soft")
    d.add_argument("--set", action="append", metavar="KEY=VALUE")
    d.set_defaults(func=cmd_detect)

    r = sub.add_parser("register", help="robust EM chamfer registration")
    r.add_argument("--reference", required=True)
    r.add_argument("--moving", required=True, help="mask PNG or x,y CSV")
    r.add_argument("--config")
    r.add_argument("--out-transform", required=True)
    r.add_argument("--report")
    r.add_argument("--posteriors", help="optional CSV of index, d, p")
    r.add_argument("--set", action="append", metavar="KEY=VALUE")
    r.set_defaults(func=cmd_register)

    t = sub.add_parser("transfer", help="warp CF vessels onto the FA frame")
    t.add_argument("--fa", required=True)
    t.add_argument("--cf-vessels", required=True)
    t.add_argument("--cf-fov")
    t.add_argument("--fa-fov")
    t.add_argument("--transform", required=True)
    t.add_argument("--out-prefix", required=True)
    t.set_defaults(func=cmd_transfer)

    e = sub.add_parser("eval", help="ROC/PR curves, AUC and max Dice")
    e.add_argument("--soft", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--roi")
    e.add_argument("--out-curves")
    e.add_argument("--out-summary")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("diff", help="pixels added/removed between two masks")
    f.add_argument("--before", required=True)
    f.add_argument("--after", required=True)
    f.set_defaults(func=cmd_diff)

    s = sub.add_parser("synth", help="render a phantom and perturbed point set")
    s.add_argument("--spec", required=True)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("advance", help="record a labeling round in a manifest")
    a.add_argument("--manifest", required=True)
    a.add_argument("--predicted", nargs="*")
    a.add_argument("--corrected", nargs="*")
    a.add_argument("--predict", nargs="*", help="images to run the manifest's predict command on")
    a.add_argument("--out-dir")
    a.set_defaults(func=cmd_advance)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (DomainError, ValueError, OSError, KeyError, TypeError, ZeroDivisionError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    if isinstance(result, tuple):
        obj, line = result
        print(json.dumps(obj))
        print(line)
    else:
        print(json.dumps(result, indent=2))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
