"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error. Diagnostics go to
stderr; machine-readable output goes to stdout or files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .compositor import generate_sample
from .errors import OBAError
from .evalgen import GeneratedTestSpec, build_generated_test, evaluate_run, format_table, write_report
from .geodata import GeoRaster, ensure_dir, load_footprints, load_raster, save_raster
from .objectbank import LABELED, BankIndex, add_backgrounds, extract_objects, load_bank, save_bank
from .sampler import AugPolicy, OriginalCropSource, export_epoch
from .search import MedianPruner, SearchSpace, run_study
from .synthetic import predict_dir, write_dataset

log = logging.getLogger("oba")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


class _Fmt(argparse.ArgumentDefaultsHelpFormatter):
    pass


def _common(p, seed=True, workers=False):
    p.add_argument("--config", help="JSON file of flag defaults (flags override it)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="parallel workers (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="store_true", default=False, help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oba", description="Object-based augmentation for georeferenced segmentation data",
                     formatter_class=_Fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("extract", help="cut objects from scenes by footprint into a bank", formatter_class=_Fmt)
    p.add_argument("--scene", action="append", required=True, help="scene raster (repeatable)")
    p.add_argument("--footprints", action="append", required=True, help="GeoJSON per --scene (repeatable)")
    p.add_argument("--out", required=True, help="bank directory")
    p.add_argument("--padding", type=int, default=0, help="pixels added around each object's bbox")
    _common(p, seed=False)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bank", help="add background sources to a bank", formatter_class=_Fmt)
    p.add_argument("--bank", required=True, help="bank directory")
    p.add_argument("--labeled", nargs=2, action="append", default=None, metavar=("SCENE", "FOOTPRINTS"),
                   help="labeled scene and its footprints (repeatable)")
    p.add_argument("--extra", action="append", default=None, help="object-free background raster (repeatable)")
    _common(p, seed=False)
    p.set_defaults(func=cmd_bank)

    p = sub.add_parser("generate", help="export a reproducible set of training samples", formatter_class=_Fmt)
    p.add_argument("--bank", required=True, help="bank directory")
    p.add_argument("--policy", default=None, help="policy JSON (defaults when omitted)")
    p.add_argument("--count", type=int, default=100, help="number of samples")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--originals", nargs=2, action="append", default=None, metavar=("IMAGE", "MASK"),
                   help="original scene and mask (default: the bank's labeled backgrounds)")
    _common(p, workers=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gentest", help="build a generated test scene on a clean background", formatter_class=_Fmt)
    p.add_argument("--bank", required=True, help="bank directory")
    p.add_argument("--background", required=True, help="object-free background raster")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cell-size", type=int, nargs=2, default=[128, 128], metavar=("W", "H"), help="grid cell size")
    p.add_argument("--paste-prob", type=float, default=0.6, help="per-cell paste probability")
    p.add_argument("--policy", default=None, help="policy JSON supplying shadow parameters")
    _common(p, workers=True)
    p.set_defaults(func=cmd_gentest)

    p = sub.add_parser("evaluate", help="pixel-wise F1 of prediction masks", formatter_class=_Fmt)
    p.add_argument("--pred", required=True, help="directory of prediction masks")
    p.add_argument("--truth", required=True, help="directory of ground-truth masks")
    p.add_argument("--out", default=None, help="report JSON path (stdout when omitted)")
    p.add_argument("--table", default=None, help="text table path (default: next to --out)")
    p.add_argument("--threshold", type=int, default=127, help="8-bit predictions above this are positive")
    _common(p, seed=False, workers=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="search augmentation hyperparameters", formatter_class=_Fmt)
    p.add_argument("--trainer", required=True, help="trainer command; gets --policy FILE --epochs N appended")
    p.add_argument("--budget", type=int, default=20, help="number of trials")
    p.add_argument("--epochs", type=int, default=12, help="epochs per trial")
    p.add_argument("--store", required=True, help="JSON-lines study store (resumed if present)")
    p.add_argument("--policy", default=None, help="base policy JSON for the non-searched fields")
    p.add_argument("--n-min-trials", type=int, default=5, help="pruner: completed trials needed")
    p.add_argument("--n-warmup", type=int, default=2, help="pruner: first epoch that may prune")
    _common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("preview", help="render one generated sample", formatter_class=_Fmt)
    p.add_argument("--bank", required=True, help="bank directory")
    p.add_argument("--policy", default=None, help="policy JSON")
    p.add_argument("--out", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("synth", help="write the bundled synthetic demo dataset", formatter_class=_Fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=2, help="number of labeled scenes")
    p.add_argument("--buildings", type=int, default=25, help="buildings per scene")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("predict", help="trivial threshold predictor for demo runs", formatter_class=_Fmt)
    p.add_argument("--images", required=True, help="directory of PNG images")
    p.add_argument("--out", required=True, help="directory for prediction masks")
    _common(p, seed=False)
    p.set_defaults(func=cmd_predict)
    return parser


# ---------------------------------------------------------------- helpers

# scheduling and output location do not change results, so they are not echoed;
# this keeps output directories byte-identical across --workers / --out
_NOT_ECHOED = ("func", "verbose", "config", "workers", "out")


def _resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def _load_policy(args) -> AugPolicy:
    policy = AugPolicy.load(args.policy) if args.policy else AugPolicy()
    return policy.with_seed(args.seed)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- commands

def cmd_extract(args) -> int:
    if len(args.scene) != len(args.footprints):
        raise UsageError("--scene and --footprints must be given the same number of times")
    patches, report = [], []
    for scene_path, fp_path in zip(args.scene, args.footprints):
        scene = load_raster(scene_path)
        if scene.transform is None:
            raise OBAError(f"{scene_path}: scene is not georeferenced (no .wld sidecar)")
        patches += extract_objects(scene, load_footprints(fp_path), args.padding, report, source=scene_path)
    for err in report:
        print(f"warning: {err}", file=sys.stderr)
    bank = BankIndex.from_patches(patches)
    manifest = save_bank(bank, args.out, config=_resolved(args))
    print(json.dumps({"objects": len(manifest["objects"]), "skipped": len(report),
                      "digest": manifest["digest"]}))
    return 0


def cmd_bank(args) -> int:
    if not args.labeled and not args.extra:
        raise UsageError("give at least one --labeled or --extra source")
    manifest = add_backgrounds(args.bank, args.labeled or [], args.extra or [])
    print(json.dumps({"backgrounds": len(manifest["backgrounds"]), "digest": manifest["digest"]}))
    return 0


def cmd_generate(args) -> int:
    bank = load_bank(args.bank)
    policy = _load_policy(args)
    if args.originals:
        scenes = [(load_raster(img), load_raster(m).array > 127) for img, m in args.originals]
    else:
        scenes = [(bg.raster, bg.exclusion_mask) for bg in bank.backgrounds if bg.kind == LABELED]
    originals = OriginalCropSource(tuple(scenes))
    if args.count <= 0:
        raise UsageError("--count must be > 0")
    manifest = export_epoch(policy, bank, None, originals, args.count, args.out, workers=args.workers,
                            config=_resolved(args))
    print(json.dumps({"count": manifest["count"], "tallies": manifest["tallies"],
                      "digest": manifest["digest"]}))
    return 0


def cmd_gentest(args) -> int:
    bank = load_bank(args.bank)
    background = load_raster(args.background)
    shadow = _load_policy(args).shadow
    spec = GeneratedTestSpec(tuple(args.cell_size), args.paste_prob, shadow, args.seed)
    result = build_generated_test(background, bank, spec, workers=args.workers)
    out = ensure_dir(args.out)
    save_raster(GeoRaster(result.image, background.transform, background.crs_label), out / "test.png")
    save_raster(GeoRaster(result.mask * 255, background.transform, background.crs_label), out / "test_mask.png")
    manifest = {"config": _resolved(args), "cells": int(result.occupied.size),
                "occupied": [int(x) for x in result.occupied], "placements": result.placements,
                "skipped": result.skipped, "bank_digest": bank.manifest_digest}
    _write_json(out / "manifest.json", manifest)
    print(json.dumps({"cells": manifest["cells"], "occupied": int(result.occupied.sum()),
                      "placed": len(result.placements)}))
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate_run(args.pred, args.truth, args.threshold, args.workers)
    report["config"] = _resolved(args)
    table = format_table(report)
    if args.out:
        table_path = args.table or str(Path(args.out).with_suffix(".txt"))
        write_report(report, args.out, table_path)
        sys.stdout.write(table)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        if args.table:
            Path(args.table).write_text(table, encoding="utf-8")
    return 0


def cmd_search(args) -> int:
    base = _load_policy(args)
    state = run_study(SearchSpace(), args.budget, args.trainer, args.store, args.epochs, args.seed,
                      base_policy=base, pruner=MedianPruner(args.n_min_trials, args.n_warmup))
    best = state.best()
    summary = {"trials": len(state.trials),
               "status": {s: sum(t.status == s for t in state.trials)
                          for s in ("complete", "pruned", "failed")},
               "best": best.to_dict() if best else None}
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_preview(args) -> int:
    bank = load_bank(args.bank)
    policy = _load_policy(args)
    sample = generate_sample(policy, bank, None, args.seed)
    out = ensure_dir(args.out)
    save_raster(GeoRaster(sample.image), out / f"{args.seed}.png")
    save_raster(GeoRaster(sample.mask * 255), out / f"{args.seed}_mask.png")
    _write_json(out / f"{args.seed}.json", {"config": _resolved(args), **sample.record()})
    print(json.dumps({"placements": len(sample.placements), "dropped": sample.dropped}))
    return 0


def cmd_synth(args) -> int:
    index = write_dataset(args.out, args.seed, args.scenes, args.buildings)
    print(json.dumps(index))
    return 0


def cmd_predict(args) -> int:
    names = predict_dir(args.images, args.out)
    print(json.dumps({"predicted": len(names)}))
    return 0


# ---------------------------------------------------------------- main

def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Parse ``argv`` with ``--config`` values installed as subcommand defaults."""
    path = _config_path(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    if path and command:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("--config must hold a JSON object")
        sub = choices[command]
        known = {a.dest for a in sub._actions}
        unknown = set(cfg) - known
        if unknown:
            raise UsageError(f"unknown keys in --config: {sorted(unknown)}")
        sub.set_defaults(**cfg)
        # required flags may come from the config file
        for action in sub._actions:
            if action.dest in cfg:
                action.required = False
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (OBAError, FileNotFoundError, OSError, ValueError) as exc:
        where = getattr(exc, "filename", None)
        prefix = f"{where}: " if where else ""
        print(f"error: {prefix}{exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
