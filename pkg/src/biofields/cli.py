"""Command line pipeline: synthesize or load scenes, fit the fields, render,
extract surfaces, and regress biomass.

Subcommands with a config (synth and the two trainers) take ``--config
file.json`` plus repeatable ``--set key=value`` overrides. Exit codes:
0 success, 2 bad configuration or usage, 3 bad data (missing/corrupt files,
shape mismatches), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np
from PIL import Image

from . import training as tr
from .errors import ConfigError, DataError, NumericalError
from .metrics import feature_pca_rgb
from .render import render_image
from .scene import PlotSpec, extract_plot_views, load_scene_bundle, \
    save_scene_bundle
from .surface import extract_surface_features, load_ply, save_ply
from .synth import synth_scene

SYNTH_DEFAULTS = {
    "n_views": 20,
    "width": 96,
    "height": 96,
    "focal": None,
    "n_sparse": 2000,
    "seed": 0,
    "camera_radius": 2.2,
    "camera_height": 0.9,
    "start_angle": 0.0,
    "background": [0.5, 0.5, 0.5],
}


def _file_config(args):
    return tr.load_json_config(args.config) if args.config else None


def _save_png(path, img01):
    arr = np.clip(np.asarray(img01, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255).astype(np.uint8)).save(path)


def _parse_views(text, n_cameras):
    if text is None:
        return list(range(n_cameras))
    try:
        views = [int(v) for v in text.split(",") if v]
    except ValueError:
        raise ConfigError(f"--views {text!r} is not a comma-separated "
                          "list of indices") from None
    bad = [v for v in views if not 0 <= v < n_cameras]
    if bad:
        raise ConfigError(f"view indices {bad} out of range "
                          f"(scene has {n_cameras} cameras)")
    return views


def cmd_synth(args):
    cfg = tr.merge_config(SYNTH_DEFAULTS, _file_config(args), args.set)
    cfg["background"] = tuple(cfg["background"])
    bundle = synth_scene(**cfg)
    save_scene_bundle(bundle, args.out)
    print(f"wrote {len(bundle.cameras)} views, "
          f"{bundle.sparse_points.shape[0]} sparse points to {args.out}")
    return 0


def cmd_train_neff(args):
    bundle = load_scene_bundle(args.scene)
    _, path = tr.train_neff(bundle, args.out, config=_file_config(args),
                            overrides=args.set, resume=args.resume)
    print(f"final checkpoint: {path}")
    return 0


def cmd_render(args):
    bundle = load_scene_bundle(args.scene).normalized()
    fields = tr.fields_from_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    for i in _parse_views(args.views, len(bundle.cameras)):
        cam = bundle.cameras[i]
        out = render_image(fields, cam, n_samples=args.n_samples)
        _save_png(os.path.join(args.out, f"{cam.name}_color.png"), out.color)
        span = out.depth.max() - out.depth.min()
        depth01 = (out.depth - out.depth.min()) / span if span > 0 \
            else np.zeros_like(out.depth)
        _save_png(os.path.join(args.out, f"{cam.name}_depth.png"), depth01)
        _save_png(os.path.join(args.out, f"{cam.name}_feature.png"),
                  feature_pca_rgb(out.feature))
        print(f"rendered {cam.name}")
    return 0


def cmd_extract_surface(args):
    fields = tr.fields_from_checkpoint(args.ckpt)
    cloud = extract_surface_features(fields, grid_res=args.grid_res,
                                     tau=args.tau)
    save_ply(cloud, args.out)
    print(f"wrote {cloud.n} surface points ({cloud.feature_dim} feature "
          f"channels) to {args.out}")
    return 0


def cmd_train_bionet(args):
    plots = tr.load_plot_dataset(args.plots)
    _, path = tr.train_bionet(plots, args.out, config=_file_config(args),
                              overrides=args.set, resume=args.resume)
    print(f"final checkpoint: {path}")
    return 0


def cmd_predict(args):
    cfg_path = args.model_config or os.path.join(
        os.path.dirname(os.path.abspath(args.ckpt)), "bionet_config.json")
    if not os.path.exists(cfg_path):
        raise ConfigError(f"{cfg_path}: model config not found; pass "
                          "--model-config")
    cfg = tr.load_json_config(cfg_path)
    model = tr.bionet_from_checkpoint(args.ckpt, cfg)
    plys = sorted(glob.glob(os.path.join(args.plots, "*.ply")))
    if not plys:
        raise DataError(f"{args.plots}: no .ply plot clouds found")
    preds = []
    for ply in plys:
        name = os.path.splitext(os.path.basename(ply))[0]
        grams = tr.predict_biomass(model, load_ply(ply), cfg=cfg)
        preds.append({"plot": name, "biomass_g": grams})
        print(f"{name}: {grams:.2f} g")
    blob = {"checkpoint": os.path.basename(args.ckpt), "predictions": preds}
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(blob, fh, indent=1)
    return 0


def cmd_extract_plots(args):
    bundle = load_scene_bundle(args.scene)
    if args.endpoints:
        vals = [float(v) for v in args.endpoints.split(",")]
        if len(vals) != 6:
            raise ConfigError("--endpoints needs 6 comma-separated numbers")
        specs = [("plot00", PlotSpec(np.array(vals).reshape(2, 3),
                                     args.along, args.lateral))]
    else:
        if not bundle.plots:
            raise DataError(f"{args.scene}: bundle has no plots.json and no "
                            "--endpoints given")
        specs = []
        for i, entry in enumerate(bundle.plots):
            spec = PlotSpec(np.asarray(entry["endpoints"], dtype=np.float64),
                            entry.get("along_threshold", args.along),
                            entry.get("lateral_threshold", args.lateral))
            specs.append((entry.get("name", f"plot{i:02d}"), spec))
    out = []
    for name, spec in specs:
        cams = extract_plot_views(bundle.cameras, spec)
        out.append({"name": name, "cameras": cams})
        print(f"{name}: {len(cams)} cameras")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"plots": out}, fh, indent=1)
    return 0


def cmd_eval(args):
    bundle = load_scene_bundle(args.scene)
    fields = tr.fields_from_checkpoint(args.ckpt)
    views = _parse_views(args.views, len(bundle.cameras))
    report = tr.evaluate_neff(fields, bundle, view_indices=views,
                              n_samples=args.n_samples)
    print(json.dumps(report, indent=1))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=1)
    return 0


def _add_config_args(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VAL",
                     help="override one config key (repeatable)")


def _add_train_args(sub):
    _add_config_args(sub)
    # execution is single threaded throughout, so this is always in effect;
    # accepted so scripted runs can state the requirement explicitly
    sub.add_argument("--deterministic", action="store_true",
                     help="force single-threaded execution (always on)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="biofields",
        description="field reconstruction and biomass regression pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synth", help="write a synthetic scene bundle")
    s.add_argument("--out", required=True)
    _add_config_args(s)
    s.set_defaults(func=cmd_synth)

    s = subs.add_parser("train-neff", help="fit the field set to a scene")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint to continue from")
    _add_train_args(s)
    s.set_defaults(func=cmd_train_neff)

    s = subs.add_parser("render", help="render color/depth/feature images")
    s.add_argument("--scene", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--views", help="comma-separated camera indices")
    s.add_argument("--n-samples", type=int, default=64)
    s.set_defaults(func=cmd_render)

    s = subs.add_parser("extract-surface", help="export the zero level set "
                                                "as a feature point cloud")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True, help="output .ply path")
    s.add_argument("--grid-res", type=int, default=128)
    s.add_argument("--tau", type=float, default=None)
    s.set_defaults(func=cmd_extract_surface)

    s = subs.add_parser("train-bionet", help="fit the biomass regressor")
    s.add_argument("--plots", required=True,
                   help="directory with labels.json and .ply clouds")
    s.add_argument("--out", required=True)
    s.add_argument("--resume")
    _add_train_args(s)
    s.set_defaults(func=cmd_train_bionet)

    s = subs.add_parser("predict", help="estimate biomass for plot clouds")
    s.add_argument("--plots", required=True, help="directory of .ply clouds")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--model-config",
                   help="bionet config JSON (default: next to the checkpoint)")
    s.add_argument("--out", help="write predictions JSON here")
    s.set_defaults(func=cmd_predict)

    s = subs.add_parser("extract-plots",
                        help="select the cameras that observed each plot")
    s.add_argument("--scene", required=True)
    s.add_argument("--endpoints", help="x1,y1,z1,x2,y2,z2 of the plot row")
    s.add_argument("--along", type=float, default=1.5)
    s.add_argument("--lateral", type=float, default=7.5)
    s.add_argument("--out", help="write the selection JSON here")
    s.set_defaults(func=cmd_extract_plots)

    s = subs.add_parser("eval", help="image metrics against a scene bundle")
    s.add_argument("--scene", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--views", help="comma-separated camera indices")
    s.add_argument("--n-samples", type=int, default=64)
    s.add_argument("--out", help="write the metrics JSON here")
    s.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
