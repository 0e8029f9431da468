"""Training loops: field reconstruction from a scene bundle, and biomass
regression from labeled surface clouds.

Both loops draw their per-step randomness from a generator seeded with
(seed, step), so a run can be bit-reproduced and a resumed run continues
exactly where the interrupted one would have gone.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import autodiff as ad
from . import render as rd
from .autodiff import Tensor
from .bionet import BioNet, BioNetConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, NumericalError
from .fields import EncodingSpec, FieldConfig, FieldSet
from .losses import LossWeights, biomass_loss, neff_loss
from .metrics import image_metrics
from .optim import Adam
from .surface import AugmentParams, augment, load_ply, voxelize

NEFF_DEFAULTS = {
    "seed": 0,
    "iters": 5000,
    "rays_per_step": 512,
    "n_samples": 64,
    "sample_mode": "stratified",
    "lr": 5e-4,
    "width": 256,
    "feature_dim": 64,
    "geometry_hidden": 8,
    "feature_hidden": 2,
    "radiance_hidden": 4,
    "position_frequencies": 6,
    "direction_frequencies": 4,
    "alpha": 1.0,
    "beta": 0.1,
    "eikonal": 0.0,
    "sparse_per_step": 1024,
    "background": [0.5, 0.5, 0.5],
    "checkpoint_every": 1000,
}

BIONET_DEFAULTS = {
    "seed": 0,
    "iters": 2000,
    "batch": 4,
    "lr": 1e-4,
    "voxel_dims": [64, 64, 16],
    "voxel_lo": [-1.0, -1.0, -1.0],
    "voxel_hi": [1.0, 1.0, 1.0],
    "include_offsets": True,
    "augment": False,
    "feature_dim": None,       # None: take it from the first plot cloud
    "base_channels": 32,
    "d_model": 512,
    "n_heads": 8,
    "ffn_dim": 2048,
    "n_encoders": 5,
    "head_hidden": [512, 256],
    "dropout": 0.0,
    "checkpoint_every": 500,
}


def parse_override(text: str):
    """One 'key=value' CLI override; the value is JSON when it parses."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def merge_config(defaults, config=None, overrides=()):
    out = dict(defaults)
    pairs = list((config or {}).items())
    pairs += [parse_override(o) for o in overrides]
    for key, value in pairs:
        if key not in defaults:
            known = ", ".join(sorted(defaults))
            raise ConfigError(f"unknown config key {key!r}; known keys: {known}")
        out[key] = value
    return out


def load_json_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def _step_rng(seed, step):
    return np.random.default_rng((int(seed), int(step)))


def _save_train_state(path, model_state, adam, step):
    blob = dict(model_state)
    for key, val in adam.state_dict().items():
        blob[f"opt.{key}"] = val
    blob["meta.step"] = np.array(float(step))
    save_checkpoint(path, blob)


def load_train_state(path, model, adam=None):
    """Restore model (and optionally optimizer) state; returns the step."""
    blob = load_checkpoint(path)
    model_state = {k: v for k, v in blob.items()
                   if not k.startswith(("opt.", "meta."))}
    model.load_state_dict(model_state)
    if adam is not None:
        try:
            adam.load_state_dict({k[len("opt."):]: v for k, v in blob.items()
                                  if k.startswith("opt.")})
        except KeyError as exc:
            raise DataError(f"{path}: checkpoint lacks optimizer state "
                            f"({exc})") from None
    return int(blob.get("meta.step", np.zeros(())))


def field_config_from(cfg):
    enc = EncodingSpec(position_frequencies=cfg["position_frequencies"],
                       direction_frequencies=cfg["direction_frequencies"])
    return FieldConfig(encoding=enc,
                       width=cfg["width"],
                       feature_dim=cfg["feature_dim"],
                       geometry_hidden=cfg["geometry_hidden"],
                       feature_hidden=cfg["feature_hidden"],
                       radiance_hidden=cfg["radiance_hidden"])


def infer_field_config(state):
    """Reconstruct the field architecture from checkpoint array shapes."""
    def n_layers(prefix):
        i = 0
        while f"{prefix}.l{i}.w" in state:
            i += 1
        if i == 0:
            raise DataError(f"checkpoint has no {prefix!r} network")
        return i

    ng, nf, nc = n_layers("fg"), n_layers("ff"), n_layers("fc")
    # the feature net consumes the geometry feature, so its input is width
    width = state["ff.l0.w"].shape[0]
    enc_pos = state["fg.l0.w"].shape[0]
    enc_dir = state["fc.l0.w"].shape[0] - enc_pos - width
    for dim, what in ((enc_pos, "position"), (enc_dir, "direction")):
        if dim < 3 or (dim - 3) % 6:
            raise DataError(f"checkpoint {what} encoding width {dim} is not "
                            "3 + 6*frequencies")
    enc = EncodingSpec(position_frequencies=(enc_pos - 3) // 6,
                       direction_frequencies=(enc_dir - 3) // 6)
    return FieldConfig(encoding=enc, width=width,
                       feature_dim=state[f"ff.l{nf - 1}.b"].shape[0],
                       geometry_hidden=ng - 1, feature_hidden=nf - 1,
                       radiance_hidden=nc - 1)


def _model_state(blob):
    return {k: v for k, v in blob.items()
            if not k.startswith(("opt.", "meta."))}


def fields_from_checkpoint(path):
    state = _model_state(load_checkpoint(path))
    fields = FieldSet(infer_field_config(state))
    fields.load_state_dict(state)
    return fields


def bionet_from_checkpoint(path, cfg):
    """Rebuild a regressor; ``cfg`` must carry the architecture (the sidecar
    JSON written next to training checkpoints has it)."""
    cfg = merge_config(BIONET_DEFAULTS, cfg)
    if not cfg["feature_dim"]:
        raise ConfigError("model config must pin feature_dim to rebuild "
                          "a biomass network from a checkpoint")
    model = BioNet(bionet_config_from(cfg, cfg["feature_dim"]),
                   seed=cfg["seed"])
    model.load_state_dict(_model_state(load_checkpoint(path)))
    return model


class RayPool:
    """Every valid training ray in the bundle with its supervision targets."""

    def __init__(self, bundle):
        os_, vs, tns, tfs, cols, feats = [], [], [], [], [], []
        for cam, img, fmap in zip(bundle.cameras, bundle.images,
                                  bundle.feature_maps):
            uu, vv = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
            pixels = np.stack([uu.ravel(), vv.ravel()], axis=-1).astype(np.float64)
            rays = rd.generate_rays(cam, pixels)
            keep = rays.valid
            os_.append(rays.o[keep])
            vs.append(rays.v[keep])
            tns.append(rays.t_near[keep])
            tfs.append(rays.t_far[keep])
            cols.append(img.reshape(-1, 3)[keep])
            feats.append(fmap.reshape(-1, fmap.shape[-1])[keep].astype(np.float64))
        self.o = np.concatenate(os_)
        self.v = np.concatenate(vs)
        self.t_near = np.concatenate(tns)
        self.t_far = np.concatenate(tfs)
        self.colors = np.concatenate(cols)
        self.features = np.concatenate(feats)
        if self.o.shape[0] == 0:
            raise DataError("no training ray intersects the scene cube")

    def __len__(self):
        return self.o.shape[0]

    def take(self, idx):
        rays = rd.Rays(self.o[idx], self.v[idx], self.t_near[idx],
                       self.t_far[idx], np.ones(len(idx), dtype=bool))
        return rays, self.colors[idx], self.features[idx]


def train_neff(bundle, out_dir, config=None, overrides=(), resume=None):
    """Fit the field set to a scene bundle; returns (fields, final ckpt path)."""
    cfg = merge_config(NEFF_DEFAULTS, config, overrides)
    os.makedirs(out_dir, exist_ok=True)
    bundle = bundle.normalized()
    if bundle.feature_dim != cfg["feature_dim"]:
        raise ConfigError(f"bundle has {bundle.feature_dim} feature channels "
                          f"but the model is configured for {cfg['feature_dim']}")
    fields = FieldSet(field_config_from(cfg), seed=cfg["seed"])
    adam = Adam(fields.params(), lr=cfg["lr"])
    start = load_train_state(resume, fields, adam) if resume else 0
    with open(os.path.join(out_dir, "neff_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=1)

    pool = RayPool(bundle)
    sparse = bundle.sparse_points
    weights = LossWeights(alpha=cfg["alpha"], beta=cfg["beta"],
                          eikonal=cfg["eikonal"])
    background = tuple(cfg["background"])
    iters = int(cfg["iters"])

    log_path = os.path.join(out_dir, "neff_log.csv")
    mode = "a" if resume else "w"
    with open(log_path, mode, newline="") as log_fh:
        log = csv.writer(log_fh)
        if mode == "w":
            log.writerow(["step", "color", "feature", "geometry", "total"])
        final_path = os.path.join(out_dir, f"neff_{start:06d}.nfbk")
        if start >= iters:
            _save_train_state(final_path, fields.state_dict(), adam, start)
            return fields, final_path
        for step in range(start + 1, iters + 1):
            rng = _step_rng(cfg["seed"], step)
            idx = rng.integers(0, len(pool), size=int(cfg["rays_per_step"]))
            rays, gt_color, gt_feature = pool.take(idx)
            color, feature, _, _ = rd.render_rays_graph(
                fields, rays, n_samples=int(cfg["n_samples"]),
                mode=cfg["sample_mode"], rng=rng, background=background)

            n_sp = min(int(cfg["sparse_per_step"]), sparse.shape[0])
            pts = sparse[rng.choice(sparse.shape[0], size=n_sp, replace=False)]
            sdf, _ = fields.eval_geometry(Tensor(pts))
            eik = fields.sdf_spatial_gradient(Tensor(pts)) \
                if weights.eikonal > 0 else None

            total, comps = neff_loss(color, feature, gt_color, gt_feature,
                                     sparse_sdf=sdf, weights=weights,
                                     eikonal_grads=eik)
            if not np.isfinite(total.data):
                raise NumericalError(f"step {step}: non-finite loss {comps}")
            adam.zero_grad()
            total.backward()
            try:
                adam.step()
            except NumericalError as exc:
                raise NumericalError(f"step {step}: {exc}") from None
            log.writerow([step, f"{comps['color']:.8g}",
                          f"{comps['feature']:.8g}", f"{comps['geometry']:.8g}",
                          f"{float(total.data):.8g}"])
            if step % int(cfg["checkpoint_every"]) == 0 or step == iters:
                final_path = os.path.join(out_dir, f"neff_{step:06d}.nfbk")
                _save_train_state(final_path, fields.state_dict(), adam, step)
                log_fh.flush()
    return fields, final_path


def evaluate_neff(fields, bundle, view_indices=None, n_samples=64):
    """Render-against-ground-truth metrics on the normalized bundle."""
    bundle = bundle.normalized()
    if view_indices is None:
        view_indices = range(len(bundle.cameras))
    psnrs, ssims, cosines = [], [], []
    for i in view_indices:
        cam = bundle.cameras[i]
        out = rd.render_image(fields, cam, n_samples=n_samples)
        p, s = image_metrics(out.color, bundle.images[i])
        psnrs.append(p)
        ssims.append(s)
        gt_f = bundle.feature_maps[i].astype(np.float64)
        mask = np.linalg.norm(gt_f, axis=-1) > 1e-6
        if mask.any():
            a = out.feature[mask]
            b = gt_f[mask]
            denom = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
            cosines.append(float(((a * b).sum(-1) / np.maximum(denom, 1e-12)).mean()))
    sdf, _ = fields.eval_geometry(bundle.sparse_points)
    report = {
        "psnr": float(np.mean(psnrs)),
        "ssim": float(np.mean(ssims)),
        "mean_abs_sdf": float(np.abs(sdf).mean()),
        "per_view_psnr": [float(p) for p in psnrs],
        "per_view_ssim": [float(s) for s in ssims],
    }
    if cosines:
        report["feature_cosine"] = float(np.mean(cosines))
    return report


def bionet_config_from(cfg, feature_dim):
    return BioNetConfig(feature_dim=feature_dim,
                        include_offsets=cfg["include_offsets"],
                        voxel_dims=tuple(cfg["voxel_dims"]),
                        base_channels=cfg["base_channels"],
                        d_model=cfg["d_model"],
                        n_heads=cfg["n_heads"],
                        ffn_dim=cfg["ffn_dim"],
                        n_encoders=cfg["n_encoders"],
                        head_hidden=tuple(cfg["head_hidden"]),
                        dropout=cfg["dropout"])


def _plot_grid(cloud, cfg, rng=None):
    lo = np.asarray(cfg["voxel_lo"], dtype=np.float64)
    hi = np.asarray(cfg["voxel_hi"], dtype=np.float64)
    if cfg["augment"] and rng is not None:
        cloud = augment(cloud, AugmentParams.sample(rng))
        # a shifted plot can poke out of the voxel domain; clamp it back in
        cloud.points = np.clip(cloud.points, lo, hi)
    return voxelize(cloud, dims=tuple(cfg["voxel_dims"]), lo=lo, hi=hi,
                    include_offsets=cfg["include_offsets"])


def train_bionet(plots, out_dir, config=None, overrides=(), resume=None):
    """Fit the biomass regressor to (cloud, grams) pairs."""
    cfg = merge_config(BIONET_DEFAULTS, config, overrides)
    if not plots:
        raise DataError("no training plots")
    os.makedirs(out_dir, exist_ok=True)
    feature_dim = cfg["feature_dim"] or plots[0][0].feature_dim
    cfg["feature_dim"] = feature_dim
    model = BioNet(bionet_config_from(cfg, feature_dim), seed=cfg["seed"])
    adam = Adam(model.params(), lr=cfg["lr"])
    start = load_train_state(resume, model, adam) if resume else 0
    iters = int(cfg["iters"])
    with open(os.path.join(out_dir, "bionet_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=1)

    log_path = os.path.join(out_dir, "bionet_log.csv")
    mode = "a" if resume else "w"
    with open(log_path, mode, newline="") as log_fh:
        log = csv.writer(log_fh)
        if mode == "w":
            log.writerow(["step", "biomass"])
        final_path = os.path.join(out_dir, f"bionet_{start:06d}.nfbk")
        if start >= iters:
            _save_train_state(final_path, model.state_dict(), adam, start)
            return model, final_path
        # without augmentation every epoch sees identical grids; bin once
        grids = None if cfg["augment"] else \
            [_plot_grid(p[0], cfg) for p in plots]
        for step in range(start + 1, iters + 1):
            rng = _step_rng(cfg["seed"], step)
            idx = rng.integers(0, len(plots), size=int(cfg["batch"]))
            m_hats = []
            for i in idx:
                grid = grids[i] if grids is not None \
                    else _plot_grid(plots[i][0], cfg, rng)
                drop_rng = rng if cfg["dropout"] > 0 else None
                m_hats.append(model(grid, rng=drop_rng))
            m_hat = ad.concat(m_hats, axis=0)
            m_true = np.array([float(plots[i][1]) for i in idx])
            loss = biomass_loss(m_hat, m_true)
            if not np.isfinite(loss.data):
                raise NumericalError(f"step {step}: non-finite biomass loss")
            adam.zero_grad()
            loss.backward()
            try:
                adam.step()
            except NumericalError as exc:
                raise NumericalError(f"step {step}: {exc}") from None
            log.writerow([step, f"{float(loss.data):.8g}"])
            if step % int(cfg["checkpoint_every"]) == 0 or step == iters:
                final_path = os.path.join(out_dir, f"bionet_{step:06d}.nfbk")
                _save_train_state(final_path, model.state_dict(), adam, step)
                log_fh.flush()
    return model, final_path


def predict_biomass(model, cloud, cfg=None):
    """Deterministic biomass estimate in grams for one surface cloud."""
    cfg = merge_config(BIONET_DEFAULTS, cfg)
    cfg["augment"] = False
    grid = _plot_grid(cloud, cfg)
    return float(model(grid).data[0])


def load_plot_dataset(directory):
    """Plots from <dir>/labels.json ({name: grams}) plus <dir>/<name>.ply."""
    labels_path = os.path.join(directory, "labels.json")
    if not os.path.exists(labels_path):
        raise DataError(f"{labels_path}: missing plot labels")
    with open(labels_path) as fh:
        try:
            labels = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{labels_path}: invalid JSON ({exc})") from None
    plots = []
    for name in sorted(labels):
        ply = os.path.join(directory, f"{name}.ply")
        if not os.path.exists(ply):
            raise DataError(f"{ply}: cloud listed in labels.json is missing")
        plots.append((load_ply(ply), float(labels[name]), name))
    if not plots:
        raise DataError(f"{directory}: labels.json lists no plots")
    return plots
