"""What the volume renderer guarantees before any training happens.

A freshly initialized field is roughly a sphere of radius 0.5, so rays
through the middle of the cube should already composite like a ball:
weights bump where the ray crosses the shell, transmittance collapses
behind it, and rays that miss keep the background.
"""

import numpy as np

from biofields.fields import FieldConfig, FieldSet
from biofields.render import Rays, intersect_cube, render_rays


def shoot(fields, o, v):
    o = np.asarray(o, dtype=np.float64)[None]
    v = np.asarray(v, dtype=np.float64)[None]
    v = v / np.linalg.norm(v)
    t_near, t_far, ok = intersect_cube(o, v)
    return render_rays(fields, Rays(o, v, t_near, t_far, ok),
                       n_samples=96, mode="uniform")


def main():
    fields = FieldSet(FieldConfig(width=32, feature_dim=4, geometry_hidden=2,
                                  feature_hidden=1, radiance_hidden=2), seed=0)

    center = shoot(fields, (0.0, -1.8, 0.0), (0.0, 1.0, 0.0))
    graze = shoot(fields, (0.0, -1.8, 0.49), (0.0, 1.0, 0.0))
    miss = shoot(fields, (0.0, -1.8, 0.9), (0.0, 1.0, 0.0))

    for label, res in (("through center", center), ("grazing shell", graze),
                       ("missing it", miss)):
        w = res.weights[0]
        print(f"{label:15s} sum(w) {w.sum():.3f}  depth {res.depth[0]:.3f}  "
              f"peak sample {int(np.argmax(w)):3d}  "
              f"final T {res.transmittance[0, -1]:.3f}")

    # the central ray should meet the init shell near t = 1.8 - 0.5
    t_hit = 1.8 - 0.5
    print(f"central depth {center.depth[0]:.3f} vs shell crossing {t_hit:.3f}")

    # invariants on a fan of random rays
    rng = np.random.default_rng(1)
    o = np.tile([0.0, -2.0, 0.0], (512, 1))
    v = rng.uniform(-0.5, 0.5, (512, 3)) - o
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    t_near, t_far, ok = intersect_cube(o, v)
    res = render_rays(fields, Rays(o, v, t_near, t_far, ok), n_samples=48)
    print(f"512 random rays: min w {res.weights.min():.1e}, "
          f"max sum(w) {res.weights.sum(axis=1).max():.4f}, "
          f"T monotone: {bool(np.all(np.diff(res.transmittance, axis=1) <= 1e-15))}")


if __name__ == "__main__":
    main()
