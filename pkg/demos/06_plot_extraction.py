"""Carve a long field survey into per-plot scenes.

A drone sweep covers several crop rows laid out along the x axis. Each
plot is described by its row endpoints; cameras are assigned to a plot
by their along-row and cross-row distances to that row's axis, and the
shared point cloud is cropped the same way.
"""

import numpy as np

from biofields.scene import PlotSpec, crop_plot_points, extract_plot_views, look_at_camera


def main():
    rng = np.random.default_rng(0)

    # serpentine sweep: passes at y in {-1, 0, 1} m, overshooting the rows
    cams = []
    for pass_i, y in enumerate((-1.0, 0.0, 1.0)):
        xs = np.linspace(-9, 9, 31)
        if pass_i % 2:
            xs = xs[::-1]
        for j, x in enumerate(xs):
            cams.append(look_at_camera(f"pass{pass_i}_{j:02d}",
                                       (x, y, 3.0), target=(x, y, 0.0),
                                       up=(0.0, 1.0, 0.0)))
    points = np.column_stack([rng.uniform(-6, 6, 4000),
                              rng.uniform(-1.5, 1.5, 4000),
                              rng.uniform(0.0, 0.6, 4000)])

    plots = [PlotSpec([[-6.0 + 4.0 * k, 0.0, 0.0], [-2.0 + 4.0 * k, 0.0, 0.0]],
                      along_threshold=2.0, lateral_threshold=3.5)
             for k in range(3)]

    for k, plot in enumerate(plots):
        names = extract_plot_views(cams, plot)
        cropped = crop_plot_points(points, plot, half_length=2.0,
                                   half_width=1.6)
        lo, hi = plot.endpoints[0, 0], plot.endpoints[1, 0]
        print(f"plot {k} (x in [{lo:+.0f}, {hi:+.0f}]): {len(names)} of "
              f"{len(cams)} cameras, {len(cropped)} of {len(points)} points")
        print(f"  first/last camera: {names[0]} .. {names[-1]}")

        swapped = PlotSpec(plot.endpoints[::-1].copy(), plot.along_threshold,
                           plot.lateral_threshold)
        assert extract_plot_views(cams, swapped) == names

    union = set()
    for plot in plots:
        union.update(extract_plot_views(cams, plot))
    print(f"{len(union)} of {len(cams)} cameras belong to at least one plot; "
          f"the rest are turnarounds between rows")


if __name__ == "__main__":
    main()
