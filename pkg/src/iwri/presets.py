"""Ready-made desk-scale experiment: the box-anomaly transmission setup.

A 1000 m x 700 m homogeneous 1800 m/s medium (10 m cells) with a 100 m
square 2100 m/s anomaly at the grid center, one source on the left edge at
350 m depth and 18 receivers down the right edge, inverted jointly at
2.5, 5 and 7 Hz from the homogeneous background.  Edge positions are moved
one cell inside the physical grid (x = 15 m and x = 985 m instead of 0 and
1000) so that injection never lands next to the absorbing layer.
"""

from dataclasses import dataclass

import numpy as np

from .acquisition import AcquisitionGeometry
from .grid import Bounds, Grid2D, VelocityModel, build_homogeneous, embed_box


@dataclass(frozen=True)
class BoxSetup:
    true_model: VelocityModel
    initial_model: VelocityModel
    geometry: AcquisitionGeometry
    frequencies: tuple
    f0: float
    bounds: Bounds


def box_anomaly_setup(nx=100, nz=70, dx=10.0, v_background=1800.0, v_box=2100.0,
                      box_side=100.0, n_receivers=18, frequencies=(2.5, 5.0, 7.0),
                      f0=5.0):
    grid = Grid2D(nx, nz, dx, dx)
    background = build_homogeneous(grid, v_background)
    x0 = grid.width / 2.0 - box_side / 2.0
    z0 = grid.depth / 2.0 - box_side / 2.0
    true_model = embed_box(background, x0, z0, box_side, v_box)

    src_x = 1.5 * dx
    rec_x = grid.width - 1.5 * dx
    rec_z = (np.arange(n_receivers) + 0.5) * grid.depth / n_receivers
    geometry = AcquisitionGeometry(
        sources=((src_x, grid.depth / 2.0),),
        receivers=tuple((rec_x, float(z)) for z in rec_z),
    )
    geometry.validate(grid)
    return BoxSetup(
        true_model=true_model,
        initial_model=background,
        geometry=geometry,
        frequencies=tuple(float(f) for f in frequencies),
        f0=f0,
        bounds=Bounds(min(v_background, v_box), max(v_background, v_box)),
    )
