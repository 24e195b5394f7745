"""RANSAC cylinder fit on a noisy point cloud with outliers.

Run: python demos/cylinder_fit.py
"""

import numpy as np

from tubetrack.cylinders import fit_cylinder_ransac

rng = np.random.default_rng(7)

# 350 surface points of an r = 10 mm cylinder along (1, 1, 0), plus 150
# uniform outliers in the surrounding box.
r, h = 10.0, 18.0
axis = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
u = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
v = np.cross(axis, u)
th = rng.uniform(0, 2 * np.pi, 350)
t = rng.uniform(-h / 2, h / 2, 350)
surface = t[:, None] * axis + r * (np.cos(th)[:, None] * u + np.sin(th)[:, None] * v)
surface += rng.normal(0, 0.3, surface.shape)
cloud = np.r_[surface, rng.uniform(-13, 13, (150, 3))] + [40.0, 20.0, 10.0]

for iters in (100, 1000, 10000):
    c = fit_cylinder_ransac(cloud, iterations=iters, seed=0)
    err = np.degrees(np.arccos(min(1.0, abs(c.axis @ axis))))
    print(f"{iters:>6} iterations: radius {c.radius_mm:5.2f} mm, axis error {err:4.1f} deg, {c.inlier_count} inliers")
