"""Point-cloud initialization and pseudo-depth Gaussian complementation.

Complementation aligns a monocular pseudo-depth map to the rendered depth with an affine
least-squares fit over well-covered pixels, then seeds new primitives where the pseudo-depth
says "near" but the current scene leaves the ray uncovered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateFit, EmptyPointCloud, ShapeMismatch
from .scene import NEAR_CLIP, Bounds, Camera, Scene, logit, unproject_pixel
from .sh import N_COEFFS, rgb_to_dc

INIT_OPACITY = 0.1


@dataclass
class AffineFit:
    k: float
    b: float
    sample_count: int
    residual_rms: float

    @property
    def valid(self) -> bool:
        return self.sample_count >= 2


def _new_primitives(positions, colors, scales, bounds) -> Scene:
    n = len(positions)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    sh = np.zeros((n, N_COEFFS, 3))
    sh[:, 0, :] = rgb_to_dc(colors)
    log_s = np.repeat(np.log(np.maximum(scales, 1e-7))[:, None], 3, axis=1)
    return Scene(positions, rot, log_s, np.full(n, float(logit(INIT_OPACITY))), sh, bounds)


def init_from_points(points, colors=None, scene_bounds: Bounds = None) -> Scene:
    """One isotropic primitive per point, sized by the mean distance to its 3 nearest neighbours."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyPointCloud("point cloud has no vertices")
    cols = np.full((len(pts), 3), 0.5) if colors is None else np.asarray(colors, float).reshape(-1, 3)
    bounds = scene_bounds or Bounds.around(pts, 0.1)
    if len(pts) > 1:
        k = min(4, len(pts))
        dist, _ = cKDTree(pts).query(pts, k=k)
        scale = dist[:, 1:].mean(axis=1)
    else:
        scale = np.full(1, 0.01 * bounds.extent)
    scale = np.where(scale > 0, scale, 1e-3 * bounds.extent)
    return _new_primitives(pts, cols, scale, bounds)


def region_masks(pseudo_depth, transmittance, tau_w: float = 0.99, tau_near: float = 0.5):
    """Returns ``(omega_w, omega_p, omega_n)``: well-covered, poorly-covered and near pixels."""
    pd = np.asarray(pseudo_depth, dtype=np.float64)
    tr = np.asarray(transmittance, dtype=np.float64)
    if pd.shape != tr.shape:
        raise ShapeMismatch(f"{pd.shape} vs {tr.shape}")
    omega_w = tr < tau_w
    omega_n = pd < tau_near * pd.max()
    return omega_w, ~omega_w, omega_n


def affine_fit(rendered_depth, pseudo_depth, transmittance, tau_w: float = 0.99) -> AffineFit:
    """Least-squares ``rendered ~ k * pseudo + b`` over pixels with transmittance below ``tau_w``."""
    rd = np.asarray(rendered_depth, dtype=np.float64)
    pd = np.asarray(pseudo_depth, dtype=np.float64)
    if rd.shape != pd.shape or rd.shape != np.shape(transmittance):
        raise ShapeMismatch("depth, pseudo-depth and transmittance must share a shape")
    mask = np.asarray(transmittance) < tau_w
    x, y = pd[mask], rd[mask]
    if x.size < 2:
        raise DegenerateFit(f"only {x.size} well-covered pixels")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx <= 1e-300 * x.size or np.ptp(x) == 0:
        raise DegenerateFit("pseudo-depth is constant over the fit region")
    k = float(dx @ (y - ym)) / sxx
    b = float(ym - k * xm)
    res = y - (k * x + b)
    return AffineFit(k, b, int(x.size), float(np.sqrt(np.mean(res ** 2))))


def complement(scene: Scene, camera: Camera, pseudo_depth, render_out, target, fit: AffineFit,
               tau_w: float = 0.99, tau_near: float = 0.5, stride: int = 4,
               cap: int = 5000) -> Scene:
    """New primitives for pixels in (near & poorly covered), sampled on a ``stride`` grid.

    The input scene is not modified; the caller appends the result.
    """
    pd = np.asarray(pseudo_depth, dtype=np.float64)
    _, omega_p, omega_n = region_masks(pd, render_out.transmittance, tau_w, tau_near)
    sel = omega_n & omega_p
    grid = np.zeros_like(sel)
    off = stride // 2
    grid[off::stride, off::stride] = True
    rows, cols = np.nonzero(sel & grid)
    if len(rows) > cap:
        pick = np.linspace(0, len(rows) - 1, cap).round().astype(int)
        rows, cols = rows[pick], cols[pick]
    if len(rows) == 0:
        return Scene.empty(scene.bounds)
    depth = np.maximum(fit.k * pd[rows, cols] + fit.b, NEAR_CLIP * 2)
    pix = np.stack([cols + 0.5, rows + 0.5], axis=1)
    pos = unproject_pixel(camera, pix, depth)
    colors = np.clip(np.asarray(target, dtype=np.float64)[rows, cols], 0.0, 1.0)
    return _new_primitives(pos, colors, depth / camera.fx * stride, scene.bounds)
