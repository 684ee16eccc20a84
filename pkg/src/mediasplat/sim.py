"""Synthetic scenes degraded by a homogeneous scattering medium, for restoration ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import IoFailure, ShapeMismatch
from .render import render_vanilla
from .scene import Bounds, Camera, Scene, logit
from .sh import N_COEFFS, rgb_to_dc

LEVEL_SCALE = {"easy": 0.1, "medium": 0.2, "hard": 0.4}
FAR_FACTOR = 1.2


@dataclass
class MediumPreset:
    name: str
    level: str
    c_med: tuple
    sigma_att: tuple
    sigma_bs: tuple

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MediumPreset":
        return cls(d["name"], d["level"], tuple(d["c_med"]), tuple(d["sigma_att"]),
                   tuple(d["sigma_bs"]))

    def arrays(self):
        return (np.asarray(self.c_med, float), np.asarray(self.sigma_att, float),
                np.asarray(self.sigma_bs, float))


def preset(name: str, level: str = "medium") -> MediumPreset:
    s = LEVEL_SCALE[level]
    if name == "fog":
        return MediumPreset("fog", level, (0.7, 0.7, 0.7), (s, s, s), (s, s, s))
    if name == "water":
        return MediumPreset("water", level, (0.1, 0.35, 0.45),
                            tuple(s * v for v in (0.45, 0.15, 0.10)),
                            tuple(s * v for v in (0.08, 0.12, 0.15)))
    if name == "clear":
        return MediumPreset("clear", level, (0.0, 0.0, 0.0), (0.0,) * 3, (0.0,) * 3)
    raise KeyError(f"unknown medium preset {name!r}")


def blend_presets(a: MediumPreset, b: MediumPreset, t: float) -> MediumPreset:
    mix = [tuple((1 - t) * np.asarray(x) + t * np.asarray(y))
           for x, y in zip(a.arrays(), b.arrays())]
    return MediumPreset(f"{a.name}->{b.name}", f"{t:.4f}", *mix)


def degrade(clean, depth, p: MediumPreset, coverage=None) -> np.ndarray:
    """Direct attenuation plus backscatter at per-pixel ``depth``, clamped to [0, 1].

    ``coverage`` (1 - residual transmittance) generalizes the backscatter veil to partially
    covered pixels; omitted, every pixel is treated as fully covered.
    """
    clean = np.asarray(clean, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if clean.shape[:2] != depth.shape:
        raise ShapeMismatch(f"image {clean.shape} vs depth {depth.shape}")
    c_med, s_att, s_bs = p.arrays()
    z = depth[..., None]
    acc = 1.0 if coverage is None else np.asarray(coverage, dtype=np.float64)[..., None]
    out = clean * np.exp(-s_att * z) + c_med * (1.0 - acc * np.exp(-s_bs * z))
    return np.clip(out, 0.0, 1.0)


def restore_analytic(degraded, depth, p: MediumPreset) -> np.ndarray:
    """Exact inverse of ``degrade`` for fully covered, unclamped pixels."""
    c_med, s_att, s_bs = p.arrays()
    z = np.asarray(depth, dtype=np.float64)[..., None]
    return (np.asarray(degraded, float) - c_med * (1.0 - np.exp(-s_bs * z))) * np.exp(s_att * z)


# toy scene ---------------------------------------------------------------------------

CAM_Z = (-1.0, 0.5)
NEAR_Z = 3.6


def camera_path(n_views: int, resolution: int = 64):
    """Forward-facing cameras translated along a diagonal sweep; also returns path parameters."""
    ts = np.linspace(0.0, 1.0, n_views)
    f = 0.9 * resolution
    cams = []
    for t in ts:
        eye = np.array([-1.2 + 2.4 * t, 0.25 * np.sin(2 * np.pi * t), CAM_Z[0] + (CAM_Z[1] - CAM_Z[0]) * t])
        cams.append(Camera(f, f, resolution / 2, resolution / 2, np.eye(3), -eye, resolution, resolution))
    return cams, ts


def _blob(rng, center, radius, count, color, scale):
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, count) ** (1 / 3)
    pos = np.asarray(center) + d * r[:, None]
    col = np.clip(np.asarray(color) + rng.normal(0, 0.04, (count, 3)), 0.02, 0.98)
    return pos, col, np.full((count, 3), np.log(scale))


WALL_Z = 7.5
WALL_SLOPE = 0.18   # dz/dx of the back wall
WALL_Y_MAX = 2.4    # below this the background is open water (world y points down in images)


def make_toy_scene(seed: int = 0):
    """Tilted textured back wall plus mid- and near-field blobs; depths stay in [1, 10] for ``camera_path``."""
    rng = np.random.default_rng(seed)
    xs = np.arange(-7.0, 7.0 + 1e-9, 0.4)
    ys = np.arange(-5.2, WALL_Y_MAX + 1e-9, 0.4)
    gx, gy = np.meshgrid(xs, ys)
    gx, gy = gx.ravel(), gy.ravel()
    wall_z = WALL_Z + WALL_SLOPE * gx + rng.uniform(-0.1, 0.1, gx.size)
    wall = np.stack([gx, gy, wall_z], 1)
    hue = 0.5 + 0.5 * np.stack([np.sin(0.9 * gx + 0.3), np.sin(0.7 * gy + 1.7),
                                np.cos(0.5 * (gx + gy))], 1)
    checker = ((np.floor(gx / 1.6) + np.floor(gy / 1.6)) % 2)[:, None]
    wall_col = np.clip(0.15 + 0.7 * (0.6 * hue + 0.4 * checker), 0.03, 0.97)
    wall_ls = np.tile(np.log([0.26, 0.26, 0.06]), (len(wall), 1))
    half = 0.5 * np.arctan(WALL_SLOPE)
    wall_rot = np.tile([np.cos(half), 0.0, -np.sin(half), 0.0], (len(wall), 1))

    parts = [(wall, wall_col, wall_ls)]
    palette = rng.uniform(0.1, 0.95, (12, 3))
    for i in range(6):
        c = [rng.uniform(-3.0, 3.0), rng.uniform(-1.5, 0.8), rng.uniform(4.0, 5.4)]
        parts.append(_blob(rng, c, rng.uniform(0.5, 0.8), 40, palette[i], 0.17))
    for i in range(4):
        # three near clusters hang in front of the open-water band, one in front of the wall
        if i < 3:
            c = [(-1.3, 0.0, 1.3)[i] + rng.uniform(-0.2, 0.2), rng.uniform(1.2, 1.5), rng.uniform(2.4, 3.1)]
            parts.append(_blob(rng, c, 0.45, 50, palette[6 + i], 0.11))
        else:
            c = [rng.uniform(-1.8, 1.8), rng.uniform(-0.8, 0.6), rng.uniform(2.4, 3.1)]
            parts.append(_blob(rng, c, 0.35, 30, palette[6 + i], 0.11))
    pos = np.concatenate([p[0] for p in parts])
    col = np.concatenate([p[1] for p in parts])
    ls = np.concatenate([p[2] for p in parts])
    n = len(pos)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    rot[:len(wall)] = wall_rot
    sh = np.zeros((n, N_COEFFS, 3))
    sh[:, 0, :] = rgb_to_dc(col)
    cams, _ = camera_path(2)
    centers = np.stack([c.center for c in cams])
    bounds = Bounds.around(np.concatenate([pos, centers]), 0.1)
    scene = Scene(pos, rot, ls, np.full(n, float(logit(0.98))), sh, bounds)
    return scene, bounds


# dataset -------------------------------------------------------------------------

def pseudo_depth_from(depth, trans, rng, noise: float = 0.01):
    """Positive-affine transform of true depth with multiplicative noise.

    Pixels that are mostly empty (transmittance >= 0.5) read as a far plane beyond the scene.
    """
    covered = trans < 0.5
    far = FAR_FACTOR * (depth[covered].max() if covered.any() else 1.0)
    z = np.where(covered, depth, far)
    k = rng.uniform(0.5, 2.0)
    b = rng.uniform(0.0, 0.2)
    return (k * z + b) * (1.0 + noise * rng.standard_normal(z.shape))


def make_dataset(out_dir, seed: int = 0, medium=None, n_views: int = 16, resolution: int = 64,
                 end_medium=None, point_fraction: float = 0.6, omit_near: bool = False,
                 test_every: int = 4):
    """Write a simulated dataset; returns the manifest.

    ``medium`` is a preset (default water/medium). With ``end_medium`` the per-view medium is a
    blend that moves from ``medium`` to ``end_medium`` along the camera path. ``omit_near``
    drops all near-field points from the sparse point cloud.
    """
    if n_views < 2:
        raise ValueError("need at least 2 views")
    medium = medium or preset("water", "medium")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {out}: {e}") from e
    rng = np.random.default_rng(seed)
    scene, bounds = make_toy_scene(seed)
    cams, ts = camera_path(n_views, resolution)
    bounds = bounds.union_points(np.stack([c.center for c in cams]))
    records = []
    for i, (cam, t) in enumerate(zip(cams, ts)):
        vid = f"{i:03d}"
        clean = render_vanilla(scene, cam)
        p = medium if end_medium is None else blend_presets(medium, end_medium, float(t))
        degraded = degrade(clean.color, clean.depth, p, 1.0 - clean.transmittance)
        pseudo = pseudo_depth_from(clean.depth, clean.transmittance, rng)
        split = "test" if (i % test_every == test_every // 2) else "train"
        io.write_camera(out / f"views/{vid}_camera.txt", cam)
        io.write_image(out / f"views/{vid}_clean", clean.color)
        io.write_image(out / f"views/{vid}_degraded", degraded)
        io.write_pfm(out / f"views/{vid}_depth.pfm", clean.depth)
        io.write_pfm(out / f"views/{vid}_pseudo.pfm", pseudo)
        records.append(io.ViewRecord(vid, f"views/{vid}_camera.txt", f"views/{vid}_degraded.pfm",
                                     split, f"views/{vid}_clean.pfm", f"views/{vid}_depth.pfm",
                                     f"views/{vid}_pseudo.pfm", float(t)))

    keep = rng.uniform(size=len(scene)) < point_fraction
    if omit_near:
        keep &= scene.positions[:, 2] >= NEAR_Z
    pts = scene.positions[keep] + rng.normal(0, 0.03, (int(keep.sum()), 3))
    cols = np.clip(scene.color_sh[keep, 0, :] * 0.28209479177387814 + 0.5, 0, 1)
    io.write_ply(out / "points.ply", pts, cols)
    extra = {"seed": seed, "resolution": resolution, "omit_near": omit_near}
    if end_medium is not None:
        extra["end_preset"] = end_medium.as_dict()
    man = io.DatasetManifest(records, {"lo": bounds.lo.tolist(), "hi": bounds.hi.tolist()},
                             preset=medium.as_dict(), points_path="points.ply", extra=extra)
    io.write_manifest(out / "manifest.json", man)
    return man
