"""Gaussian primitives, pinhole cameras and the geometric transforms feeding the renderer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, ShapeMismatch

NEAR_CLIP = 0.01
COV2D_DILATION = 0.3
SH_COEFFS = 16


@dataclass
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not np.all(self.lo < self.hi):
            raise ValueError(f"degenerate bounds {self.lo} .. {self.hi}")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def union_points(self, pts) -> "Bounds":
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        lo = np.minimum(self.lo, pts.min(axis=0))
        hi = np.maximum(self.hi, pts.max(axis=0))
        return Bounds(lo, hi)

    @classmethod
    def around(cls, pts, inflate: float = 0.1) -> "Bounds":
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = np.maximum((hi - lo) * inflate, 1e-3) if inflate > 0 else np.full(3, 1e-3)
        return cls(lo - pad, hi + pad)


@dataclass
class GaussianPrimitive:
    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    color_sh: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.rotation = q / np.linalg.norm(q)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(3)
        self.opacity_logit = float(self.opacity_logit)
        self.color_sh = np.asarray(self.color_sh, dtype=np.float64).reshape(SH_COEFFS, 3)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))


@dataclass(eq=False)
class Scene:
    """Struct-of-arrays container for an ordered set of Gaussian primitives.

    Index ``i`` across all arrays is primitive ``i``; the order is the tie-break key
    when two primitives sit at the same camera depth.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    color_sh: np.ndarray
    bounds: Bounds

    PARAM_NAMES = ("positions", "rotations", "log_scales", "opacity_logits", "color_sh")

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.color_sh = np.asarray(self.color_sh, dtype=np.float64).reshape(n, SH_COEFFS, 3)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(self.positions[i], self.rotations[i], self.log_scales[i],
                                 self.opacity_logits[i], self.color_sh[i])

    @classmethod
    def empty(cls, bounds: Bounds) -> "Scene":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0),
                   np.zeros((0, SH_COEFFS, 3)), bounds)

    @classmethod
    def from_primitives(cls, prims, bounds: Bounds) -> "Scene":
        prims = list(prims)
        if not prims:
            return cls.empty(bounds)
        return cls(np.stack([p.position for p in prims]), np.stack([p.rotation for p in prims]),
                   np.stack([p.log_scale for p in prims]),
                   np.array([p.opacity_logit for p in prims]),
                   np.stack([p.color_sh for p in prims]), bounds)

    def params(self) -> dict:
        return {k: getattr(self, k) for k in self.PARAM_NAMES}

    def copy(self) -> "Scene":
        return Scene(*(getattr(self, k).copy() for k in self.PARAM_NAMES),
                     bounds=Bounds(self.bounds.lo.copy(), self.bounds.hi.copy()))

    def select(self, keep) -> "Scene":
        keep = np.asarray(keep)
        return Scene(*(getattr(self, k)[keep] for k in self.PARAM_NAMES), bounds=self.bounds)

    def extend(self, other: "Scene") -> "Scene":
        return Scene(*(np.concatenate([getattr(self, k), getattr(other, k)])
                       for k in self.PARAM_NAMES), bounds=self.bounds)


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width, self.height = int(self.width), int(self.height)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        r = self.rotation
        if not (np.allclose(r @ r.T, np.eye(3), atol=1e-9) and np.linalg.det(r) > 0):
            raise ValueError("camera rotation must be a proper orthonormal matrix")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, fx, fy, width, height, up=(0.0, -1.0, 0.0), cx=None, cy=None):
        """Pinhole camera at ``eye`` whose optical axis (+z) points at ``target``.

        Image y runs down, so the default ``up`` is world -y.
        """
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        return cls(fx, fy, width / 2.0 if cx is None else cx, height / 2.0 if cy is None else cy,
                   rot, -rot @ eye, width, height)

    def pixel_grid(self) -> np.ndarray:
        """(H*W, 2) pixel-center coordinates in row-major order."""
        xs = np.arange(self.width) + 0.5
        ys = np.arange(self.height) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def ray_directions(self) -> np.ndarray:
        """(H*W, 3) unit world-space ray directions through pixel centers."""
        pix = self.pixel_grid()
        d = np.stack([(pix[:, 0] - self.cx) / self.fx, (pix[:, 1] - self.cy) / self.fy,
                      np.ones(len(pix))], axis=1)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d @ self.rotation


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order; normalizes first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def quat_backward(q: np.ndarray, grad_rot: np.ndarray) -> np.ndarray:
    """Chain dL/dR (..., 3, 3) back to the raw (unnormalized) quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = np.moveaxis(qn, -1, 0)
    g = grad_rot
    gw = 2 * (-z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0] - x * g[..., 1, 2]
              - y * g[..., 2, 0] + x * g[..., 2, 1])
    gx = 2 * (y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1]
              - w * g[..., 1, 2] + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2])
    gy = 2 * (-2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0]
              + z * g[..., 1, 2] - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2])
    gz = 2 * (-2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0]
              - 2 * z * g[..., 1, 1] + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1])
    gqn = np.stack([gw, gx, gy, gz], -1)
    return (gqn - qn * np.sum(qn * gqn, axis=-1, keepdims=True)) / norm


def covariance_from_params(rotation, log_scale) -> np.ndarray:
    """R diag(exp(2 s)) R^T; broadcasts over leading axes."""
    r = quat_to_rotmat(rotation)
    s2 = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    return (r * s2[..., None, :]) @ np.swapaxes(r, -1, -2)


@dataclass
class Projection:
    """Per-view projected quantities for every primitive, kept for the backward pass."""

    valid: np.ndarray        # (N,) bool, in front of the near clip
    cam_points: np.ndarray   # (N, 3)
    mean2d: np.ndarray       # (N, 2)
    cov2d: np.ndarray        # (N, 2, 2), dilated
    conic: np.ndarray        # (N, 3) -> (a, b, c) of the inverse 2x2
    depth: np.ndarray        # (N,)
    jacobian: np.ndarray     # (N, 2, 3)
    cov_cam: np.ndarray      # (N, 3, 3) W Sigma W^T
    rotmats: np.ndarray      # (N, 3, 3)


def world_to_camera(camera: Camera, positions) -> np.ndarray:
    return np.asarray(positions, dtype=np.float64) @ camera.rotation.T + camera.translation


def project_points(camera: Camera, positions):
    """Pixel coordinates (..., 2) and camera-space depth (...,) of world points."""
    t = world_to_camera(camera, positions)
    z = t[..., 2]
    uv = np.stack([camera.fx * t[..., 0] / z + camera.cx, camera.fy * t[..., 1] / z + camera.cy], -1)
    return uv, z


def project_scene(camera: Camera, scene: Scene, near: float = NEAR_CLIP,
                  dilation: float = COV2D_DILATION) -> Projection:
    """EWA first-order projection of every primitive into ``camera``."""
    n = len(scene)
    t = world_to_camera(camera, scene.positions)
    z = t[:, 2]
    valid = z > near
    zs = np.where(valid, z, 1.0)
    x, y = t[:, 0], t[:, 1]
    fx, fy = camera.fx, camera.fy
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = fx / zs
    jac[:, 0, 2] = -fx * x / zs ** 2
    jac[:, 1, 1] = fy / zs
    jac[:, 1, 2] = -fy * y / zs ** 2
    rotmats = quat_to_rotmat(scene.rotations) if n else np.zeros((0, 3, 3))
    s2 = np.exp(2.0 * scene.log_scales)
    cov3 = (rotmats * s2[:, None, :]) @ np.swapaxes(rotmats, -1, -2)
    w = camera.rotation
    cov_cam = w @ cov3 @ w.T
    cov2d = jac @ cov_cam @ np.swapaxes(jac, -1, -2)
    cov2d[:, 0, 0] += dilation
    cov2d[:, 1, 1] += dilation
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    det = np.where(valid, det, 1.0)
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mean2d = np.stack([fx * x / zs + camera.cx, fy * y / zs + camera.cy], axis=1)
    return Projection(valid, t, mean2d, cov2d, conic, z.copy(), jac, cov_cam, rotmats)


def project_gaussian(camera: Camera, g: GaussianPrimitive, near: float = NEAR_CLIP):
    """Project a single primitive; returns ``(mean2d, cov2d, depth)``."""
    scene = Scene.from_primitives([g], Bounds(g.position - 1, g.position + 1))
    proj = project_scene(camera, scene, near)
    if not proj.valid[0]:
        raise BehindCamera(f"camera-space z={proj.depth[0]:.6g} is not beyond the near clip {near}")
    return proj.mean2d[0], proj.cov2d[0], float(proj.depth[0])


def unproject_pixel(camera: Camera, pixel, depth) -> np.ndarray:
    """World point at camera-space ``depth`` behind ``pixel``; vectorized over leading axes."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if pixel.shape[-1] != 2 or pixel.shape[:-1] != depth.shape:
        raise ShapeMismatch(f"pixel {pixel.shape} vs depth {depth.shape}")
    if np.any(~(depth > 0)):
        raise NonPositiveDepth("unprojection depth must be positive")
    xc = np.stack([(pixel[..., 0] - camera.cx) / camera.fx * depth,
                   (pixel[..., 1] - camera.cy) / camera.fy * depth, depth], axis=-1)
    return (xc - camera.translation) @ camera.rotation
