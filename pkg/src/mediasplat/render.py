"""Forward rendering of color/depth/transmittance through a medium, and its analytic backward pass."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .medium import FIELDS, MediumGrid, evaluate_camera, medium_backward
from .scene import Camera, Projection, Scene, project_scene, quat_backward, sigmoid
from .sh import gaussian_colors, sh_basis, sh_basis_jacobian


@dataclass
class RenderOptions:
    early_stop: bool = False
    workers: int = 1
    rows_per_chunk: int = 8


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: np.ndarray
    transmittance: np.ndarray
    restored: Optional[np.ndarray] = None


@dataclass
class Upstream:
    """dLoss/dRenderOutput; ``None`` fields are treated as zero."""

    color: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    transmittance: Optional[np.ndarray] = None
    restored: Optional[np.ndarray] = None


@dataclass
class Gradients:
    scene: dict            # name -> array shaped like the Scene parameter
    medium: dict           # field -> (8, 16, 3)
    abs_grad2d: np.ndarray  # (N,) norm of per-pixel-accumulated |dL/dmean2d|
    visible: np.ndarray    # (N,) bool, primitive contributed to at least one pixel


@dataclass
class _View:
    camera: Camera
    proj: Projection
    order: np.ndarray
    opacity: np.ndarray
    bbox: np.ndarray
    colors: np.ndarray
    color_basis: np.ndarray
    color_active: np.ndarray
    dirs: np.ndarray
    dir_norm: np.ndarray
    cmed: np.ndarray
    satt: np.ndarray
    sbs: np.ndarray
    medium_ctx: object


def ray_basis(camera: Camera) -> np.ndarray:
    """SH basis at every pixel ray of ``camera``; cacheable per view."""
    return sh_basis(camera.ray_directions(), check=False)


def _prepare(scene: Scene, camera: Camera, medium: Optional[MediumGrid], basis=None,
             background=None) -> _View:
    proj = project_scene(camera, scene)
    opacity = sigmoid(scene.opacity_logits)
    v = scene.positions - camera.center
    norm = np.maximum(np.linalg.norm(v, axis=1), 1e-12)
    dirs = v / norm[:, None]
    colors, cbasis, active = gaussian_colors(scene.color_sh, dirs)

    # exact cull radius: beyond it alpha < 1/255 for this primitive's opacity
    with np.errstate(divide="ignore"):
        q_thr = 2.0 * np.log(np.maximum(opacity, 1e-300) / K.ALPHA_MIN)
    cov = proj.cov2d
    half_tr = 0.5 * (cov[:, 0, 0] + cov[:, 1, 1])
    lam = half_tr + np.sqrt(np.maximum(half_tr ** 2 - (cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2), 0))
    live = proj.valid & (q_thr > 0)
    radius = np.sqrt(np.where(live, q_thr, 0.0) * lam) * (1 + 1e-9) + 1e-9
    m = proj.mean2d
    bbox = np.stack([m[:, 0] - radius, m[:, 0] + radius, m[:, 1] - radius, m[:, 1] + radius], 1)
    live &= (bbox[:, 1] >= 0) & (bbox[:, 0] <= camera.width) & (bbox[:, 3] >= 0) & (bbox[:, 2] <= camera.height)
    idx = np.flatnonzero(live)
    order = idx[np.argsort(proj.depth[idx], kind="stable")].astype(np.int64)

    npix = camera.width * camera.height
    if medium is None:
        bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
        cmed = np.ascontiguousarray(np.broadcast_to(bg, (npix, 3)))
        satt = np.zeros((npix, 3))
        sbs = np.zeros((npix, 3))
        ctx = None
    else:
        sample, ctx = evaluate_camera(medium, camera, basis)
        cmed, satt, sbs = sample.c_med, sample.sigma_att, sample.sigma_bs
    return _View(camera, proj, order, opacity, np.ascontiguousarray(bbox), colors, cbasis, active,
                 dirs, norm, np.ascontiguousarray(cmed), np.ascontiguousarray(satt),
                 np.ascontiguousarray(sbs), ctx)


def _chunks(camera: Camera, opts: RenderOptions):
    step = max(1, int(opts.rows_per_chunk))
    return [(r, min(r + step, camera.height)) for r in range(0, camera.height, step)]


def _run(fn, chunks, workers):
    if workers <= 1 or len(chunks) <= 1:
        for i, c in enumerate(chunks):
            fn(i, c)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda ic: fn(*ic), enumerate(chunks)))


def _forward(view: _View, opts: RenderOptions) -> RenderOutput:
    cam = view.camera
    npix = cam.width * cam.height
    color = np.empty((npix, 3))
    restored = np.empty((npix, 3))
    depth = np.empty(npix)
    trans = np.empty(npix)
    p = view.proj

    def work(_, rows):
        K.forward_rows(rows[0], rows[1], cam.width, view.order, p.mean2d, p.conic, view.opacity,
                       view.bbox, view.colors, p.depth, view.cmed, view.satt, view.sbs,
                       opts.early_stop, color, restored, depth, trans)

    _run(work, _chunks(cam, opts), opts.workers)
    h, w = cam.height, cam.width
    return RenderOutput(color.reshape(h, w, 3), depth.reshape(h, w), trans.reshape(h, w),
                        restored.reshape(h, w, 3))


def render(scene: Scene, medium: MediumGrid, camera: Camera, opts: RenderOptions = None,
           restored: bool = True, basis=None) -> RenderOutput:
    """Medium-aware rendering of color, alpha-blended depth and residual object transmittance."""
    out = _forward(_prepare(scene, camera, medium, basis), opts or RenderOptions())
    if not restored:
        out.restored = None
    return out


def render_vanilla(scene: Scene, camera: Camera, background=(0.0, 0.0, 0.0),
                   opts: RenderOptions = None) -> RenderOutput:
    """Plain alpha blending over a constant background."""
    out = _forward(_prepare(scene, camera, None), opts or RenderOptions())
    bg = np.asarray(background, dtype=np.float64)
    out.color = out.restored + bg * out.transmittance[..., None]
    return out


def render_with_context(scene, medium, camera, opts=None, basis=None):
    opts = opts or RenderOptions()
    view = _prepare(scene, camera, medium, basis)
    return _forward(view, opts), view


def backward_from_context(scene: Scene, medium: MediumGrid, view: _View, upstream: Upstream,
                          opts: RenderOptions = None) -> Gradients:
    opts = opts or RenderOptions()
    cam = view.camera
    h, w = cam.height, cam.width
    npix = h * w
    n = len(scene)

    def field(x, shape):
        return np.zeros(shape) if x is None else np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(shape))

    gc = field(upstream.color, (npix, 3))
    gr = field(upstream.restored, (npix, 3))
    gd = field(upstream.depth, npix)
    gt = field(upstream.transmittance, npix)
    chunks = _chunks(cam, opts)
    gbuf = np.zeros((len(chunks), n, K.G_COLS))
    g_cmed = np.empty((npix, 3))
    g_satt = np.empty((npix, 3))
    g_sbs = np.empty((npix, 3))
    p = view.proj

    def work(i, rows):
        K.backward_rows(rows[0], rows[1], w, view.order, p.mean2d, p.conic, view.opacity,
                        view.bbox, view.colors, p.depth, view.cmed, view.satt, view.sbs,
                        opts.early_stop, gc, gr, gd, gt, gbuf[i], g_cmed, g_satt, g_sbs)

    _run(work, chunks, opts.workers)
    g = gbuf.sum(axis=0)
    scene_grads = _geometry_backward(scene, view, g)
    if view.medium_ctx is not None:
        med = medium_backward(view.medium_ctx, {"c_med": g_cmed, "sigma_att": g_satt,
                                                "sigma_bs": g_sbs})
    else:
        med = {f: np.zeros((8, 16, 3)) for f in FIELDS}
    abs2d = np.linalg.norm(g[:, K.G_ABS:K.G_ABS + 2], axis=1)
    return Gradients(scene_grads, med, abs2d, g[:, K.G_HITS] > 0)


def render_backward(scene: Scene, medium: MediumGrid, camera: Camera, upstream: Upstream,
                    opts: RenderOptions = None, basis=None) -> Gradients:
    """Analytic partials of every learnable parameter for one view."""
    _, view = render_with_context(scene, medium, camera, opts, basis)
    return backward_from_context(scene, medium, view, upstream, opts)


def _geometry_backward(scene: Scene, view: _View, g: np.ndarray) -> dict:
    cam = view.camera
    p = view.proj
    n = len(scene)
    if n == 0:
        return {k: np.zeros_like(getattr(scene, k)) for k in Scene.PARAM_NAMES}
    g_mean = g[:, K.G_MEAN:K.G_MEAN + 2]
    g_conic = g[:, K.G_CONIC:K.G_CONIC + 3]
    g_z = g[:, K.G_DEPTH]

    op = view.opacity
    g_logit = g[:, K.G_OPACITY] * op * (1.0 - op)

    g_raw = g[:, K.G_COLOR:K.G_COLOR + 3] * view.color_active
    g_sh = view.color_basis[:, :, None] * g_raw[:, None, :]
    jb = sh_basis_jacobian(view.dirs)
    g_dir = np.einsum("nkc,nc,nkj->nj", scene.color_sh, g_raw, jb)
    d = view.dirs
    g_pos = (g_dir - d * np.sum(d * g_dir, axis=1, keepdims=True)) / view.dir_norm[:, None]

    a, b, c = p.conic[:, 0], p.conic[:, 1], p.conic[:, 2]
    kmat = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    gk = np.stack([np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1]], -1),
                   np.stack([0.5 * g_conic[:, 1], g_conic[:, 2]], -1)], -2)
    g_cov2 = -kmat @ gk @ kmat
    jac = p.jacobian
    g_covcam = np.swapaxes(jac, -1, -2) @ g_cov2 @ jac
    g_jac = 2.0 * g_cov2 @ jac @ p.cov_cam

    x, y = p.cam_points[:, 0], p.cam_points[:, 1]
    z = np.where(p.valid, p.cam_points[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy
    g_t = np.zeros((n, 3))
    g_t[:, 0] = fx / z * g_mean[:, 0] - fx / z ** 2 * g_jac[:, 0, 2]
    g_t[:, 1] = fy / z * g_mean[:, 1] - fy / z ** 2 * g_jac[:, 1, 2]
    g_t[:, 2] = (-fx * x / z ** 2 * g_mean[:, 0] - fy * y / z ** 2 * g_mean[:, 1]
                 - fx / z ** 2 * g_jac[:, 0, 0] + 2 * fx * x / z ** 3 * g_jac[:, 0, 2]
                 - fy / z ** 2 * g_jac[:, 1, 1] + 2 * fy * y / z ** 3 * g_jac[:, 1, 2] + g_z)
    g_t[~p.valid] = 0.0
    wrot = cam.rotation
    g_pos = g_pos + g_t @ wrot

    g_sigma = wrot.T @ g_covcam @ wrot
    r = p.rotmats
    s2 = np.exp(2.0 * scene.log_scales)
    g_ls = 2.0 * s2 * np.einsum("nik,nij,njk->nk", r, g_sigma, r)
    g_rot = 2.0 * (g_sigma @ r) * s2[:, None, :]
    g_q = quat_backward(scene.rotations, g_rot)
    return {"positions": g_pos, "rotations": g_q, "log_scales": g_ls,
            "opacity_logits": g_logit, "color_sh": g_sh}
