"""Training losses (weighted L1, weighted MS-SSIM, depth ranking) with gradients, and metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, ZeroMeanRestored

MS_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
WIN_SIZE = 11
WIN_SIGMA = 1.5
K1, K2 = 0.01, 0.03
WEIGHTED_CLAMP = 10.0


@dataclass
class LossWeights:
    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    lambda_depth: float = 5.0
    epsilon: float = 1e-6
    patch_n: int = 16
    depth_min_coverage: float = 0.5   # patches below this pooled 1 - T sit out of depth ranking; 0 = all pairs

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_ssim, self.lambda_depth, self.epsilon) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.depth_min_coverage <= 1.0:
            raise ValueError("depth_min_coverage must be in [0, 1]")
        if self.patch_n < 2:
            raise ValueError("patch_n must be at least 2")


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"{np.shape(a)} vs {np.shape(b)}")


def weight_matrix(rendered, epsilon: float = 1e-6) -> np.ndarray:
    """1 / (rendered + eps), computed from a detached copy so it never carries gradient."""
    return 1.0 / (np.array(rendered, dtype=np.float64, copy=True) + epsilon)


# weighted L1 ---------------------------------------------------------------

def l1_with_grad(rendered, target, W):
    _same_shape(rendered, target)
    diff = W * rendered - W * target
    n = diff.size
    return float(np.mean(np.abs(diff))), np.sign(diff) * W / n


def loss_reg_l1(rendered, target, W) -> float:
    return l1_with_grad(np.asarray(rendered, float), np.asarray(target, float), W)[0]


# SSIM machinery ----------------------------------------------------------------

def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return k / k.sum()


def _filter_valid(x, k):
    for axis in (0, 1):
        x = sliding_window_view(x, len(k), axis=axis) @ k
    return x


def _filter_adjoint(g, k):
    pad = len(k) - 1
    for axis in (1, 0):
        widths = [(0, 0)] * g.ndim
        widths[axis] = (pad, pad)
        g = sliding_window_view(np.pad(g, widths), len(k), axis=axis) @ k[::-1]
    return g


def _pool2(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _pool2_adjoint(g, shape):
    out = np.zeros(shape)
    h, w = g.shape[0] * 2, g.shape[1] * 2
    up = 0.25 * np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
    out[:h, :w] = up
    return out


def _window_for(shape):
    size = min(WIN_SIZE, min(shape[0], shape[1]))
    if size % 2 == 0:
        size -= 1
    return gaussian_window(max(size, 1))


def _ssim_stats(x, y, k, data_range=1.0):
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = _filter_valid(x, k), _filter_valid(y, k)
    exx, eyy, exy = _filter_valid(x * x, k), _filter_valid(y * y, k), _filter_valid(x * y, k)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    d1 = mx * mx + my * my + c1
    d2 = vx + vy + c2
    lum = (2 * mx * my + c1) / d1
    cs = (2 * cxy + c2) / d2
    return dict(mx=mx, my=my, d1=d1, d2=d2, lum=lum, cs=cs)


def _ssim_stats_backward(x, y, k, st, g_lum, g_cs):
    """Gradient w.r.t. ``x`` given map gradients of luminance and contrast-structure terms."""
    mx, my, d1, d2, lum, cs = st["mx"], st["my"], st["d1"], st["d2"], st["lum"], st["cs"]
    g_cxy = g_cs * 2.0 / d2
    g_v = -g_cs * cs / d2
    g_mx = g_lum * (2 * my - 2 * mx * lum) / d1
    # vx = exx - mx^2, cxy = exy - mx*my
    g_exx = g_v
    g_exy = g_cxy
    g_mx = g_mx - 2 * mx * g_v - my * g_cxy
    return _filter_adjoint(g_mx, k) + 2 * x * _filter_adjoint(g_exx, k) + y * _filter_adjoint(g_exy, k)


def n_scales(shape, max_scales: int = 5) -> int:
    m = min(shape[0], shape[1])
    s = 1
    while s < max_scales and m / 2 ** s >= WIN_SIZE:
        s += 1
    return s


def ms_ssim_with_grad(x, y, data_range: float = 1.0, max_scales: int = 5):
    """Per-image MS-SSIM (mean over channels) of (H, W, C) images and its gradient w.r.t. ``x``."""
    _same_shape(x, y)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x, y = x[..., None], y[..., None]
    m = n_scales(x.shape, max_scales)
    weights = MS_WEIGHTS[:m] / MS_WEIGHTS[:m].sum()
    xs, ys, stats, kernels = [x], [y], [], []
    for j in range(m):
        k = _window_for(xs[j].shape)
        kernels.append(k)
        stats.append(_ssim_stats(xs[j], ys[j], k, data_range))
        if j < m - 1:
            xs.append(_pool2(xs[j]))
            ys.append(_pool2(ys[j]))
    nch = x.shape[2]
    terms = []
    for j, st in enumerate(stats):
        v = st["cs"] if j < m - 1 else st["lum"] * st["cs"]
        terms.append(np.maximum(v.mean(axis=(0, 1)), 0.0))
    terms = np.array(terms)  # (m, C)
    per_ch = np.prod(terms ** weights[:, None], axis=0)
    value = float(per_ch.mean())

    grad_acc = None
    for j in range(m - 1, -1, -1):
        st = stats[j]
        t = terms[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            d_term = np.where(t > 0, per_ch * weights[j] / np.where(t > 0, t, 1.0), 0.0) / nch
        npix = st["cs"].shape[0] * st["cs"].shape[1]
        g_map = np.broadcast_to(d_term / npix, st["cs"].shape)
        if j < m - 1:
            gx = _ssim_stats_backward(xs[j], ys[j], kernels[j], st, 0.0, g_map)
        else:
            gx = _ssim_stats_backward(xs[j], ys[j], kernels[j], st, g_map * st["cs"],
                                      g_map * st["lum"])
        if grad_acc is not None:
            gx = gx + _pool2_adjoint(grad_acc, xs[j].shape)
        grad_acc = gx
    if squeeze:
        grad_acc = grad_acc[..., 0]
    return value, grad_acc


def ssim_with_grad(x, y, data_range: float = 1.0):
    """Single-scale mean SSIM and its gradient w.r.t. ``x``."""
    _same_shape(x, y)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x, y = x[..., None], y[..., None]
    k = _window_for(x.shape)
    st = _ssim_stats(x, y, k, data_range)
    smap = st["lum"] * st["cs"]
    value = float(smap.mean())
    g = np.full(smap.shape, 1.0 / smap.size)
    gx = _ssim_stats_backward(x, y, k, st, g * st["cs"], g * st["lum"])
    return value, (gx[..., 0] if squeeze else gx)


def _weighted_inputs(rendered, target, W):
    xw = W * rendered
    yw = np.clip(W * target, 0.0, WEIGHTED_CLAMP)
    inside = (xw >= 0.0) & (xw <= WEIGHTED_CLAMP)
    return np.clip(xw, 0.0, WEIGHTED_CLAMP), yw, inside


def ssim_loss_with_grad(rendered, target, W, multiscale: bool = True):
    _same_shape(rendered, target)
    x, y, inside = _weighted_inputs(rendered, target, W)
    val, gx = ms_ssim_with_grad(x, y) if multiscale else ssim_with_grad(x, y)
    return 1.0 - val, -gx * inside * W


def loss_reg_ms_ssim(rendered, target, W, multiscale: bool = True) -> float:
    return ssim_loss_with_grad(np.asarray(rendered, float), np.asarray(target, float), W,
                               multiscale)[0]


# depth ranking -------------------------------------------------------------------

def _pool_matrix(src: int, n: int) -> np.ndarray:
    """(n, src) area-averaging weights with fractional overlaps."""
    edges = np.arange(n + 1) * (src / n)
    lo = np.arange(src)
    m = np.clip(np.minimum(edges[1:, None], lo[None, :] + 1) - np.maximum(edges[:-1, None], lo[None, :]),
                0.0, None)
    return m / (src / n)


def downsample_nn(depth_map, n: int) -> np.ndarray:
    """Area-average pooling of an (H, W) map onto an n x n grid."""
    d = np.asarray(depth_map, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty depth map")
    return _pool_matrix(d.shape[0], n) @ d @ _pool_matrix(d.shape[1], n).T


def depth_rank_with_grad(rendered_depth, pseudo_depth, n: int = 16, mode: str = "hinge",
                         coverage=None, min_coverage: float = 0.0):
    """Pairwise ordinal loss over n x n pooled patches, with its gradient w.r.t. rendered depth.

    With ``coverage`` (1 - T) given, only pairs of patches whose pooled coverage reaches
    ``min_coverage`` contribute. Normalized depth jumps from 0 to z as soon as any faint fragment
    lands on an empty pixel, so ranking empty patches rewards far floaters.
    """
    _same_shape(rendered_depth, pseudo_depth)
    if mode not in ("hinge", "literal"):
        raise ValueError(f"unknown depth-rank mode {mode!r}")
    rd = np.asarray(rendered_depth, dtype=np.float64)
    pr, pc = _pool_matrix(rd.shape[0], n), _pool_matrix(rd.shape[1], n)
    u = (pr @ rd @ pc.T).ravel()
    v = downsample_nn(pseudo_depth, n).ravel()
    a = v[:, None] - v[None, :]
    prod = a * (u[:, None] - u[None, :])
    if coverage is not None and min_coverage > 0:
        keep = downsample_nn(coverage, n).ravel() >= min_coverage
        prod = prod * (keep[:, None] & keep[None, :])
        a = a * (keep[:, None] & keep[None, :])
    scale = 1.0 / n ** 4
    if mode == "hinge":
        value = np.sum(np.maximum(-prod, 0.0)) * scale
        g_b = -a * (prod < 0) * scale
    else:
        value = np.sum(np.minimum(-prod, 0.0)) * scale
        g_b = -a * (prod > 0) * scale
    g_u = g_b.sum(axis=1) - g_b.sum(axis=0)
    return float(value), pr.T @ g_u.reshape(n, n) @ pc


def loss_depth_rank(rendered_depth, pseudo_depth, n: int = 16, mode: str = "hinge") -> float:
    return depth_rank_with_grad(rendered_depth, pseudo_depth, n, mode)[0]


# total --------------------------------------------------------------------------------

@dataclass
class LossResult:
    total: float
    l1: float
    ssim: float
    depth: float
    grad_color: np.ndarray
    grad_depth: Optional[np.ndarray]


def total_loss_fixed_weight(color, depth, target, pseudo_depth, W, weights: LossWeights,
                            multiscale: bool = True, depth_mode: str = "hinge",
                            coverage=None) -> LossResult:
    """Combined objective with an externally supplied weight matrix.

    ``coverage`` (1 - T) enables the depth-rank coverage gate of ``weights``.
    """
    l1, g1 = l1_with_grad(color, target, W)
    ls, gs = ssim_loss_with_grad(color, target, W, multiscale)
    grad = weights.lambda_l1 * g1 + weights.lambda_ssim * gs
    total = weights.lambda_l1 * l1 + weights.lambda_ssim * ls
    ld, gd = 0.0, None
    if pseudo_depth is not None and weights.lambda_depth > 0:
        ld, gd = depth_rank_with_grad(depth, pseudo_depth, weights.patch_n, depth_mode,
                                      coverage, weights.depth_min_coverage)
        total += weights.lambda_depth * ld
        gd = weights.lambda_depth * gd
    return LossResult(float(total), l1, ls, ld, grad, gd)


def total_loss(rendered, target, pseudo_depth=None, weights: LossWeights = None,
               multiscale: bool = True, depth_mode: str = "hinge") -> LossResult:
    """Weighted L1 + weighted (MS-)SSIM + depth ranking, with upstream gradients for the renderer.

    ``rendered`` is a ``RenderOutput``; ``pseudo_depth=None`` disables the depth-rank term.
    """
    weights = weights or LossWeights()
    W = weight_matrix(rendered.color, weights.epsilon)
    return total_loss_fixed_weight(rendered.color, rendered.depth, np.asarray(target, float),
                                   pseudo_depth, W, weights, multiscale, depth_mode,
                                   1.0 - rendered.transmittance)


# metrics ------------------------------------------------------------------------------

def psnr(a, b) -> float:
    _same_shape(a, b)
    a = np.clip(np.asarray(a, dtype=np.float64), 0, 1)
    b = np.clip(np.asarray(b, dtype=np.float64), 0, 1)
    mse = float(np.mean((a - b) ** 2))
    return float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)


def ssim(a, b) -> float:
    a = np.clip(np.asarray(a, dtype=np.float64), 0, 1)
    b = np.clip(np.asarray(b, dtype=np.float64), 0, 1)
    return ssim_with_grad(a, b)[0]


def ms_ssim(a, b) -> float:
    a = np.clip(np.asarray(a, dtype=np.float64), 0, 1)
    b = np.clip(np.asarray(b, dtype=np.float64), 0, 1)
    return ms_ssim_with_grad(a, b)[0]


def exposure_scale(restored, gt) -> float:
    m = float(np.mean(restored))
    if m <= 0:
        raise ZeroMeanRestored("restored image has zero mean intensity")
    return float(np.mean(gt)) / m


def exposure_align(restored, gt) -> np.ndarray:
    """Scale ``restored`` to the mean intensity of ``gt``, then clamp to [0, 1]."""
    return np.clip(np.asarray(restored, dtype=np.float64) * exposure_scale(restored, gt), 0.0, 1.0)
