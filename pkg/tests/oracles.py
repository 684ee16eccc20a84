"""Slow reference implementations used as test oracles."""

import numpy as np

from mediasplat.medium import evaluate_camera
from mediasplat.scene import project_scene, sigmoid
from mediasplat.sh import gaussian_colors


def fragments(scene, camera):
    """Per-pixel sorted fragment lists [(alpha, z, color)] by brute force over every primitive."""
    proj = project_scene(camera, scene)
    op = sigmoid(scene.opacity_logits)
    dirs = scene.positions - camera.center
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    colors, _, _ = gaussian_colors(scene.color_sh, dirs)
    order = np.argsort(proj.depth, kind="stable")
    inv = [np.linalg.inv(c) if v else None for c, v in zip(proj.cov2d, proj.valid)]
    out = []
    for row in range(camera.height):
        for col in range(camera.width):
            px = np.array([col + 0.5, row + 0.5])
            frags = []
            for i in order:
                if not proj.valid[i]:
                    continue
                d = px - proj.mean2d[i]
                a = min(op[i] * np.exp(-0.5 * d @ inv[i] @ d), 0.999)
                if a >= 1 / 255:
                    frags.append((a, proj.depth[i], colors[i]))
            out.append(frags)
    return out


def render_terms(scene, medium, camera):
    """Medium render written as the literal three-part sum with z_0 = 0."""
    sample, _ = evaluate_camera(medium, camera)
    color = np.zeros((camera.height * camera.width, 3))
    trans = np.zeros(camera.height * camera.width)
    for p, frags in enumerate(fragments(scene, camera)):
        cm, sa, sb = sample.c_med[p], sample.sigma_att[p], sample.sigma_bs[p]
        t, z_prev, acc = 1.0, 0.0, np.zeros(3)
        for a, z, c in frags:
            acc += c * a * t * np.exp(-sa * z)
            acc += cm * t * (np.exp(-sb * z_prev) - np.exp(-sb * z))
            t *= 1 - a
            z_prev = z
        acc += cm * t * np.exp(-sb * z_prev)
        color[p], trans[p] = acc, t
    shape = (camera.height, camera.width)
    return color.reshape(shape + (3,)), trans.reshape(shape)


def central_difference(f, arr, idx, h):
    old = arr[idx]
    arr[idx] = old + h
    lp = f()
    arr[idx] = old - h
    lm = f()
    arr[idx] = old
    return (lp - lm) / (2 * h)


def _gauss2d(size, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ms_ssim_reference(x, y, max_scales=5):
    """MS-SSIM from its definition: 2D valid convolution per channel, 2x2 mean pooling between scales."""
    from scipy.signal import convolve2d

    weights = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    x = np.atleast_3d(np.asarray(x, float))
    y = np.atleast_3d(np.asarray(y, float))
    m = 1
    while m < max_scales and min(x.shape[:2]) / 2 ** m >= 11:
        m += 1
    w = weights[:m] / weights[:m].sum()
    result = []
    for ch in range(x.shape[2]):
        a, b = x[:, :, ch], y[:, :, ch]
        val = 1.0
        for j in range(m):
            size = min(11, min(a.shape))
            size -= 1 - size % 2
            k = _gauss2d(size)

            def f(im):
                return convolve2d(im, k, mode="valid")

            mu_a, mu_b = f(a), f(b)
            va = f(a * a) - mu_a ** 2
            vb = f(b * b) - mu_b ** 2
            cov = f(a * b) - mu_a * mu_b
            cs = ((2 * cov + c2) / (va + vb + c2)).mean()
            if j == m - 1:
                lum_cs = ((2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
                          * (2 * cov + c2) / (va + vb + c2)).mean()
                val *= max(lum_cs, 0.0) ** w[j]
            else:
                val *= max(cs, 0.0) ** w[j]
                h, wd = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
                a = a[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
                b = b[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
        result.append(val)
    return float(np.mean(result))


def depth_rank_brute(u, v, mode="hinge"):
    """Ordinal pair sum over already-downsampled grids, by explicit double loop."""
    u, v = np.ravel(u), np.ravel(v)
    n4 = len(u) ** 2
    total = 0.0
    for i in range(len(u)):
        for j in range(len(u)):
            p = -(v[i] - v[j]) * (u[i] - u[j])
            total += max(p, 0.0) if mode == "hinge" else min(p, 0.0)
    return total / n4
