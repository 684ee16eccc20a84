"""Joint optimization of Gaussians and medium: render, loss, backward, Adam, densify/prune, PDGC."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateFit, EmptyDataset, NonFiniteLoss, ShapeMismatch
from .io import Checkpoint, Dataset
from .medium import MediumGrid, medium_variant
from .objective import LossWeights, psnr, total_loss
from .pdgc import affine_fit, complement, init_from_points, region_masks
from .render import (RenderOptions, Upstream, backward_from_context, ray_basis, render, render_vanilla,
                     render_with_context)
from .scene import Scene, logit, quat_to_rotmat

log = logging.getLogger(__name__)

EMPTY_T = 0.99   # transmittance above which an initial render pixel counts as pure medium


@dataclass
class TrainConfig:
    steps: int = 3000
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    spatial_lr_scale: Optional[float] = None   # None: scene-bounds radius
    lr_rotation: float = 1e-3
    lr_log_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_color_sh: float = 2.5e-3
    sh_degree: int = 3                         # highest trained band of Gaussian colors
    lr_medium: float = 1e-3
    densify_from: int = 500
    densify_until_frac: float = 0.6
    densify_interval: int = 100
    densify_grad_threshold: float = 4e-4
    split_scale_frac: float = 0.01
    prune_opacity: float = 5e-3
    max_primitives: int = 20000
    opacity_reset_interval: int = 3000
    pdgc_step: Optional[int] = 500
    pdgc_stride: int = 4
    pdgc_cap: int = 5000
    tau_w: float = 0.99
    tau_near: float = 0.5
    loss: LossWeights = field(default_factory=LossWeights)
    depth_rank_mode: str = "hinge"
    multiscale_ssim: bool = True
    medium_mode: str = "dir_and_pos"
    medium_init_color: float = 0.3
    medium_color_from_empty: bool = True       # start c_med at the mean of pixels the init leaves empty
    medium_init_sigma: float = 0.05
    seed: int = 0
    workers: int = 1
    eval_interval: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.densify_interval <= 0 or self.opacity_reset_interval <= 0:
            raise ValueError("intervals must be positive")
        if self.densify_grad_threshold <= 0 or self.prune_opacity <= 0:
            raise ValueError("thresholds must be positive")
        if not 0 <= self.sh_degree <= 3:
            raise ValueError("sh_degree must be in 0..3")
        medium_variant(self.medium_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# Adam -----------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15

    def as_dict(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(dict(d["m"]), dict(d["v"]), int(d["step"]))

    def remap(self, name: str, source: np.ndarray):
        """Reindex moments of ``name`` after densification; ``source == -1`` rows start at zero."""
        for store in (self.m, self.v):
            if name in store:
                old = store[name]
                new = np.zeros((len(source),) + old.shape[1:])
                ok = source >= 0
                new[ok] = old[source[ok]]
                store[name] = new


def adam_step(params: dict, grads: dict, state: AdamState, lr) -> tuple:
    """Bias-corrected Adam update in place; ``lr`` is a float or a per-parameter dict.

    Any parameter called ``rotations`` is renormalized to unit quaternions afterwards.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if np.shape(g) != np.shape(p):
            raise ShapeMismatch(f"{name}: grad {np.shape(g)} vs param {np.shape(p)}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape:
            raise ShapeMismatch(f"{name}: moment {m.shape} vs param {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step = lr[name] if isinstance(lr, dict) else lr
        p -= step * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if name == "rotations" and len(p):
            p /= np.linalg.norm(p, axis=-1, keepdims=True)
    return params, state


# densification ---------------------------------------------------------------------------

@dataclass
class DensifyStats:
    grad_accum: np.ndarray
    count: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n))

    def add(self, abs_grad2d, visible):
        self.grad_accum += np.where(visible, abs_grad2d, 0.0)
        self.count += visible


def densify_and_prune(scene: Scene, stats: DensifyStats, config: TrainConfig, rng,
                      extent: Optional[float] = None):
    """Clone small / split large high-gradient primitives, then drop near-transparent ones.

    Returns ``(new_scene, source)`` where ``source[j]`` is the pre-densify index that row ``j``
    derives from (children of split primitives point at their parent).
    """
    n = len(scene)
    extent = scene.bounds.extent if extent is None else extent
    mean_grad = stats.grad_accum / np.maximum(stats.count, 1)
    over = mean_grad > config.densify_grad_threshold
    room = max(0, config.max_primitives - n)
    if over.sum() > room:
        cand = np.flatnonzero(over)
        top = cand[np.argsort(-mean_grad[cand], kind="stable")[:room]]
        over = np.zeros(n, bool)
        over[top] = True
    big = np.exp(scene.log_scales).max(axis=1) > config.split_scale_frac * extent
    clone_idx = np.flatnonzero(over & ~big)
    split_idx = np.flatnonzero(over & big)

    parts = [scene.select(np.flatnonzero(~(over & big)))]
    source = [np.flatnonzero(~(over & big))]
    if len(clone_idx):
        parts.append(scene.select(clone_idx))
        source.append(clone_idx)
    if len(split_idx):
        for _ in range(2):
            child = scene.select(split_idx).copy()
            s = np.exp(child.log_scales)
            offs = rng.standard_normal((len(split_idx), 3)) * s
            child.positions = child.positions + np.einsum("nij,nj->ni", quat_to_rotmat(child.rotations), offs)
            child.log_scales = child.log_scales - np.log(1.6)
            parts.append(child)
            source.append(split_idx)
    out = parts[0]
    for p in parts[1:]:
        out = out.extend(p)
    source = np.concatenate(source)
    keep = 1.0 / (1.0 + np.exp(-out.opacity_logits)) >= config.prune_opacity
    out = out.select(np.flatnonzero(keep))
    source = source[keep]
    stats.grad_accum = np.zeros(len(out))
    stats.count = np.zeros(len(out))
    return out, source


# training -----------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list
    pdgc_report: list = field(default_factory=list)
    pdgc_added: list = field(default_factory=list)   # (view_id, positions, target mask) per view


def scene_params(scene: Scene, medium: MediumGrid) -> dict:
    p = {f"scene/{k}": getattr(scene, k) for k in Scene.PARAM_NAMES}
    p.update({f"medium/{k}": v for k, v in medium.params().items()})
    return p


def _lrs(config: TrainConfig, step: int, spatial: float) -> dict:
    frac = min(max((step - 1) / max(config.steps - 1, 1), 0.0), 1.0)
    pos = np.exp((1 - frac) * np.log(config.lr_position) + frac * np.log(config.lr_position_final))
    lr = {"scene/positions": pos * spatial, "scene/rotations": config.lr_rotation,
          "scene/log_scales": config.lr_log_scale, "scene/opacity_logits": config.lr_opacity,
          "scene/color_sh": config.lr_color_sh}
    for k in ("c_med", "sigma_att", "sigma_bs"):
        lr[f"medium/{k}"] = config.lr_medium
    return lr


def run_pdgc(scene: Scene, medium: MediumGrid, views, config: TrainConfig, opts=None, bases=None,
             collect: Optional[list] = None):
    """One complementation pass over ``views``; returns ``(scene', report)``.

    ``collect``, if given, receives ``(view_id, new_positions, near_and_uncovered_mask)`` per view.
    """
    opts = opts or RenderOptions(workers=config.workers)
    new_parts, report = [], []
    for i, v in enumerate(views):
        if v.pseudo_depth is None:
            continue
        out = render(scene, medium, v.camera, opts, basis=None if bases is None else bases[i])
        try:
            fit = affine_fit(out.depth, v.pseudo_depth, out.transmittance, config.tau_w)
        except DegenerateFit as e:
            report.append({"view": v.id, "inserted": 0, "k": 1.0, "b": 0.0, "skipped": str(e)})
            continue
        add = complement(scene, v.camera, v.pseudo_depth, out, v.image, fit, config.tau_w,
                         config.tau_near, config.pdgc_stride, config.pdgc_cap)
        report.append({"view": v.id, "inserted": len(add), "k": fit.k, "b": fit.b,
                       "samples": fit.sample_count, "rms": fit.residual_rms})
        if collect is not None:
            _, omega_p, omega_n = region_masks(v.pseudo_depth, out.transmittance, config.tau_w, config.tau_near)
            collect.append((v.id, add.positions.copy(), omega_n & omega_p))
        if len(add):
            new_parts.append(add)
    for part in new_parts:
        scene = scene.extend(part)
    return scene, report


def empty_pixel_color(scene: Scene, views, min_fraction: float = 0.001):
    """Mean target color over pixels the scene leaves empty (T > 0.99), which show pure medium.

    Returns None when fewer than ``min_fraction`` of the pixels are empty.
    """
    picked, total = [], 0
    for v in views:
        empty = render_vanilla(scene, v.camera).transmittance > EMPTY_T
        picked.append(v.image[empty])
        total += empty.size
    picked = np.concatenate(picked)
    if len(picked) < min_fraction * max(total, 1):
        return None
    return np.clip(picked.mean(0), 0.02, 0.98)


def initial_state(dataset: Dataset, config: TrainConfig):
    if dataset.points is None or len(dataset.points) == 0:
        from .errors import EmptyPointCloud
        raise EmptyPointCloud("dataset has no sparse points for initialization")
    scene = init_from_points(dataset.points, dataset.point_colors)
    scene.bounds = dataset.bounds
    medium_bounds = dataset.bounds.union_points(np.stack([v.camera.center for v in dataset.views]))
    c_med = empty_pixel_color(scene, dataset.split("train")) if config.medium_color_from_empty else None
    if c_med is None:
        c_med = config.medium_init_color
    medium = MediumGrid.homogeneous(medium_bounds, c_med, config.medium_init_sigma,
                                    config.medium_init_sigma, config.medium_mode)
    return scene, medium


def evaluate_views(scene, medium, views, opts=None) -> float:
    vals = [psnr(render(scene, medium, v.camera, opts).color, v.image) for v in views]
    return float(np.mean(vals)) if vals else float("nan")


def train(dataset: Dataset, config: TrainConfig = None,
          callback: Optional[Callable[[dict], None]] = None, init=None) -> TrainResult:
    """Optimize scene and medium on the dataset's training views.

    ``init`` optionally supplies a starting ``(scene, medium)`` pair instead of the point cloud.
    """
    config = config or TrainConfig()
    train_views = dataset.split("train")
    if not train_views:
        raise EmptyDataset("dataset has no training views")
    test_views = dataset.split("test")
    scene, medium = init if init is not None else initial_state(dataset, config)
    scene, medium = scene.copy(), medium.copy()
    n_bands = (config.sh_degree + 1) ** 2
    scene.color_sh[:, n_bands:, :] = 0.0
    rng = np.random.default_rng(config.seed)
    opts = RenderOptions(workers=config.workers)
    bases = [ray_basis(v.camera) for v in train_views]
    spatial = config.spatial_lr_scale if config.spatial_lr_scale is not None else 0.5 * scene.bounds.extent
    extent = 0.5 * scene.bounds.extent
    adam = AdamState()
    stats = DensifyStats.zeros(len(scene))
    densify_until = int(config.densify_until_frac * config.steps)
    reset_logit = float(logit(0.01))
    history, pdgc_report, pdgc_added = [], [], []
    order = []
    for step in range(1, config.steps + 1):
        if not order:
            order = list(rng.permutation(len(train_views)))
        vi = order.pop()
        view = train_views[vi]
        out, ctx = render_with_context(scene, medium, view.camera, opts, bases[vi])
        res = total_loss(out, view.image, view.pseudo_depth, config.loss,
                         config.multiscale_ssim, config.depth_rank_mode)
        if not np.isfinite(res.total):
            raise NonFiniteLoss(step, f"view {view.id}")
        grads = backward_from_context(scene, medium, ctx, Upstream(color=res.grad_color, depth=res.grad_depth), opts)
        if step <= densify_until:
            stats.add(grads.abs_grad2d, grads.visible)
        params = scene_params(scene, medium)
        g = {f"scene/{k}": v for k, v in grads.scene.items()}
        g["scene/color_sh"][:, n_bands:, :] = 0.0
        g.update({f"medium/{k}": v for k, v in grads.medium.items()})
        adam_step(params, g, adam, _lrs(config, step, spatial))
        rec = {"step": step, "view": view.id, "loss": res.total, "l1": res.l1, "ssim": res.ssim,
               "depth": res.depth, "psnr": psnr(out.color, view.image), "primitives": len(scene)}

        changed = False
        if config.pdgc_step is not None and step == config.pdgc_step:
            n0 = len(scene)
            scene, rep = run_pdgc(scene, medium, train_views, config, opts, bases, pdgc_added)
            pdgc_report.extend(rep)
            source = np.concatenate([np.arange(n0), np.full(len(scene) - n0, -1)])
            changed = True
            rec["pdgc_inserted"] = len(scene) - n0
        if config.densify_from <= step <= densify_until and step % config.densify_interval == 0 and not changed:
            n0 = len(scene)
            scene, source = densify_and_prune(scene, stats, config, rng, extent)
            changed = True
            rec["densified"] = len(scene) - n0
        if step % config.opacity_reset_interval == 0 and step < config.steps:
            scene.opacity_logits = np.minimum(scene.opacity_logits, reset_logit)
            for store in (adam.m, adam.v):
                store.pop("scene/opacity_logits", None)
        if changed:
            for k in Scene.PARAM_NAMES:
                adam.remap(f"scene/{k}", source)
            if len(stats.count) != len(scene):
                old = stats
                stats = DensifyStats.zeros(len(scene))
                ok = source >= 0
                stats.grad_accum[ok] = old.grad_accum[source[ok]]
                stats.count[ok] = old.count[source[ok]]
        if config.eval_interval and (step % config.eval_interval == 0 or step == config.steps) and test_views:
            rec["test_psnr"] = evaluate_views(scene, medium, test_views, opts)
        history.append(rec)
        if callback is not None:
            callback(rec)
    ck = Checkpoint(config.steps, scene, medium, config.to_dict(), adam.as_dict() if adam.step else None)
    return TrainResult(ck, history, pdgc_report, pdgc_added)


def format_log(history) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in history)
