"""Plenoptic medium: SH coefficient sets on the 8 corners of one normalized cell.

Trilinear blending of the corner sets at the observer position, followed by SH
evaluation along the ray direction, gives the medium color, attenuation and backscatter
for that ray.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRangePosition, UnknownMode
from .scene import Bounds, Camera, sigmoid
from .sh import C0, N_COEFFS, sh_basis

FIELDS = ("c_med", "sigma_att", "sigma_bs")
CORNERS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))
SIGMA_FLOOR = 1e-12
MODES = ("dir_and_pos", "pos_only", "dir_only", "no_dir_no_pos")


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _activate(name, raw):
    return sigmoid(raw) if name == "c_med" else softplus(raw)


def _activation_grad(name, raw):
    s = sigmoid(raw)
    return s * (1.0 - s) if name == "c_med" else s


@dataclass
class MediumSample:
    c_med: np.ndarray
    sigma_att: np.ndarray
    sigma_bs: np.ndarray


@dataclass(eq=False)
class MediumGrid:
    """Corner coefficients, each field shaped (8, 16, 3) with corners in ``CORNERS`` order."""

    c_med: np.ndarray
    sigma_att: np.ndarray
    sigma_bs: np.ndarray
    bounds: Bounds
    mode: str = "dir_and_pos"

    def __post_init__(self):
        for name in FIELDS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (8, N_COEFFS, 3):
                raise ValueError(f"{name} must be (8, {N_COEFFS}, 3), got {arr.shape}")
            setattr(self, name, arr)
        self.mode = medium_variant(self.mode)

    def params(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}

    def copy(self) -> "MediumGrid":
        return MediumGrid(*(getattr(self, n).copy() for n in FIELDS),
                          bounds=Bounds(self.bounds.lo.copy(), self.bounds.hi.copy()),
                          mode=self.mode)

    @classmethod
    def homogeneous(cls, bounds: Bounds, c_med=0.3, sigma_att=0.05, sigma_bs=0.05,
                    mode: str = "dir_and_pos") -> "MediumGrid":
        """Grid whose DC band reproduces the given per-channel values everywhere."""
        coeffs = {}
        for name, target in zip(FIELDS, (c_med, sigma_att, sigma_bs)):
            target = np.broadcast_to(np.asarray(target, dtype=np.float64), (3,))
            # sigma floor keeps the raw coefficient finite (softplus_inv(0) = -inf)
            inv = (np.log(target) - np.log1p(-target) if name == "c_med"
                   else softplus_inv(np.maximum(target, SIGMA_FLOOR)))
            arr = np.zeros((8, N_COEFFS, 3))
            arr[:, 0, :] = inv / C0
            coeffs[name] = arr
        return cls(coeffs["c_med"], coeffs["sigma_att"], coeffs["sigma_bs"], bounds, mode)


def medium_variant(mode) -> str:
    """Validate an ablation mode name (from a string or an object with ``medium_mode``)."""
    mode = getattr(mode, "medium_mode", mode)
    if mode not in MODES:
        raise UnknownMode(f"unknown medium mode {mode!r}; expected one of {MODES}")
    return mode


def normalize_position(bounds: Bounds, world_pos) -> np.ndarray:
    p = np.asarray(world_pos, dtype=np.float64)
    n = 2.0 * (p - bounds.lo) / (bounds.hi - bounds.lo) - 1.0
    return np.clip(n, -1.0, 1.0)


def trilinear_weights(npos) -> np.ndarray:
    """Corner weights (..., 8) = (1/8)(1+ux)(1+vy)(1+wz)."""
    npos = np.asarray(npos, dtype=np.float64)
    return np.prod(1.0 + npos[..., None, :] * CORNERS, axis=-1) / 8.0


def interpolate_coeffs(grid: MediumGrid, npos, field_name: str) -> np.ndarray:
    npos = np.asarray(npos, dtype=np.float64)
    if np.any(np.abs(npos) > 1.0 + 1e-9):
        raise OutOfRangePosition(f"normalized position {npos} outside [-1, 1]^3")
    if field_name not in FIELDS:
        raise KeyError(field_name)
    return np.tensordot(trilinear_weights(npos), getattr(grid, field_name), axes=(-1, 0))


def _mode_weights(grid: MediumGrid, npos):
    if grid.mode in ("dir_and_pos", "pos_only"):
        w = trilinear_weights(npos)
    else:
        w = np.zeros(8)
        w[0] = 1.0
    band = np.ones(N_COEFFS)
    if grid.mode in ("pos_only", "no_dir_no_pos"):
        band[1:] = 0.0
    return w, band


@dataclass
class MediumContext:
    """What ``medium_backward`` needs from a forward evaluation."""

    weights: np.ndarray           # (8,)
    basis: np.ndarray             # (P, 16), band mask applied
    raw: dict = field(default_factory=dict)   # field -> (P, 3) pre-activation


def evaluate_rays(grid: MediumGrid, world_pos, directions, basis=None):
    """Medium parameters for rays sharing one origin; returns ``(MediumSample, MediumContext)``.

    ``basis`` may carry precomputed SH basis values for ``directions``.
    """
    npos = normalize_position(grid.bounds, world_pos)
    w, band = _mode_weights(grid, npos)
    if basis is None:
        basis = sh_basis(np.asarray(directions).reshape(-1, 3))
    basis = basis * band
    ctx = MediumContext(w, basis)
    out = {}
    for name in FIELDS:
        coeffs = np.tensordot(w, getattr(grid, name), axes=(0, 0))
        raw = basis @ coeffs
        ctx.raw[name] = raw
        out[name] = _activate(name, raw)
    return MediumSample(out["c_med"], out["sigma_att"], out["sigma_bs"]), ctx


def evaluate_camera(grid: MediumGrid, camera: Camera, basis=None):
    return evaluate_rays(grid, camera.center, camera.ray_directions(), basis)


def medium_eval(grid: MediumGrid, world_pos, direction) -> MediumSample:
    d = np.asarray(direction, dtype=np.float64)
    sample, _ = evaluate_rays(grid, world_pos, d.reshape(-1, 3), sh_basis(d.reshape(-1, 3)))
    shape = d.shape[:-1] + (3,)
    return MediumSample(*(getattr(sample, n).reshape(shape) for n in FIELDS))


def medium_backward(ctx: MediumContext, grads: dict) -> dict:
    """Chain per-ray gradients {field: (P, 3)} to corner coefficients {field: (8, 16, 3)}."""
    out = {}
    for name in FIELDS:
        g = grads.get(name)
        if g is None:
            out[name] = np.zeros((8, N_COEFFS, 3))
            continue
        g_raw = g * _activation_grad(name, ctx.raw[name])
        g_coeffs = ctx.basis.T @ g_raw
        out[name] = ctx.weights[:, None, None] * g_coeffs[None]
    return out


def homogeneous_estimate(grid: MediumGrid, positions) -> MediumSample:
    """DC-band medium values averaged over observer ``positions``."""
    vals = {n: [] for n in FIELDS}
    for p in np.asarray(positions, dtype=np.float64).reshape(-1, 3):
        w, _ = _mode_weights(grid, normalize_position(grid.bounds, p))
        for name in FIELDS:
            dc = w @ getattr(grid, name)[:, 0, :]
            vals[name].append(_activate(name, C0 * dc))
    return MediumSample(*(np.mean(vals[n], axis=0) for n in FIELDS))
