"""Real spherical harmonics up to degree 3 in the (-y, z, -x) ordering common to splatting code."""

import numpy as np

from .errors import NonUnitDirection

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

DEGREE = 3
N_COEFFS = (DEGREE + 1) ** 2


def _check_unit(d, tol=1e-6):
    n = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(n - 1.0) > tol):
        raise NonUnitDirection(f"direction norm deviates from 1 by {np.max(np.abs(n - 1.0)):.3g}")


def sh_basis(direction, check: bool = True) -> np.ndarray:
    """Basis values (..., 16) for unit directions (..., 3)."""
    d = np.asarray(direction, dtype=np.float64)
    if check:
        _check_unit(d)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (N_COEFFS,))
    out[..., 0] = C0
    out[..., 1] = -C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = -C1 * x
    out[..., 4] = C2[0] * x * y
    out[..., 5] = C2[1] * y * z
    out[..., 6] = C2[2] * (2 * zz - xx - yy)
    out[..., 7] = C2[3] * x * z
    out[..., 8] = C2[4] * (xx - yy)
    out[..., 9] = C3[0] * y * (3 * xx - yy)
    out[..., 10] = C3[1] * x * y * z
    out[..., 11] = C3[2] * y * (4 * zz - xx - yy)
    out[..., 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[..., 13] = C3[4] * x * (4 * zz - xx - yy)
    out[..., 14] = C3[5] * z * (xx - yy)
    out[..., 15] = C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_jacobian(direction) -> np.ndarray:
    """Partial derivatives (..., 16, 3) of each basis polynomial w.r.t. (x, y, z).

    Taken on the polynomials themselves, without the unit-norm constraint; callers chain
    through their own normalization.
    """
    d = np.asarray(direction, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    zero = np.zeros_like(x)
    rows = [
        (zero, zero, zero),
        (zero, -C1 + zero, zero),
        (zero, zero, C1 + zero),
        (-C1 + zero, zero, zero),
        (C2[0] * y, C2[0] * x, zero),
        (zero, C2[1] * z, C2[1] * y),
        (-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z),
        (C2[3] * z, zero, C2[3] * x),
        (2 * C2[4] * x, -2 * C2[4] * y, zero),
        (6 * C3[0] * x * y, C3[0] * (3 * xx - 3 * yy), zero),
        (C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
        (-2 * C3[2] * x * y, C3[2] * (4 * zz - xx - 3 * yy), 8 * C3[2] * y * z),
        (-6 * C3[3] * x * z, -6 * C3[3] * y * z, C3[3] * (6 * zz - 3 * xx - 3 * yy)),
        (C3[4] * (4 * zz - 3 * xx - yy), -2 * C3[4] * x * y, 8 * C3[4] * x * z),
        (2 * C3[5] * x * z, -2 * C3[5] * y * z, C3[5] * (xx - yy)),
        (C3[6] * (3 * xx - 3 * yy), -6 * C3[6] * x * y, zero),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def sh_eval(coeffs, direction, check: bool = True) -> np.ndarray:
    """Per-channel value of SH coefficients (..., 16, C) along ``direction`` (..., 3)."""
    basis = sh_basis(direction, check=check)
    return np.einsum("...k,...kc->...c", basis, np.asarray(coeffs, dtype=np.float64))


def rgb_to_dc(rgb) -> np.ndarray:
    """DC coefficient whose color readout (value + 0.5) reproduces ``rgb``."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0


def gaussian_colors(color_sh: np.ndarray, directions: np.ndarray):
    """Color readout ``max(SH + 0.5, 0)`` per primitive.

    Returns ``(colors, basis, active)`` where ``active`` marks unclamped channels; the
    extra values are what the backward pass needs.
    """
    basis = sh_basis(directions, check=False)
    raw = np.einsum("nk,nkc->nc", basis, color_sh) + 0.5
    active = raw > 0
    return np.where(active, raw, 0.0), basis, active
