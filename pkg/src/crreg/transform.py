"""Warping, parametric fields and the diffusion regularizer.

The moving image is sampled at ``p + u(p)`` with trilinear interpolation.
Sample positions are clamped to the image box; the spatial gradient used
for backpropagation is zero along any axis where clamping was active. At
exact lattice points the gradient is taken from the cell on the left.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .grid import field_array, image_array


@dataclass(frozen=True)
class WarpEval:
    warped: np.ndarray
    sampling_gradient: np.ndarray  # (nx, ny, nz, 3) d(moving)/dq at q = p + u(p)


@dataclass(frozen=True)
class AffineParams:
    """Translation in voxels and rotation in degrees about the volume center.

    Rotations are applied about z first, then y, then x.
    """

    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float] = (0.0, 0.0, 0.0)


def sample_trilinear(img: np.ndarray, coords: np.ndarray):
    """Trilinear samples of ``img`` at ``coords`` (shape ``(..., 3)``).

    Returns ``(values, gradient)`` with ``gradient`` of shape ``(..., 3)``.
    """
    img = np.asarray(img, dtype=np.float64)
    shape = img.shape
    lead = coords.shape[:-1]
    flat = img.reshape(-1)
    strides = (shape[1] * shape[2], shape[2], 1)

    base = np.zeros(lead, dtype=np.intp)
    frac, live = [], []
    for a in range(3):
        q = coords[..., a]
        n = shape[a]
        live.append((q >= 0) & (q <= n - 1))
        q = np.clip(q, 0, n - 1)
        i0 = np.clip(np.ceil(q) - 1, 0, n - 2).astype(np.intp)
        frac.append(q - i0)
        base += i0 * strides[a]

    tx, ty, tz = frac
    corner = {}
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner[dx, dy, dz] = flat[base + dx * strides[0] + dy * strides[1] + dz * strides[2]]

    def lerp(lo, hi, t):
        return lo * (1 - t) + hi * t

    # collapse z, then y, then x; keep partials for the gradient
    c00 = lerp(corner[0, 0, 0], corner[0, 0, 1], tz)
    c01 = lerp(corner[0, 1, 0], corner[0, 1, 1], tz)
    c10 = lerp(corner[1, 0, 0], corner[1, 0, 1], tz)
    c11 = lerp(corner[1, 1, 0], corner[1, 1, 1], tz)
    c0 = lerp(c00, c01, ty)
    c1 = lerp(c10, c11, ty)
    values = lerp(c0, c1, tx)

    gx = c1 - c0
    gy = lerp(c01 - c00, c11 - c10, tx)
    dz00 = corner[0, 0, 1] - corner[0, 0, 0]
    dz01 = corner[0, 1, 1] - corner[0, 1, 0]
    dz10 = corner[1, 0, 1] - corner[1, 0, 0]
    dz11 = corner[1, 1, 1] - corner[1, 1, 0]
    gz = lerp(lerp(dz00, dz01, ty), lerp(dz10, dz11, ty), tx)
    grad = np.stack([gx * live[0], gy * live[1], gz * live[2]], axis=-1)
    return values, grad


def identity_grid(dims) -> np.ndarray:
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"), axis=-1)


def warp(moving, field) -> WarpEval:
    """Sample ``moving`` at ``p + u(p)`` for every voxel ``p`` of the field grid."""
    img = image_array(moving)
    u = field_array(field)
    values, grad = sample_trilinear(img, identity_grid(u.shape[:3]) + u)
    return WarpEval(values, grad)


def chain_to_field(grad_wrt_warped, we: WarpEval) -> np.ndarray:
    """Backpropagate a per-voxel intensity gradient to the displacements."""
    g = np.asarray(grad_wrt_warped, dtype=np.float64)
    if g.shape != we.warped.shape:
        raise ValueError(f"gradient dims {g.shape} do not match warped image {we.warped.shape}")
    return g[..., None] * we.sampling_gradient


def rotation_matrix(rotation_deg) -> np.ndarray:
    rx, ry, rz = np.deg2rad(rotation_deg)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


def affine_field(params: AffineParams, dims) -> np.ndarray:
    """Displacement of the rigid map ``p -> R (p - c) + c + t``."""
    dims = tuple(int(n) for n in dims)
    p = identity_grid(dims)
    center = (np.asarray(dims, dtype=np.float64) - 1) / 2
    R = rotation_matrix(params.rotation)
    if np.array_equal(R, np.eye(3)):
        return np.broadcast_to(np.asarray(params.translation, dtype=np.float64), p.shape).copy()
    mapped = (p - center) @ R.T + center + np.asarray(params.translation, dtype=np.float64)
    return mapped - p


def forward_diff(u: np.ndarray, axis: int) -> np.ndarray:
    """u(p + e_axis) - u(p), zero on the far face."""
    d = np.zeros_like(u)
    lo = [slice(None)] * u.ndim
    hi = [slice(None)] * u.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    d[tuple(lo)] = u[tuple(hi)] - u[tuple(lo)]
    return d


def diffusion_reg(field):
    """Mean over voxels of the squared forward-difference gradient of ``u``.

    Returns ``(value, grad)`` where ``grad`` is the exact derivative of the
    discrete energy with respect to every displacement component.
    """
    u = field_array(field)
    n_vox = np.prod(u.shape[:3])
    value = 0.0
    grad = np.zeros_like(u)
    for axis in range(3):
        d = forward_diff(u, axis)
        value += float(np.sum(d * d))
        # adjoint of the forward difference: -d(p) + d(p - e_axis)
        grad -= d
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        grad[tuple(hi)] += d[tuple(lo)]
    return float(value / n_vox), grad * (2.0 / n_vox)
