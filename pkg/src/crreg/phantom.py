"""Synthetic multi-modal image pairs with known deformations.

The fixed image is a tissue map: a sum of random Gaussian blobs cut into
equal-volume classes, each class given its own intensity in [0, 1]. The
moving image is the fixed image pulled through the inverse of a smooth
random deformation and passed through a pointwise intensity mapping, so
that ``moving(p + truth(p)) == remap(fixed(p))`` up to interpolation.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import DisplacementField, LabelVolume, PhantomSpec, Volume
from .metrics import jacobian_det, warp_labels
from .transform import identity_grid, sample_trilinear, warp

REMAPS = {
    "quadratic": lambda x: x * x,
    "inverted": lambda x: 1.0 - x,
    "sinus": lambda x: np.sin(np.pi * x),
}

MIN_JACOBIAN = 0.1
MAX_RESCALES = 10

NUM_CLASSES = 16
BLOB_SIGMA = (2.0, 4.0)  # voxels
VOXELS_PER_BLOB = 184
LABEL_EDGES = (0.25, 0.5, 0.75)

INVERSE_ITERS = 100
INVERSE_TOL = 1e-10


class PhantomError(RuntimeError):
    pass


class Phantom(NamedTuple):
    moving: Volume
    fixed: Volume
    truth: DisplacementField
    labels_moving: LabelVolume
    labels_fixed: LabelVolume


def _blob_sum(rng: np.random.Generator, dims, num_blobs: int) -> np.ndarray:
    dims = np.asarray(dims)
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    out = np.zeros(tuple(dims))
    for _ in range(num_blobs):
        center = rng.uniform(-0.1, 1.1, size=3) * (dims - 1)
        sigma = rng.uniform(*BLOB_SIGMA)
        amp = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        # separable, evaluated inside a 4-sigma window
        lo = np.clip(np.floor(center - 4 * sigma), 0, dims).astype(int)
        hi = np.clip(np.ceil(center + 4 * sigma) + 1, 0, dims).astype(int)
        if np.any(hi <= lo):
            continue
        gx, gy, gz = (np.exp(-((a[l:h] - c) ** 2) / (2 * sigma**2))
                      for a, l, h, c in zip(axes, lo, hi, center))
        out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += amp * gx[:, None, None] * gy[None, :, None] * gz
    return out


def _anatomy(rng: np.random.Generator, dims, num_blobs: int) -> np.ndarray:
    if num_blobs == 0:
        num_blobs = max(8, round(int(np.prod(dims)) / VOXELS_PER_BLOB))
    field = _blob_sum(rng, dims, num_blobs)
    cuts = np.quantile(field, np.linspace(0, 1, NUM_CLASSES + 1)[1:-1])
    levels = np.linspace(0.0, 1.0, NUM_CLASSES)[rng.permutation(NUM_CLASSES)]
    return levels[np.digitize(field, cuts)]


def _random_field(rng: np.random.Generator, dims, amplitude: float, sigma: float) -> np.ndarray:
    noise = rng.standard_normal(tuple(dims) + (3,))
    u = np.stack([gaussian_filter(noise[..., c], sigma, mode="reflect") for c in range(3)], axis=-1)
    peak = np.sqrt((u * u).sum(axis=-1)).max()
    if amplitude == 0 or peak == 0:
        return np.zeros_like(u)
    u *= amplitude / peak
    for _ in range(MAX_RESCALES + 1):
        if jacobian_det(u).min() > MIN_JACOBIAN:
            return u
        u *= 0.8
    raise PhantomError(
        f"could not bring min Jacobian determinant above {MIN_JACOBIAN} "
        f"after {MAX_RESCALES} rescalings"
    )


def invert_field(u: np.ndarray) -> np.ndarray:
    """Displacement ``v`` with ``q + v(q) = p`` whenever ``q = p + u(p)``.

    Solved by the fixed-point iteration ``v(q) = -u(q + v(q))``.
    """
    grid = identity_grid(u.shape[:3])
    v = -u
    for _ in range(INVERSE_ITERS):
        q = grid + v
        nxt = -np.stack([sample_trilinear(u[..., c], q)[0] for c in range(3)], axis=-1)
        change = np.abs(nxt - v).max()
        v = nxt
        if change < INVERSE_TOL:
            break
    return v


def intensity_bands(img: np.ndarray, edges=LABEL_EDGES) -> np.ndarray:
    """Label voxels by fixed intensity band; the darkest band is 0."""
    return np.digitize(img, edges)


def make_phantom(spec: PhantomSpec = PhantomSpec()) -> Phantom:
    """Generate a phantom pair; identical specs give identical arrays."""
    if spec.remap not in REMAPS:
        raise ValueError(f"unknown remap {spec.remap!r}; choose from {sorted(REMAPS)}")
    rng = np.random.default_rng(spec.seed)
    fixed = _anatomy(rng, spec.dims, spec.num_blobs)
    truth = _random_field(rng, spec.dims, spec.deformation_amplitude, spec.deformation_smoothness)
    inverse = invert_field(truth)
    moving = REMAPS[spec.remap](warp(fixed, inverse).warped)
    labels_fixed = intensity_bands(fixed)
    labels_moving = warp_labels(labels_fixed, inverse)
    return Phantom(
        moving=Volume(moving),
        fixed=Volume(fixed),
        truth=DisplacementField(truth),
        labels_moving=LabelVolume(labels_moving),
        labels_fixed=LabelVolume(labels_fixed),
    )
