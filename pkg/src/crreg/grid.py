"""Volumetric containers.

Arrays are stored as numpy arrays indexed ``[i, j, k]`` (x, y, z). The flat
on-disk order is x-fastest, so voxel ``(i, j, k)`` lives at flat index
``i + nx * (j + ny * k)``; :attr:`Volume.flat` and :meth:`Volume.from_flat`
convert between the two. Displacements are in voxel units.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

Dims = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


def _check_dims(shape) -> Dims:
    if len(shape) != 3:
        raise ValueError(f"expected a 3-D grid, got shape {tuple(shape)}")
    if min(shape) < 2:
        raise ValueError(f"every dimension must be >= 2, got {tuple(shape)}")
    return tuple(int(n) for n in shape)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Volume:
    """Scalar 3-D image with float64 intensities."""

    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        _check_dims(data.shape)
        if not np.all(np.isfinite(data)):
            raise ValueError("volume intensities must be finite")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> Dims:
        return self.data.shape

    @property
    def flat(self) -> np.ndarray:
        """Intensities in x-fastest order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_flat(cls, dims, values, spacing: Spacing = (1.0, 1.0, 1.0)) -> "Volume":
        dims = _check_dims(dims)
        values = np.asarray(values, dtype=np.float64)
        if values.size != np.prod(dims):
            raise ValueError(f"{values.size} values do not fill dims {dims}")
        return cls(values.reshape(dims, order="F"), spacing)


@dataclass(frozen=True)
class DisplacementField:
    """Per-voxel displacement ``u`` so that ``phi(p) = p + u(p)``.

    ``vectors`` has shape ``(nx, ny, nz, 3)``; component ``c`` displaces
    along array axis ``c``.
    """

    vectors: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 4 or vectors.shape[-1] != 3:
            raise ValueError(f"expected shape (nx, ny, nz, 3), got {vectors.shape}")
        _check_dims(vectors.shape[:3])
        if not np.all(np.isfinite(vectors)):
            raise ValueError("displacements must be finite")
        object.__setattr__(self, "vectors", _frozen(vectors))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> Dims:
        return self.vectors.shape[:3]

    @classmethod
    def zeros(cls, dims, spacing: Spacing = (1.0, 1.0, 1.0)) -> "DisplacementField":
        return cls(np.zeros(tuple(dims) + (3,)), spacing)


@dataclass(frozen=True)
class LabelVolume:
    """Integer segmentation; label 0 is background."""

    labels: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = np.array(labels, dtype=np.int64)
        _check_dims(labels.shape)
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> Dims:
        return self.labels.shape


def image_array(img) -> np.ndarray:
    """Float64 view of a :class:`Volume` or array-like."""
    if isinstance(img, Volume):
        return img.data
    return np.asarray(img, dtype=np.float64)


def field_array(u) -> np.ndarray:
    if isinstance(u, DisplacementField):
        return u.vectors
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 4 or u.shape[-1] != 3:
        raise ValueError(f"expected shape (nx, ny, nz, 3), got {u.shape}")
    return u


def label_array(lab) -> np.ndarray:
    if isinstance(lab, LabelVolume):
        return lab.labels
    return np.asarray(lab)


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters for :func:`crreg.phantom.make_phantom`.

    ``remap`` selects the intensity mapping applied to produce the second
    modality: ``"quadratic"`` (x**2), ``"inverted"`` (1 - x) or ``"sinus"``
    (sin(pi x), non-monotone on [0, 1]).
    """

    dims: Dims = (48, 48, 48)
    seed: int = 0
    deformation_amplitude: float = 3.0
    deformation_smoothness: float = 6.0
    remap: str = "quadratic"
    num_blobs: int = field(default=0)  # 0 picks a count from the volume size

    def __post_init__(self):
        object.__setattr__(self, "dims", _check_dims(self.dims))
        if not self.deformation_amplitude >= 0:
            raise ValueError("deformation_amplitude must be >= 0")
        if not self.deformation_smoothness > 0:
            raise ValueError("deformation_smoothness must be > 0")
        if self.num_blobs < 0:
            raise ValueError("num_blobs must be >= 0")
