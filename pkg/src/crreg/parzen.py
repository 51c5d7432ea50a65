"""Gaussian Parzen-window soft binning of intensities.

Every voxel contributes to every bin with the unnormalized Gaussian weight

    w_ik = exp(-(x_i - c_k)**2 / (2 h**2)) / (h * sqrt(2 pi))

where ``c_k`` are evenly spaced bin centers and ``h`` is the kernel standard
deviation. Intensities are clamped into the configured range first.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from .grid import image_array

EPS = 1e-10


@dataclass(frozen=True)
class ParzenConfig:
    num_bins: int
    bandwidth: float
    intensity_min: float
    intensity_max: float

    def __post_init__(self):
        if int(self.num_bins) != self.num_bins or self.num_bins < 2:
            raise ValueError(f"num_bins must be an integer >= 2, got {self.num_bins}")
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if not self.intensity_max > self.intensity_min:
            raise ValueError(
                f"degenerate intensity range [{self.intensity_min}, {self.intensity_max}]"
            )
        object.__setattr__(self, "num_bins", int(self.num_bins))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        object.__setattr__(self, "intensity_min", float(self.intensity_min))
        object.__setattr__(self, "intensity_max", float(self.intensity_max))

    @property
    def bin_width(self) -> float:
        return (self.intensity_max - self.intensity_min) / self.num_bins

    @property
    def bin_centers(self) -> np.ndarray:
        k = np.arange(self.num_bins, dtype=np.float64)
        return self.intensity_min + (k + 0.5) * self.bin_width

    @property
    def peak(self) -> float:
        """Kernel value at its center, ``1 / (h sqrt(2 pi))``."""
        return 1.0 / (self.bandwidth * math.sqrt(2.0 * math.pi))

    def clamp(self, x):
        return np.clip(x, self.intensity_min, self.intensity_max)


def make_config(intensity_min, intensity_max, num_bins=32, bandwidth_scale=1.0) -> ParzenConfig:
    """Config over an explicit range with ``h = bandwidth_scale * bin width``."""
    if not intensity_max > intensity_min:
        raise ValueError(f"degenerate intensity range [{intensity_min}, {intensity_max}]")
    h = bandwidth_scale * (intensity_max - intensity_min) / num_bins
    return ParzenConfig(num_bins, h, intensity_min, intensity_max)


def default_config(v, num_bins=32, bandwidth_scale=1.0) -> ParzenConfig:
    """Config spanning the intensity range of ``v``.

    Raises ``ValueError`` for a constant image.
    """
    x = image_array(v)
    if x.size == 0:
        raise ValueError("empty image")
    return make_config(float(x.min()), float(x.max()), num_bins, bandwidth_scale)


def weights(x, cfg: ParzenConfig) -> np.ndarray:
    """Kernel weights of intensity ``x`` for every bin.

    Accepts a scalar or an array; the bin axis is appended last.
    """
    x = np.asarray(x, dtype=np.float64)
    return _table(x.reshape(-1), cfg).reshape(x.shape + (cfg.num_bins,))


def weights_derivative(x, cfg: ParzenConfig) -> np.ndarray:
    """d(weights)/dx, zero where ``x`` lies outside the clamping range."""
    x = np.asarray(x, dtype=np.float64)
    xc = cfg.clamp(x)
    w = weights(xc, cfg)
    inside = (x >= cfg.intensity_min) & (x <= cfg.intensity_max)
    d = (cfg.bin_centers - xc[..., None]) / cfg.bandwidth**2 * w
    return np.where(inside[..., None], d, 0.0)


@dataclass(frozen=True)
class WeightTable:
    """Materialized ``(N, B)`` weights of a flattened image with cached sums."""

    values: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray


_CHUNK = 2048
_workspace = threading.local()


def _buffer(slot: int, rows: int, cols: int) -> np.ndarray:
    """Per-thread scratch table reused across calls.

    Reusing the memory avoids faulting in tens of megabytes of fresh pages
    on every evaluation of a large image.
    """
    bufs = _workspace.__dict__.setdefault("bufs", {})
    buf = bufs.get(slot)
    if buf is None or buf.shape[0] < rows or buf.shape[1] != cols:
        buf = bufs[slot] = np.empty((rows, cols))
    return buf[:rows]


def _table_blocks(x: np.ndarray, cfg: ParzenConfig, visit=None, slot=None) -> list:
    """Weights of flat ``x`` as a list of ``(rows, block)`` pairs.

    Blocks hold ``_CHUNK`` rows each and ``visit(rows, block)`` runs on
    each block while it is still in cache. With ``slot`` set, the blocks
    are views into a per-thread scratch buffer that the next call with the
    same slot overwrites.
    """
    x = cfg.clamp(x)
    centers = cfg.bin_centers
    scale = 1.0 / (cfg.bandwidth * math.sqrt(2.0))
    log_peak = math.log(cfg.peak)
    n_bins = cfg.num_bins
    table = _buffer(slot, x.size, n_bins) if slot is not None else None
    blocks = []
    for start in range(0, x.size, _CHUNK):
        rows = slice(start, min(start + _CHUNK, x.size))
        if table is None:
            z = np.subtract.outer(x[rows], centers)
        else:
            z = np.subtract(x[rows, None], centers, out=table[rows])
        z *= scale
        np.square(z, out=z)
        np.subtract(log_peak, z, out=z)
        np.exp(z, out=z)
        if visit is not None:
            visit(rows, z)
        blocks.append((rows, z))
    return blocks


def _table(x: np.ndarray, cfg: ParzenConfig) -> np.ndarray:
    return np.concatenate([b for _, b in _table_blocks(x, cfg)])


def weight_table(v, cfg: ParzenConfig) -> WeightTable:
    """Weights for every voxel of ``v`` (flattened in x-fastest order)."""
    x = image_array(v).ravel(order="F")
    w = _table(x, cfg)
    return WeightTable(w, w.sum(axis=1), w.sum(axis=0))


def voxel_normalized(t: WeightTable) -> np.ndarray:
    """Weights divided by each voxel's total, ``w_ik / (sum_k w_ik + EPS)``."""
    return t.values / (t.row_sums + EPS)[:, None]


def normalized_bin_weights(t: WeightTable) -> np.ndarray:
    """Share of the soft-binned voxel mass falling in each bin (sums to 1).

    Each voxel first has its weights normalized to unit total, so every
    voxel counts once regardless of where its intensity falls between bin
    centers.
    """
    mass = voxel_normalized(t).sum(axis=0)
    total = mass.sum()
    if not total > 0:
        raise ValueError("weight table carries no mass")
    return mass / total
