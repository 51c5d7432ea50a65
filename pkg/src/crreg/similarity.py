"""Differentiable correlation ratio and Parzen-window mutual information.

Both measures return a :class:`SimilarityEval` holding the value and its
analytic gradient with respect to the intensities of each input image.

Correlation ratio of ``Y`` given ``X`` with soft bins built on ``X``::

    v_ik   = w_ik / sum_k w_ik           (kernel weights, unit total per voxel)
    W_k    = sum_i v_ik                  (bin mass)
    ybar_k = sum_i v_ik y_i / W_k        (soft conditional mean)
    n_k    = W_k / sum_k W_k
    eta    = sum_k n_k (ybar_k - ybar)**2 / Var(Y)

Normalizing per voxel keeps eta in [0, 1] for any input.

The symmetric loss used for registration is
``-(eta(F | W) + eta(W | F)) / 2`` (lower is better).
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .grid import image_array
from .parzen import EPS, ParzenConfig, _table_blocks

DEGENERATE_VAR = 1e-12
MI_FLOOR = 1e-12


@dataclass(frozen=True)
class SimilarityEval:
    value: float
    grad_wrt_first: np.ndarray
    grad_wrt_second: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class CondStats:
    """Soft-binned statistics of ``Y`` conditioned on ``X``."""

    bin_means: np.ndarray        # ybar_k
    bin_mass: np.ndarray         # sum_i v_ik
    bin_proportions: np.ndarray  # n_k
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    var_cond_mean: float         # Var(E(Y|X))


def _pair(x_img, y_img):
    x = image_array(x_img)
    y = image_array(y_img)
    if x.shape != y.shape:
        raise ValueError(f"image dims differ: {x.shape} vs {y.shape}")
    return x, y


class _SoftBins:
    """Intermediates of eta(Y | X) shared by the value and the gradient."""

    def __init__(self, x, y, cfg):
        centers = cfg.bin_centers
        basis = np.stack([np.ones_like(centers), centers], axis=1)
        n_vox = x.size
        self.row_sums = np.empty(n_vox)
        self.row_centers = np.empty(n_vox)  # sum_k w_ik c_k
        acc = np.zeros((2, cfg.num_bins))

        def visit(rows, w):
            rc = w @ basis
            self.row_sums[rows] = rc[:, 0]
            self.row_centers[rows] = rc[:, 1]
            inv = 1.0 / (rc[:, 0] + EPS)
            acc[...] += np.stack([inv, y[rows] * inv]) @ w

        self.blocks = _table_blocks(x, cfg, visit, slot=0)
        mass, weighted_y = acc
        self.mass = mass
        self.total = mass.sum()
        self.bin_means = weighted_y / (mass + EPS)
        self.n = mass / self.total
        self.ybar = y.mean()
        self.d = self.bin_means - self.ybar
        self.var_cond = float(self.n @ (self.d * self.d))
        self.var_y = float(np.mean((y - self.ybar) ** 2))


def cond_stats(x_img, y_img, cfg: ParzenConfig) -> CondStats:
    """Soft-binned conditional statistics of ``y_img`` given ``x_img``.

    Each voxel's kernel weights are normalized to unit total before
    binning, so the bins form a partition of the voxels and
    ``var_cond_mean <= var_y`` holds.
    """
    x, y = _pair(x_img, y_img)
    x, y = x.reshape(-1), y.reshape(-1)
    sb = _SoftBins(x, y, cfg)
    xbar = x.mean()
    return CondStats(
        bin_means=sb.bin_means,
        bin_mass=sb.mass,
        bin_proportions=sb.n,
        mean_x=float(xbar),
        mean_y=float(sb.ybar),
        var_x=float(np.mean((x - xbar) ** 2)),
        var_y=sb.var_y,
        var_cond_mean=sb.var_cond,
    )


def correlation_ratio(x_img, y_img, cfg: ParzenConfig) -> SimilarityEval:
    """eta(Y | X) with bins placed on ``x_img`` using ``cfg``.

    A constant ``y_img`` yields value 0, zero gradients and
    ``degenerate=True``.
    """
    x, y = _pair(x_img, y_img)
    shape = x.shape
    x, y = x.reshape(-1), y.reshape(-1)
    N = x.size
    sb = _SoftBins(x, y, cfg)
    if sb.var_y <= DEGENERATE_VAR:
        zero = np.zeros(shape)
        return SimilarityEval(0.0, zero, zero.copy(), degenerate=True)

    denom = sb.var_y + EPS
    eta = sb.var_cond / denom

    # d(var_cond)/d(v_ik) = a_k + b_k y_i for normalized weights v_ik
    b = 2.0 * sb.n * sb.d / (sb.mass + EPS)
    a = (sb.d * sb.d - sb.var_cond) / sb.total - b * sb.bin_means
    c = cfg.bin_centers
    coef = np.stack([a, c * a, b, c * b], axis=1)
    proj = np.empty((N, 4))
    for rows, w in sb.blocks:
        np.dot(w, coef, out=proj[rows])
    wa, wca, wb, wcb = proj.T
    inv_r = 1.0 / (sb.row_sums + EPS)

    # chain through v_ik = w_ik / r_i with dw_ik/dx_i = (c_k - x_i) w_ik / h**2
    xc = cfg.clamp(x)
    inside = (x >= cfg.intensity_min) & (x <= cfg.intensity_max)
    g_dw = (wca - xc * wa) + y * (wcb - xc * wb)
    dr = sb.row_centers - xc * sb.row_sums
    g_v = (wa + y * wb) * inv_r
    dvar_dx = (g_dw - dr * g_v) * inv_r * (inside / cfg.bandwidth**2)
    grad_x = dvar_dx / denom

    dvar_dy = wb * inv_r - (2.0 / N) * (sb.n @ sb.d)
    grad_y = (dvar_dy - eta * (2.0 / N) * (y - sb.ybar)) / denom
    return SimilarityEval(float(eta), grad_x.reshape(shape), grad_y.reshape(shape))


def cr_loss(fixed, warped, cfg_f: ParzenConfig, cfg_w: ParzenConfig) -> SimilarityEval:
    """Symmetric correlation-ratio loss, in [-1, 0]; lower is better.

    ``cfg_f`` bins the fixed image and ``cfg_w`` the warped one.
    """
    f_given_w = correlation_ratio(warped, fixed, cfg_w)
    w_given_f = correlation_ratio(fixed, warped, cfg_f)
    value = -0.5 * (f_given_w.value + w_given_f.value)
    grad_f = -0.5 * (f_given_w.grad_wrt_second + w_given_f.grad_wrt_first)
    grad_w = -0.5 * (f_given_w.grad_wrt_first + w_given_f.grad_wrt_second)
    return SimilarityEval(
        value, grad_f, grad_w, degenerate=f_given_w.degenerate or w_given_f.degenerate
    )


def mutual_information(x_img, y_img, cfg_x: ParzenConfig, cfg_y: ParzenConfig) -> SimilarityEval:
    """Parzen-window mutual information in nats (higher means more dependent).

    The joint distribution is the normalized product of the two weight
    tables; cells with probability below 1e-12 are ignored.
    """
    x, y = _pair(x_img, y_img)
    shape = x.shape
    x, y = x.reshape(-1), y.reshape(-1)
    bx = _table_blocks(x, cfg_x, slot=0)
    by = _table_blocks(y, cfg_y, slot=1)
    joint = np.full((cfg_x.num_bins, cfg_y.num_bins), EPS)
    for (_, wx), (_, wy) in zip(bx, by):
        joint += wx.T @ wy
    Z = joint.sum()
    p = joint / Z
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    keep = p >= MI_FLOOR
    ratio = np.ones_like(p)
    ratio[keep] = p[keep] / np.outer(px, py)[keep]
    logr = np.where(keep, np.log(ratio), 0.0)
    mi = float(np.sum(p * logr))

    # gradient of the masked sum w.r.t. p, then through normalization
    pk = np.where(keep, p, 0.0)
    gp = np.where(keep, logr + 1.0, 0.0)
    gp -= (pk.sum(axis=1) / px)[:, None]
    gp -= (pk.sum(axis=0) / py)[None, :]
    gj = (gp - np.sum(gp * p)) / Z

    grad_x = np.empty(x.size)
    grad_y = np.empty(y.size)
    for (rows, wx), (_, wy) in zip(bx, by):
        grad_x[rows] = _through_weights(x[rows], wx, wy @ gj.T, cfg_x)
        grad_y[rows] = _through_weights(y[rows], wy, wx @ gj, cfg_y)
    return SimilarityEval(mi, grad_x.reshape(shape), grad_y.reshape(shape))


def mi_loss(fixed, warped, cfg_f: ParzenConfig, cfg_w: ParzenConfig) -> SimilarityEval:
    """Negative mutual information, sharing the lower-is-better convention."""
    e = mutual_information(fixed, warped, cfg_f, cfg_w)
    return SimilarityEval(-e.value, -e.grad_wrt_first, -e.grad_wrt_second, e.degenerate)


def _through_weights(x, w, g, cfg):
    """sum_k g_ik dw_ik/dx_i, consuming ``g`` in place."""
    g *= w
    c = cfg.bin_centers
    gc, gs = (g @ np.stack([c, np.ones_like(c)], axis=1)).T
    inside = (x >= cfg.intensity_min) & (x <= cfg.intensity_max)
    return (gc - cfg.clamp(x) * gs) * (inside / cfg.bandwidth**2)


MEASURES = {"cr": cr_loss, "mi": mi_loss}

Measure = Union[str, Callable[..., SimilarityEval]]


def eval_timed(measure: Measure, x_img, y_img, cfg_x, cfg_y, repeats: int = 100):
    """Mean wall-clock seconds of ``measure`` over ``repeats`` calls.

    One untimed warm-up call precedes the timed ones. Returns the result of
    the last call together with the mean time.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    fn = MEASURES[measure] if isinstance(measure, str) else measure
    result = fn(x_img, y_img, cfg_x, cfg_y)
    elapsed = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(x_img, y_img, cfg_x, cfg_y)
        elapsed += time.perf_counter() - t0
    return result, elapsed / repeats
