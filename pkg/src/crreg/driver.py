"""Registration by direct optimization of a dense displacement field.

The objective is ``similarity(fixed, moving o phi) + lam * diffusion(u)``
with similarity either the symmetric correlation-ratio loss or negative
mutual information. Optimization runs coarse-to-fine with Adam updates.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .grid import DisplacementField, field_array, image_array
from .metrics import MetricsReport, evaluate
from .parzen import default_config
from .similarity import MEASURES
from .transform import AffineParams, affine_field, chain_to_field, diffusion_reg, sample_trilinear, warp

logger = logging.getLogger(__name__)

AXES = ("tx", "ty", "tz", "rx", "ry", "rz")

# Adam's epsilon, applied to per-voxel-scaled gradients
ADAM_EPS = 1e-8
# step acceptance: at most this relative rise above the best value so far
SLACK = 0.05
SLACK_FLOOR = 1e-3
RATE_GROWTH = 1.1
MIN_RATE = 1e-6


class RegistrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegistrationConfig:
    metric: str = "cr"
    lam: float = 4.2
    levels: int = 3
    iters_per_level: int = 200
    step_size: float = 1.0
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    bins: int = 32
    bandwidth_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.metric not in MEASURES:
            raise ValueError(f"metric must be one of {sorted(MEASURES)}, got {self.metric!r}")
        if not self.lam >= 0:
            raise ValueError("lam must be >= 0")
        if self.levels < 1 or self.iters_per_level < 1:
            raise ValueError("levels and iters_per_level must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")


@dataclass(frozen=True)
class RegistrationReport:
    final_field: DisplacementField
    loss_history: np.ndarray  # (iterations, 3): total, similarity, lam * regularizer
    metrics: MetricsReport
    wall_seconds: float
    level_shapes: Tuple[Tuple[int, int, int], ...] = ()

    def to_json(self) -> dict:
        """Deterministic summary (wall time is left out)."""
        hist = self.loss_history
        return {
            "iterations": int(hist.shape[0]),
            "initial_total": float(hist[0, 0]),
            "final_total": float(hist[-1, 0]),
            "final_similarity": float(hist[-1, 1]),
            "final_regularization": float(hist[-1, 2]),
            "level_shapes": [list(s) for s in self.level_shapes],
            "metrics": self.metrics.to_json(),
        }


@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    similarity: float
    total: Optional[float] = None
    regularization: Optional[float] = None
    dice_mean: Optional[float] = None
    pct_neg_jacobian: Optional[float] = None
    pct_ndv: Optional[float] = None
    field_grad_energy: Optional[float] = None
    mean_displacement: Optional[float] = None


LANDSCAPE_COLUMNS = ("parameter", "value", "similarity")
SWEEP_COLUMNS = (
    "parameter", "value", "total", "similarity", "regularization", "dice_mean",
    "pct_neg_jacobian", "pct_ndv", "field_grad_energy", "mean_displacement",
)


def _cell(v):
    if v is None:
        return ""
    # repr round-trips floats exactly
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(rows: Sequence[SweepRow], path, columns=SWEEP_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            d = asdict(row)
            writer.writerow([_cell(d[c]) for c in columns])


def _configs(fixed, moving, cfg: RegistrationConfig):
    return (default_config(fixed, cfg.bins, cfg.bandwidth_scale),
            default_config(moving, cfg.bins, cfg.bandwidth_scale))


def total_loss(fixed, moving, field, cfg: RegistrationConfig, parzen=None):
    """Objective value, its parts, and gradient w.r.t. the displacements.

    Returns ``(value, grad, (similarity, lam * regularizer))``. Parzen
    configs default to the intensity ranges of ``fixed`` and ``moving``.
    """
    f = image_array(fixed)
    u = field_array(field)
    cfg_f, cfg_m = parzen if parzen is not None else _configs(f, moving, cfg)
    we = warp(moving, u)
    sim = MEASURES[cfg.metric](f, we.warped, cfg_f, cfg_m)
    grad = chain_to_field(sim.grad_wrt_second, we)
    reg = 0.0
    if cfg.lam > 0:
        reg_value, reg_grad = diffusion_reg(u)
        reg = cfg.lam * reg_value
        grad += cfg.lam * reg_grad
    return sim.value + reg, grad, (sim.value, reg)


def downsample(img: np.ndarray) -> np.ndarray:
    """2x box average; odd dimensions are edge-padded first."""
    pad = [(0, n % 2) for n in img.shape]
    if any(p for _, p in pad):
        img = np.pad(img, pad, mode="edge")
    nx, ny, nz = (n // 2 for n in img.shape)
    return img.reshape(nx, 2, ny, 2, nz, 2).mean(axis=(1, 3, 5))


def upsample_field(u: np.ndarray, dims) -> np.ndarray:
    """Trilinear 2x upsampling to ``dims`` with displacements doubled."""
    grid = np.meshgrid(*[(np.arange(n) - 0.5) / 2.0 for n in dims], indexing="ij")
    coords = np.stack(grid, axis=-1)
    return np.stack([2.0 * sample_trilinear(u[..., c], coords)[0] for c in range(3)], axis=-1)


def _pyramid(img: np.ndarray, levels: int) -> List[np.ndarray]:
    out = [img]
    for _ in range(levels - 1):
        nxt = downsample(out[-1])
        if min(nxt.shape) < 2:
            raise ValueError(f"{levels} pyramid levels are too many for dims {img.shape}")
        out.append(nxt)
    return out[::-1]


def _optimize_level(fixed, moving, u, cfg: RegistrationConfig, level: int, history: list) -> np.ndarray:
    """Safeguarded Adam on one pyramid level; returns the best iterate.

    A step that would raise the objective more than ``SLACK`` (relative)
    above the best value seen on this level is retried with half the
    rate; accepted steps let the rate grow back toward ``cfg.step_size``.
    The last history entry of the level is the returned iterate.
    """
    parzen = _configs(fixed, moving, cfg)
    beta1, beta2 = cfg.adam_betas
    n_vox = fixed.size

    def evaluate_at(field, it):
        value, grad, parts = total_loss(fixed, moving, field, cfg, parzen)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise RegistrationError(f"non-finite loss at level {level} iteration {it}")
        return value, grad, parts

    value, grad, parts = evaluate_at(u, 0)
    best = (value, parts, u)
    m1 = np.zeros_like(u)
    m2 = np.zeros_like(u)
    rate = cfg.step_size
    for it in range(cfg.iters_per_level - 1):
        history.append((value, *parts))
        # gradients are O(1 / voxels); rescale so ADAM_EPS is negligible
        g = grad * n_vox
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g * g
        direction = (m1 / (1 - beta1 ** (it + 1))) / (np.sqrt(m2 / (1 - beta2 ** (it + 1))) + ADAM_EPS)
        limit = best[0] + SLACK * max(abs(best[0]), SLACK_FLOOR)
        while rate >= MIN_RATE:
            trial = u - rate * direction
            t_value, t_grad, t_parts = evaluate_at(trial, it + 1)
            if t_value <= limit:
                u, value, grad, parts = trial, t_value, t_grad, t_parts
                rate = min(cfg.step_size, rate * RATE_GROWTH)
                break
            rate *= 0.5
        if value < best[0]:
            best = (value, parts, u)
    value, parts, u = best
    history.append((value, *parts))
    return u


def register(fixed, moving, cfg: RegistrationConfig = RegistrationConfig(),
             labels_fixed=None, labels_moving=None) -> RegistrationReport:
    """Coarse-to-fine registration of ``moving`` onto ``fixed``.

    At each level Adam runs for ``cfg.iters_per_level`` iterations and the
    lowest-objective iterate is kept and carried to the next level. The
    procedure is deterministic, so ``cfg.seed`` only labels the run.
    """
    t0 = time.perf_counter()
    f = image_array(fixed)
    m = image_array(moving)
    if f.shape != m.shape:
        raise ValueError(f"image dims differ: {f.shape} vs {m.shape}")
    fixed_levels = _pyramid(f, cfg.levels)
    moving_levels = _pyramid(m, cfg.levels)

    u = np.zeros(fixed_levels[0].shape + (3,))
    history = []
    for level, (fl, ml) in enumerate(zip(fixed_levels, moving_levels)):
        if u.shape[:3] != fl.shape:
            u = upsample_field(u, fl.shape)
        u = _optimize_level(fl, ml, u, cfg, level, history)
        logger.debug("level %d %s: total %.6f", level, fl.shape, history[-1][0])

    final = DisplacementField(u, getattr(fixed, "spacing", (1.0, 1.0, 1.0)))
    report = evaluate(final, labels_fixed, labels_moving)
    return RegistrationReport(
        final_field=final,
        loss_history=np.asarray(history),
        metrics=report,
        wall_seconds=time.perf_counter() - t0,
        level_shapes=tuple(fl.shape for fl in fixed_levels),
    )


def _axis_params(axis: str, value: float) -> AffineParams:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    vec = [0.0, 0.0, 0.0]
    vec["xyz".index(axis[1])] = float(value)
    if axis[0] == "t":
        return AffineParams(translation=tuple(vec))
    return AffineParams(rotation=tuple(vec))


def landscape(fixed, moving, cfg: RegistrationConfig, axis: str = "tx",
              extent: float = 10.0, steps: int = 21) -> List[SweepRow]:
    """Similarity loss of rigidly moved ``moving`` along one parameter.

    Samples ``steps`` evenly spaced values in ``[-extent, extent]``
    (voxels for translations, degrees for rotations).
    """
    if steps < 3:
        raise ValueError("steps must be >= 3")
    f = image_array(fixed)
    cfg_f, cfg_m = _configs(f, moving, cfg)
    measure = MEASURES[cfg.metric]
    rows = []
    for value in np.linspace(-extent, extent, steps):
        u = affine_field(_axis_params(axis, value), f.shape)
        sim = measure(f, warp(moving, u).warped, cfg_f, cfg_m)
        rows.append(SweepRow(parameter=axis, value=float(value), similarity=sim.value))
    return rows


def lambda_sweep(fixed, moving, labels_fixed, labels_moving, cfg: RegistrationConfig,
                 lambdas: Sequence[float]) -> List[SweepRow]:
    """One registration per regularization weight, sorted by weight."""
    if len(lambdas) == 0:
        raise ValueError("lambdas must be non-empty")
    if any(not lam >= 0 for lam in lambdas):
        raise ValueError("every lambda must be >= 0")
    rows = []
    for lam in sorted(lambdas):
        rep = register(fixed, moving, replace(cfg, lam=float(lam)), labels_fixed, labels_moving)
        total, sim, reg = rep.loss_history[-1]
        u = rep.final_field.vectors
        rows.append(SweepRow(
            parameter="lambda",
            value=float(lam),
            similarity=float(sim),
            total=float(total),
            regularization=float(reg),
            dice_mean=rep.metrics.dice_mean,
            pct_neg_jacobian=rep.metrics.pct_neg_jacobian,
            pct_ndv=rep.metrics.pct_ndv,
            field_grad_energy=rep.metrics.field_grad_energy,
            mean_displacement=float(np.linalg.norm(u, axis=-1).mean()),
        ))
    return rows


DEFAULT_LAMBDAS = (0.1, 1.0, 1.7, 4.2, 4.5, 7.7, 10.0, 100.0)
