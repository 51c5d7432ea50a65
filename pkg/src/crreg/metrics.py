"""Registration quality: label overlap and deformation regularity."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .grid import field_array, label_array
from .transform import diffusion_reg, identity_grid


@dataclass(frozen=True)
class MetricsReport:
    dice_per_label: Dict[int, float] = field(default_factory=dict)
    dice_mean: Optional[float] = None
    pct_neg_jacobian: float = 0.0
    pct_ndv: float = 0.0
    field_grad_energy: float = 0.0

    def to_json(self) -> dict:
        """Flat JSON-ready dict; label keys become strings."""
        return {
            "dice_mean": self.dice_mean,
            "pct_neg_jacobian": self.pct_neg_jacobian,
            "pct_ndv": self.pct_ndv,
            "field_grad_energy": self.field_grad_energy,
            "dice_per_label": {str(k): v for k, v in sorted(self.dice_per_label.items())},
        }


def dice(a, b):
    """Per-label Dice overlap and its mean over labels (background excluded).

    Labels present in neither map are skipped; a label present in only one
    scores 0.
    """
    a = label_array(a)
    b = label_array(b)
    if a.shape != b.shape:
        raise ValueError(f"label dims differ: {a.shape} vs {b.shape}")
    scores = {}
    for lab in np.union1d(np.unique(a), np.unique(b)):
        if lab == 0:
            continue
        in_a = a == lab
        in_b = b == lab
        scores[int(lab)] = 2.0 * np.count_nonzero(in_a & in_b) / (in_a.sum() + in_b.sum())
    mean = float(np.mean(list(scores.values()))) if scores else None
    return scores, mean


def warp_labels(labels, field) -> np.ndarray:
    """Nearest-neighbour resampling at ``p + u(p)``, ties to the lower index."""
    lab = label_array(labels)
    u = field_array(field)
    if lab.shape != u.shape[:3]:
        raise ValueError(f"label dims {lab.shape} do not match field {u.shape[:3]}")
    q = identity_grid(lab.shape) + u
    idx = []
    for a, n in enumerate(lab.shape):
        i = np.ceil(q[..., a] - 0.5)
        idx.append(np.clip(i, 0, n - 1).astype(np.intp))
    return lab[tuple(idx)]


def _det3(J: np.ndarray) -> np.ndarray:
    """Determinants of a ``(..., 3, 3)`` stack."""
    return (
        J[..., 0, 0] * (J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1])
        - J[..., 0, 1] * (J[..., 1, 0] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 0])
        + J[..., 0, 2] * (J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0])
    )


def jacobian_det(field) -> np.ndarray:
    """det(I + grad u) with central differences inside, one-sided at borders."""
    u = field_array(field)
    J = np.empty(u.shape[:3] + (3, 3))
    for a in range(3):
        J[..., :, a] = np.gradient(u, axis=a)
        J[..., a, a] += 1.0
    return _det3(J)


def _one_sided(u: np.ndarray, axis: int, forward: bool) -> np.ndarray:
    d = np.diff(u, axis=axis)
    # repeat the last (first) difference so both variants exist everywhere
    edge = [slice(None)] * u.ndim
    edge[axis] = slice(-1, None) if forward else slice(0, 1)
    pieces = (d, d[tuple(edge)]) if forward else (d[tuple(edge)], d)
    return np.concatenate(pieces, axis=axis)


def ndv(field) -> float:
    """Percent non-diffeomorphic volume.

    At each voxel the Jacobian determinant is formed with each of the 8
    choices of forward/backward differences per axis; the voxel's folded
    share is the mean negative part of those determinants, capped at one
    voxel. Affine fields give identical determinants for all 8 choices.
    """
    u = field_array(field)
    diffs = [[_one_sided(u, a, fwd) for fwd in (False, True)] for a in range(3)]
    mass = np.zeros(u.shape[:3])
    for choice in itertools.product((0, 1), repeat=3):
        J = np.empty(u.shape[:3] + (3, 3))
        for a, pick in enumerate(choice):
            J[..., :, a] = diffs[a][pick]
            J[..., a, a] += 1.0
        mass += np.maximum(0.0, -_det3(J))
    mass = np.minimum(mass / 8.0, 1.0)
    return 100.0 * float(mass.sum()) / mass.size


def pct_neg_jacobian(field) -> float:
    det = jacobian_det(field)
    return 100.0 * np.count_nonzero(det <= 0) / det.size


def evaluate(field, labels_fixed=None, labels_moving=None) -> MetricsReport:
    """Metrics for a field; Dice needs both label maps.

    Dice compares ``labels_fixed`` with ``labels_moving`` resampled through
    the field.
    """
    u = field_array(field)
    scores, mean = {}, None
    if labels_fixed is not None and labels_moving is not None:
        scores, mean = dice(labels_fixed, warp_labels(labels_moving, u))
    return MetricsReport(
        dice_per_label=scores,
        dice_mean=mean,
        pct_neg_jacobian=pct_neg_jacobian(u),
        pct_ndv=ndv(u),
        field_grad_energy=diffusion_reg(u)[0],
    )
