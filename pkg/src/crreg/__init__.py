"""Multi-modal deformable registration with a differentiable correlation ratio."""
from .grid import DisplacementField, LabelVolume, PhantomSpec, Volume
from .parzen import ParzenConfig, default_config, make_config, weights, weights_derivative
from .similarity import (
    SimilarityEval,
    cond_stats,
    correlation_ratio,
    cr_loss,
    eval_timed,
    mi_loss,
    mutual_information,
)
from .transform import AffineParams, affine_field, diffusion_reg, warp
from .metrics import MetricsReport, dice, evaluate, jacobian_det, ndv
from .phantom import make_phantom
from .driver import RegistrationConfig, RegistrationReport, SweepRow, landscape, lambda_sweep, register, total_loss

__version__ = "0.1.0"
