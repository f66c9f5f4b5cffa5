"""Multivariate linear-drift diffusion with adaptively optimized transport.

Forward process: dx = -1/2 beta_t D_t x dt + sqrt(beta_t) dw with D_t = I - 2 A_t
positive definite. The package provides the closed-form transition kernel and
its diagonal fast path, a denoising-trained score network, stochastic and
deterministic backward samplers, stochastic-approximation optimization of A_t,
analytic Gaussian oracles for validation, synthetic datasets, and evaluation
metrics. The ``vsdm`` command line wires these into full runs.
"""

from .datasets import Dataset, generate
from .drift import DriftGrid
from .errors import ConfigError, CsvFormatError, DomainError, KernelError, SamplerError
from .kernel import (
    KernelTables,
    beta_d_integral,
    build_tables,
    conditional_sample,
    conditional_score,
    covariance_diagonal,
    covariance_general,
    mean_map,
)
from .metrics import energy_distance, outer_band_fraction, permutation_threshold, straightness
from .oracles import (
    GaussianMarginal,
    OracleScore,
    gaussian_score,
    integrate_moment_odes,
    propagate_gaussian,
)
from .sampler import (
    SampleResult,
    Trajectory,
    chain_rng,
    em_backward_step,
    ode_backward_step,
    prior_sample,
    sample_batch,
)
from .schedule import BetaSchedule
from .score_model import AdamState, ScoreModel, TrainConfig, dsm_loss_and_grad, train_round
from .variational import (
    StepSizeSchedule,
    SvdGrad,
    VariationalScore,
    forward_drift,
    gamma_zeta,
    sa_update,
    variational_loss_grad,
)

__version__ = "0.1.0"
