"""Multi-scale localization complexity and particle diffuse-then-denoise chains in one dimension."""

from .measures import (
    MeasureError,
    MixtureMeasure,
    ScaledNoised,
    UniformMeasure,
    curvature,
    evolve,
    localization,
    posterior_mean,
    sample,
    sample_smoothed,
    score,
    score_at_time,
    smoothed_density,
    snr_schedule,
)
from .complexity import (
    integrated_tail,
    minimize_m,
    survival_curve,
    zeta_star,
)
from .transport import (
    ChainConfig,
    ParticleEnsemble,
    backward_rate,
    backward_step,
    forward_rate,
    forward_step,
    roundtrip_residual,
    run_chain,
    w2,
)

__version__ = "0.1.0"
