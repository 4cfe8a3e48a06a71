"""Simulation library for space-time periodically forced Langevin dynamics:
transport observables (velocity response, mobility resonance, effective
drift/diffusion) with deterministic streams and analytic verification oracles.
"""

__version__ = "0.1.0"

from .model import (
    SystemParams,
    Potential,
    ForceField,
    eval_potential,
    grad_potential,
    eval_force,
    time_average_force,
    time_fourier_mode,
)
from .integrator import (
    PhaseState,
    RandomStream,
    BlowUpError,
    derive_stream,
    splitting_step,
    run_trajectory,
    sample_gibbs,
)
from .observables import (
    VelocityProfile,
    ResponseFit,
    BlockMeanAccumulator,
    stroboscopic_velocity,
    fit_linear_response,
    mode_amplitude,
    mean_experienced_force,
    mean_velocity,
)
from .diffusion import (
    DiffusionEstimate,
    estimate_drift_diffusion,
    quadratic_fit,
    spectrum,
)
