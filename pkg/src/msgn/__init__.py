"""Coupled simulation of multiscale stochastic gene networks and their hybrid limits."""
from .network import (
    HybridState,
    Reaction,
    ReactionNetwork,
    diffusion_matrix,
    drift,
    drift_jacobian,
    eval_rate,
    parse_network,
    rate_gradient,
    serialize_network,
    truncate_rates,
)
from .paths import EventCapExceeded, IntegratorFailure, PathRecord
from .prm import PRMStream, next_point, query, stream
from .jump_sim import simulate_scaled
from .pdmp_sim import integrate_flow, simulate_pdmp

__version__ = "0.1.0"
