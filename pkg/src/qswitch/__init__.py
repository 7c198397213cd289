"""Waveguide-linked qubit chains with dispersive quantum switches."""
from .emitter import (
    EmitterParams,
    analytic_c,
    analytic_q,
    emission_coefficients,
    integrate_emitter,
    sech_control,
    transmission_probability,
)
from .network import NetworkSpec, assemble_rhs, build_modes, group_velocity, propagation_delay
from .protocols import (
    ProtocolPlan,
    PulseSchedule,
    plan_bell,
    plan_ghz,
    plan_qst,
    plan_route,
    plan_w,
    simulate_plan,
)
from .analysis import fidelity_bell, fidelity_ghz, fidelity_w, reduce, sweep_optimal_tau
from .noise import BootstrapSpec, NoiseSpec, bootstrap_fidelity, run_ensemble, run_trajectory

__version__ = "0.1.0"
