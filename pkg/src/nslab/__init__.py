"""nslab: spectral Navier-Stokes runs, filtered energy balances, and
constrained space-time minimization on the torus."""

from .basket import TestBasket, build_basket
from .config import ConfigError, RunConfig, load_config, parse_config
from .dissipation import defect_cross_validate, defect_space_time, richardson_extrapolate
from .filtering import (
    FilterKernel,
    kernel_for,
    make_filtered_state,
    make_kernel,
    resolved_balance,
    reynolds_stress,
    width_schedule,
)
from .minimizer import (
    FluxField,
    MinimizerSolution,
    assemble_flux,
    el_residual,
    k_functional,
    kkt_report,
    lagrange_ratio,
    oracle_mp,
    solve_mp,
    weak_convergence_diag,
)
from .snapshots import read_snapshot, write_snapshot
from .solver import BlowUpError, InitialCondition, Trajectory, make_initial, simulate
from .spectral import Grid, GridError

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "ConfigError",
    "FilterKernel",
    "FluxField",
    "Grid",
    "GridError",
    "InitialCondition",
    "MinimizerSolution",
    "RunConfig",
    "TestBasket",
    "Trajectory",
    "assemble_flux",
    "build_basket",
    "defect_cross_validate",
    "defect_space_time",
    "el_residual",
    "k_functional",
    "kernel_for",
    "kkt_report",
    "lagrange_ratio",
    "load_config",
    "make_filtered_state",
    "make_initial",
    "make_kernel",
    "oracle_mp",
    "parse_config",
    "read_snapshot",
    "resolved_balance",
    "reynolds_stress",
    "richardson_extrapolate",
    "simulate",
    "solve_mp",
    "weak_convergence_diag",
    "width_schedule",
    "write_snapshot",
]
