"""Geographic differential privacy policies for mobile crowd coverage."""

from geocover.locations import LocationSet, build_grid, distance, load_locations
from geocover.privacy import (
    DPReport,
    ObfuscationPolicy,
    compute_tau,
    coverage_score,
    laplace_policy,
    mlcp_bound_feasible,
    mlcp_upper_bound,
    obfuscate,
    posterior,
    slcp_analytic_policy,
    slcp_upper_bound,
    verify_geo_dp,
)
from geocover.synthesis import (
    SynthesisConfig,
    SynthesisInfeasible,
    SynthesisResult,
    beta_from_binomial,
    beta_sweep,
    build_mlcp_lp,
    synthesize,
)
from geocover.selection import run_laplace_selection, run_selection
from geocover.harness import ExperimentConfig, WorldConfig, generate_world, run_experiment

__version__ = "0.1.0"
