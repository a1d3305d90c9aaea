"""Certified time-discounted moving horizon estimation."""
from .analyze import (
    ContractionSpec,
    RgesBound,
    comparison_csv,
    horizon_condition,
    min_horizon,
    contraction_specs,
)
from .certify import (
    DiossCertificate,
    SamplingPlan,
    affinity_check,
    load_certificate,
    save_certificate,
    synthesize_certificate,
    verify_certificate,
)
from .estimate import (
    EstimateResult,
    FieWeights,
    KFunction,
    MheConfig,
    SolverConfig,
    fie_cost,
    mhe_cost,
    solve_fie,
    solve_mhe,
)
from .exceptions import CertificationError, HorizonError, PlantConstraintError, UsageError
from .harness import ScenarioConfig, SimulationLog, export_log, load_log, load_scenario, run_scenario
from .kernels import BACKEND
from .model import Box, SystemModel, linear_model, load_model, reactor_model, simulate

__version__ = "0.1.0"
