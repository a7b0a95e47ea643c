"""Optimal impulse maintenance of a shock-degraded system.

Typical use::

    from shockmaint import example_model, discretize_model, qvi_solve, extract_policy

    model = example_model(1, k=0.05)
    dm = discretize_model(model)
    vf = qvi_solve(dm)
    policy = extract_policy(dm, vf)
"""
from ._jit import backend_name
from .discretize import DiscreteModel, Grid, JumpKernel, build_grid, build_jump_kernel, discretize_model
from .model import (CostModel, DeteriorationRate, EconomicModel, FixedCostError, ModelError,
                    ShockDistribution, SystemModel, ValidationError, ValidationReport,
                    example_model, load_model, model_from_dict, model_to_dict, validate_model)
from .policy import ThresholdPolicy, extract_policy, policy_action
from .simulate import (MCEstimate, ShockStream, TrajectoryRecord, coupled_pair, coupling_experiment,
                       drift_flow, estimate_J, hitting_time, simulate_policy)
from .solve import (ConvergenceError, NumericalError, ResidualReport, SolverConfig, ValueField,
                    qvi_solve, residual_check)

__version__ = "0.1.0"
