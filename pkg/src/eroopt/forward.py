"""The full one-way coupled forward pipeline: fluid, particle velocity, volume fraction."""

from dataclasses import dataclass, field

import numpy as np

from .flow import default_inflow, solve_navier_stokes
from .particles import (FacetPartition, RampConfig, classify_boundary, solve_particle_velocity,
                        solve_volume_fraction)
from .solvers import LinearSolverConfig, NewtonConfig


@dataclass(frozen=True)
class ForwardConfig:
    newton: NewtonConfig = NewtonConfig()
    ramp: RampConfig = RampConfig()
    linear: LinearSolverConfig = LinearSolverConfig()

    @classmethod
    def tight(cls):
        """Tolerances used when derivatives are checked by finite differences."""
        return cls(newton=NewtonConfig(atol=1e-12, rtol=1e-13, maxiter=60))


@dataclass
class ForwardState:
    u_f: np.ndarray
    p: np.ndarray
    u_p: np.ndarray
    alpha: np.ndarray
    partition: FacetPartition
    params: object
    coeffs: object = None  # element coefficients of the final continuation level
    inflow: object = field(repr=False, default=None)

    @property
    def flow_vector(self):
        return np.concatenate([self.u_f.ravel(), self.p])


def solve_forward(mesh, params, cfg=ForwardConfig(), warm=None):
    """Solve all forward problems; ``warm`` (a previous ForwardState) seeds Newton."""
    inflow = default_inflow(mesh, params)
    flow_init = None
    if warm is not None:
        from .flow import FlowState
        flow_init = FlowState(warm.u_f, warm.p)
    flow = solve_navier_stokes(mesh, params, cfg.newton, inflow=inflow, initial=flow_init)
    u_p = solve_particle_velocity(mesh, flow, params, cfg.ramp, cfg.newton)
    partition = classify_boundary(mesh, u_p)
    alpha = solve_volume_fraction(mesh, u_p, partition, params, cfg.linear)
    Kinv = cfg.ramp.levels(params.K)[-1]
    return ForwardState(flow.u_f, flow.p, u_p, alpha, partition, params,
                        params.coefficients(Kinv), inflow)
