"""Ready-made scenario builders used by the CLI, demos and tests.

The reference scenario is the scalar binary-choice population: uniform
dynamics A=0.1, B=0.2, R=5, terminal weight M=500, horizon T=2, noise
sigma=1.5, initial law N(0.3, 1), destinations at -10 and +10.  The social
weight Q and the noise level are the interesting dials: small Q splits the
population by initial position, large Q herds it, and past a critical Q
the equilibrium stops being unique.
"""

from __future__ import annotations

import numpy as np

from .meanfield import FpGrid, MeanFieldProblem
from .model import (AgentClassParams, DestinationSet, GaussianInitial,
                    Population, TimeGrid)

__all__ = ["binary_scenario", "scenario_with"]


def binary_scenario(Q: float = 0.1, sigma: float = 1.5, M: float = 500.0,
                    A: float = 0.1, B: float = 0.2, R: float = 5.0,
                    horizon: float = 2.0, n_steps: int = 2000,
                    mean0: float = 0.3, var0: float = 1.0,
                    p_left: float = -10.0, p_right: float = 10.0,
                    fp_nodes: int = 801) -> MeanFieldProblem:
    """Scalar binary-choice scenario with uniform dynamics."""
    params = AgentClassParams(A=[[A]], B=[[B]], sigma=[[sigma]],
                              Q=[[Q]], R=[[R]], M=[[M]])
    pop = Population(classes=(params,), weights=np.array([1.0]))
    dest = DestinationSet(points=[[p_left], [p_right]], metric=[[M]])
    init = GaussianInitial(mean=[mean0], cov=[[var0]])
    grid = TimeGrid(horizon=horizon, n_steps=n_steps)
    problem = MeanFieldProblem(pop=pop, dest=dest, init=init, grid=grid)
    if fp_nodes != 801:
        fpg = problem.fpgrid
        object.__setattr__(problem, "fpgrid",
                           FpGrid(x_min=fpg.x_min, x_max=fpg.x_max, n_nodes=fp_nodes))
    return problem


def scenario_with(problem: MeanFieldProblem, **overrides) -> MeanFieldProblem:
    """Rebuild a scalar uniform scenario with some dials changed.

    Accepted keys: Q, sigma, M, A, B, R (scalars).  Parameters are rebuilt
    from scratch so the stored Hopf-Cole scalar is re-derived.
    """
    c = problem.pop.classes[0]
    if problem.pop.k != 1:
        raise ValueError("scenario_with only handles uniform populations")
    vals = {"A": float(c.A[0, 0]), "B": float(c.B[0, 0]),
            "sigma": float(c.sigma[0, 0]), "Q": float(c.Q[0, 0]),
            "R": float(c.R[0, 0]), "M": float(c.M[0, 0])}
    unknown = set(overrides) - set(vals)
    if unknown:
        raise ValueError(f"unknown scenario overrides: {sorted(unknown)}")
    vals.update({k: float(v) for k, v in overrides.items()})
    n = problem.pop.n
    eye = np.eye(n)
    params = AgentClassParams(A=vals["A"] * eye, B=vals["B"] * eye,
                              sigma=vals["sigma"] * eye, Q=vals["Q"] * eye,
                              R=vals["R"] * eye, M=vals["M"] * eye)
    pop = Population(classes=(params,), weights=problem.pop.weights)
    dest = DestinationSet(points=problem.dest.points, metric=vals["M"] * eye)
    # spatial domain depends on sigma: rebuild the transport grid, keep its resolution
    new = MeanFieldProblem(pop=pop, dest=dest, init=problem.init,
                           grid=problem.grid,
                           mc_paths=problem.mc_paths, mc_seed=problem.mc_seed)
    if problem.fpgrid is not None and new.fpgrid is not None \
            and problem.fpgrid.n_nodes != new.fpgrid.n_nodes:
        object.__setattr__(new, "fpgrid",
                           FpGrid(x_min=new.fpgrid.x_min, x_max=new.fpgrid.x_max,
                                  n_nodes=problem.fpgrid.n_nodes))
    return new
