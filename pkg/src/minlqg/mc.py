"""Monte Carlo validation of equilibria by finite-population simulation.

Populations are simulated with Euler-Maruyama under the equilibrium
feedback policy.  Gaussian increments come from counter-based Philox
streams keyed by (seed, replication, agent): every agent owns an
independent stream, so simulations are bit-reproducible and independent of
agent evaluation order, and common random numbers across policy variants
are free (replay the same key).  Agents are allocated to classes by
largest-remainder rounding so finite-population class fractions match the
limit weights as closely as possible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lqg import lqg_control
from .meanfield import MeanFieldProblem, bisection_fixed_point, with_terminal_weight
from .model import DestinationSet
from .policy import MinLqgPolicy

__all__ = [
    "SimulationError", "SimulationConfig", "TrajectoryEnsemble",
    "allocate_classes", "simulate_population", "empirical_cdm",
    "mc_cell_probability", "estimate_epsilon_nash", "terminal_proximity_curve",
]


class SimulationError(RuntimeError):
    """A sample path left the representable range."""


@dataclass(frozen=True)
class SimulationConfig:
    """Reproducible population-simulation settings.

    The simulation step is the policy grid step divided by `substeps`.
    Identical configs produce bit-identical trajectories.
    """

    n_agents: int
    seed: int
    substeps: int = 1

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("n_agents must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass(frozen=True)
class TrajectoryEnsemble:
    times: np.ndarray          # (n_nodes,)
    paths: np.ndarray          # (N, n_nodes, n)
    class_index: np.ndarray    # (N,)
    terminal_cell: np.ndarray  # (N,)

    @property
    def n_agents(self) -> int:
        return self.paths.shape[0]

    def mean_path(self) -> np.ndarray:
        return self.paths.mean(axis=0)


def allocate_classes(n_agents: int, weights: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of agents to classes (sorted blocks)."""
    weights = np.asarray(weights, dtype=float)
    ideal = n_agents * weights
    counts = np.floor(ideal).astype(int)
    short = n_agents - counts.sum()
    if short > 0:
        order = np.argsort(-(ideal - counts))
        counts[order[:short]] += 1
    return np.repeat(np.arange(len(weights)), counts)


def agent_stream(seed: int, rep: int, agent: int) -> np.random.Generator:
    """Philox stream keyed by (seed, replication, agent)."""
    key = np.array([np.uint64(seed),
                    (np.uint64(rep) << np.uint64(32)) | np.uint64(agent)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _agent_increments(seed: int, rep: int, n_agents: int, n_steps: int,
                      n_dim: int) -> np.ndarray:
    """Standard-normal increments, shape (N, n_steps, n_dim)."""
    out = np.empty((n_agents, n_steps, n_dim))
    for a in range(n_agents):
        out[a] = agent_stream(seed, rep, a).standard_normal((n_steps, n_dim))
    return out


def _initial_states(problem: MeanFieldProblem, cfg: SimulationConfig,
                    rep: int) -> np.ndarray:
    # dedicated agent index 2^31 reserves a stream for the initial draw
    rng = agent_stream(cfg.seed, rep, 2**31)
    return problem.init.sample(cfg.n_agents, rng)


def simulate_population(problem: MeanFieldProblem, Lam: np.ndarray,
                        cfg: SimulationConfig, rep: int = 0,
                        policies: list[MinLqgPolicy] | None = None) -> TrajectoryEnsemble:
    """Euler-Maruyama population run under the equilibrium feedback.

    Every agent best-responds to the candidate path xbar_Lambda of its
    problem; states are recorded at the policy grid nodes.
    """
    if policies is None:
        policies = problem.policies(Lam)
    times = problem.grid.times
    n, N = problem.pop.n, cfg.n_agents
    classes = allocate_classes(N, problem.pop.weights)
    X = _initial_states(problem, cfg, rep)
    n_steps = (len(times) - 1) * cfg.substeps
    dW = _agent_increments(cfg.seed, rep, N, n_steps, n)

    paths = np.empty((N, len(times), n))
    paths[:, 0, :] = X
    sqdt = np.sqrt(problem.grid.dt / cfg.substeps)
    dt = problem.grid.dt / cfg.substeps
    masks = [classes == s for s in range(problem.pop.k)]
    sigmas = [c.sigma for c in problem.pop.classes]
    for i in range(len(times) - 1):
        for sub in range(cfg.substeps):
            t = times[i] + sub * dt
            drift = np.empty_like(X)
            for s, mask in enumerate(masks):
                if mask.any():
                    drift[mask] = policies[s].drift(t, X[mask])
            X = X + drift * dt
            for s, mask in enumerate(masks):
                if mask.any():
                    X[mask] += dW[mask, i * cfg.substeps + sub, :] @ sigmas[s].T * sqdt
        if not np.all(np.isfinite(X)):
            bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0, 0])
            raise SimulationError(f"non-finite state for agent {bad} at step {i + 1}")
        paths[:, i + 1, :] = X
    cells = np.asarray(problem.dest.nearest(X))
    return TrajectoryEnsemble(times=times, paths=paths, class_index=classes,
                              terminal_cell=cells)


def empirical_cdm(ens: TrajectoryEnsemble, dest: DestinationSet, k: int) -> np.ndarray:
    """Terminal-cell frequencies per class; rows sum to one exactly."""
    out = np.empty((k, dest.l))
    for s in range(k):
        mask = ens.class_index == s
        if not mask.any():
            raise ValueError(f"class {s} has no agents")
        out[s] = np.bincount(ens.terminal_cell[mask], minlength=dest.l) / mask.sum()
    return out


def mc_cell_probability(policy: MinLqgPolicy, j: int, t: float, x,
                        n_paths: int = 100_000, seed: int = 0,
                        substeps: int = 1) -> tuple[float, float]:
    """Monte Carlo oracle for g_j: frequency of cell j at T under the pure
    feedback toward destination j, started at (t, x).

    Returns (estimate, binomial standard error).
    """
    times = policy.grid.times
    mask = times > t + 1e-12
    seg = np.concatenate(([t], times[mask]))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    X = np.tile(x, (n_paths, 1))
    sig = policy.params.sigma
    for i in range(len(seg) - 1):
        dt = (seg[i + 1] - seg[i]) / substeps
        for sub in range(substeps):
            tt = seg[i] + sub * dt
            u = lqg_control(policy.params, policy.riccati, policy.offsets, j, tt, X)
            X = X + (X @ policy.params.A.T + u @ policy.params.B.T) * dt \
                + rng.standard_normal(X.shape) @ sig.T * np.sqrt(dt)
    hits = np.asarray(policy.dest.nearest(X)) == j
    p = float(hits.mean())
    se = float(np.sqrt(max(p * (1 - p), 1e-12) / n_paths))
    return p, se


# -- deviation incentive (finite-population optimality gap) ------------------

def _replay_agent(policy: MinLqgPolicy, x0: np.ndarray, dW: np.ndarray,
                  times: np.ndarray, substeps: int) -> tuple[np.ndarray, np.ndarray]:
    """One agent's node states and node controls under a policy, given its
    standard-normal increments (shape (n_steps*substeps, n))."""
    path = np.empty((len(times), x0.shape[0]))
    controls = np.empty((len(times), policy.params.m))
    x = x0.copy()
    path[0] = x
    dt = (times[1] - times[0]) / substeps
    sig = policy.params.sigma
    for i in range(len(times) - 1):
        controls[i] = policy.control(times[i], x)
        for sub in range(substeps):
            t = times[i] + sub * dt
            u = policy.control(t, x)
            x = x + (policy.params.A @ x + policy.params.B @ u) * dt \
                + sig @ dW[i * substeps + sub] * np.sqrt(dt)
        path[i + 1] = x
    controls[-1] = 0.0
    return path, controls


def _running_cost(params, path, controls, xbar_pop, times) -> float:
    """Left-Riemann running cost plus terminal min-distance cost."""
    dt = times[1] - times[0]
    dev = path[:-1] - xbar_pop[:-1]
    track = 0.5 * np.einsum("ti,ij,tj->t", dev, params.Q, dev)
    effort = 0.5 * np.einsum("ti,ij,tj->t", controls[:-1], params.R, controls[:-1])
    return float((track + effort).sum() * dt)


def estimate_epsilon_nash(problem: MeanFieldProblem, Lam: np.ndarray,
                          cfg: SimulationConfig, N_values,
                          n_reps: int = 30) -> list[dict]:
    """Deviation-incentive estimates for increasing population sizes.

    For each N: simulate n_reps populations of N agents under the
    equilibrium policy; estimate the mean path of agents 2..N by averaging
    over replications; solve agent 1's best response against that
    deterministic path; re-run agent 1 with common random numbers; report
    eps_hat = mean cost(u*) - cost(best response) with its standard error.
    The estimator is a lower-bound proxy: the exact deviation problem
    (responding to a random empirical mean) is a different control problem.
    """
    results = []
    for N in N_values:
        N = int(N)
        if N < 2:
            raise ValueError("deviation estimate needs N >= 2 "
                             "(an agent alone against its own mean is ill-posed)")
        sub_cfg = SimulationConfig(n_agents=N, seed=cfg.seed, substeps=cfg.substeps)
        policies = problem.policies(Lam)
        runs = [simulate_population(problem, Lam, sub_cfg, rep=r, policies=policies)
                for r in range(n_reps)]
        others_mean = np.mean([r.paths[1:].mean(axis=0) for r in runs], axis=0)

        s0 = int(runs[0].class_index[0])
        br_policy = problem.policy(s0, others_mean)
        params = problem.pop.classes[s0]
        times = problem.grid.times
        n_steps = (len(times) - 1) * cfg.substeps

        gaps = np.empty(n_reps)
        for r, run in enumerate(runs):
            dW0 = agent_stream(cfg.seed, r, 0).standard_normal((n_steps, problem.pop.n))
            x0 = run.paths[0, 0]
            star_path = run.paths[0]
            star_controls = np.array([policies[s0].control(t, star_path[i])
                                      for i, t in enumerate(times[:-1])]
                                     + [np.zeros(params.m)])
            xbar_star = run.paths.mean(axis=0)
            cost_star = _running_cost(params, star_path, star_controls,
                                      xbar_star, times) \
                + float(problem.dest.distances_sq(star_path[-1]).min())

            br_path, br_controls = _replay_agent(br_policy, x0, dW0, times,
                                                 cfg.substeps)
            xbar_br = xbar_star + (br_path - star_path) / N
            cost_br = _running_cost(params, br_path, br_controls, xbar_br, times) \
                + float(problem.dest.distances_sq(br_path[-1]).min())
            gaps[r] = cost_star - cost_br
        results.append({"N": N, "eps_hat": float(gaps.mean()),
                        "se": float(gaps.std(ddof=1) / np.sqrt(n_reps))})
    return results


def terminal_proximity_curve(problem: MeanFieldProblem, M_values, epsilon: float,
                             cfg: SimulationConfig, tol: float = 1e-3) -> list[dict]:
    """P(min_j |x(T) - p_j| > epsilon) as the terminal weight grows.

    Each M re-solves its own scalar-binary fixed point before simulating.
    The euclidean (unweighted) distance is used for the proximity event.
    Reports the estimate, its standard error, and the ratio against
    log(M)/M.
    """
    rows = []
    for M in M_values:
        prob_M = with_terminal_weight(problem, float(M))
        r_star = bisection_fixed_point(prob_M, tol=tol).r
        Lam = np.array([[r_star, 1.0 - r_star]])
        ens = simulate_population(prob_M, Lam, cfg)
        term = ens.paths[:, -1, :]
        dists = np.abs(term[:, None, 0] - prob_M.dest.points[None, :, 0])
        far = dists.min(axis=1) > epsilon
        p = float(far.mean())
        se = float(np.sqrt(max(p * (1 - p), 1e-12) / ens.n_agents))
        rows.append({"M": float(M), "r_star": r_star, "p_far": p, "se": se,
                     "ratio_logM_over_M": p / (np.log(M) / M)})
    return rows
