"""Best response to a posited mean path with a min-of-quadratics endgame.

The value of the multi-destination problem is a soft-min of the
single-destination LQG values V_j, each discounted by the probability g_j
that the j-th pure feedback law actually lands in destination j's cell:

    V(t,x)  = -log( sum_j exp(-eta V_j(t,x)) g_j(t,x) ) / eta    (t < T)
    u*(t,x) = sum_j w_j(t,x) u_j(t,x),   w_j oc exp(-eta V_j) g_j
    V(T,x)  = min_j |x - p_j|_M^2,       u*(T,x) = 0

g_j is the Gaussian probability that the pure-LQG-controlled state started
at (t,x) ends in cell j at time T: mean alpha(T,t)x - int_t^T alpha(T,tau)
S beta_j(tau) dtau, covariance Sigma_t.  At terminal-cost scales (M ~ 500)
the raw exponentials underflow by hundreds of orders of magnitude, so every
weight is formed in the log domain with max-subtraction; g_j itself is
evaluated through log-CDF differences that stay finite in the far tails.

Equivalently, each instant is a discrete-choice problem over the
risk-adjusted values Vtilde_j = V_j - log(g_j)/eta: the policy picks
alternative j with softmax probability Pr_j oc exp(-eta Vtilde_j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .lqg import (RiccatiSolution, TrackingOffsets, TransitionKernel,
                  solve_offsets, solve_riccati, transition_and_covariance)
from .model import AgentClassParams, DestinationSet, TimeGrid
from .numerics import grid_index, interp_series, log_gauss_interval_prob, reverse_cumtrapz

__all__ = ["MinLqgPolicy", "DegenerateWeightsError", "hjb_residual",
           "parabolic_residual", "kolmogorov_residual"]

DEGENERATE_SIGMA_EIG = 1e-12  # below this, g_j collapses to a cell indicator
MC_CELL_SAMPLES = 20000       # Gaussian-sampling fallback for n > 1 cells


class DegenerateWeightsError(RuntimeError):
    """Every destination weight vanished at the queried point."""


@dataclass(frozen=True)
class MinLqgPolicy:
    """Precomputed best-response tables on a time grid.

    Immutable after construction (all caches are built eagerly), so a
    single policy may be evaluated concurrently.  Build with
    MinLqgPolicy.solve.
    """

    params: AgentClassParams
    dest: DestinationSet
    grid: TimeGrid
    xbar: np.ndarray            # (n_steps+1, n)
    riccati: RiccatiSolution
    offsets: TrackingOffsets
    kernel: TransitionKernel
    drift_integral: np.ndarray  # (n_steps+1, l, n): int_t^T alpha(T,tau) S beta_j dtau
    mc_seed: int = 0

    @classmethod
    def solve(cls, params: AgentClassParams, dest: DestinationSet, grid: TimeGrid,
              xbar, riccati: RiccatiSolution | None = None,
              kernel: TransitionKernel | None = None,
              mc_seed: int = 0) -> "MinLqgPolicy":
        """Solve the backward system tracking `xbar` (nodes of `grid`).

        `riccati` and `kernel` do not depend on the tracked path and may be
        passed in when re-solving for many candidate paths.
        """
        xbar = np.asarray(xbar, dtype=float)
        if xbar.ndim == 1:
            xbar = xbar[:, None]
        if riccati is None:
            riccati = solve_riccati(params, grid)
        if kernel is None:
            kernel = transition_and_covariance(riccati, params)
        offsets = solve_offsets(riccati, xbar, dest, params)
        integrand = np.einsum("tab,bc,tjc->tja", kernel.alpha_T, params.S, offsets.beta)
        drift_integral = reverse_cumtrapz(grid.times, integrand)
        return cls(params=params, dest=dest, grid=grid, xbar=xbar,
                   riccati=riccati, offsets=offsets, kernel=kernel,
                   drift_integral=drift_integral, mc_seed=mc_seed)

    # -- terminal Gaussian of the pure-LQG-controlled state ---------------

    def terminal_law(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean (batch, l, n) and covariance (n, n) of x_j(T) given x_j(t)=x."""
        aT = self.kernel.alpha_from(t)
        I = interp_series(self.grid.times, self.drift_integral, t)  # (l, n)
        mean = x @ aT.T
        return mean[:, None, :] - I[None, :, :], self.kernel.sigma_at(t)

    def log_cell_probabilities(self, t: float, x) -> np.ndarray:
        """log g_j(t, x) for every destination; x batch shape (m, n) -> (m, l).

        Scalar states use exact normal CDFs over the cell intervals.  When
        the smallest eigenvalue of Sigma_t drops below 1e-12 the Gaussian is
        treated as a point mass and g_j becomes the cell indicator of its
        mean (silently; this is the t -> T limit).  For n > 1 the cell mass
        is a fixed-seed Monte Carlo estimate over the exact Gaussian law.
        """
        x, _ = self._batch(x)
        mean, Sigma = self.terminal_law(t, x)
        n = self.params.n
        sig_min = float(np.linalg.eigvalsh(Sigma).min()) if n > 1 else float(Sigma[0, 0])
        if sig_min < DEGENERATE_SIGMA_EIG:
            cells = self.dest.nearest(mean)  # (m, l)
            return np.where(cells == np.arange(self.dest.l)[None, :], 0.0, -np.inf)
        if n == 1:
            lo, hi = self.dest.intervals_1d
            s = np.sqrt(sig_min)
            mu = mean[:, :, 0]
            return log_gauss_interval_prob((lo[None, :] - mu) / s, (hi[None, :] - mu) / s)
        return self._mc_log_cells(t, mean, Sigma)

    def _mc_log_cells(self, t: float, mean: np.ndarray, Sigma: np.ndarray) -> np.ndarray:
        chol = np.linalg.cholesky(Sigma)
        out = np.empty(mean.shape[:2])
        for b in range(mean.shape[0]):
            for j in range(self.dest.l):
                key = np.array([np.uint64(self.mc_seed),
                                np.uint64(grid_index(self.grid.times, t) * self.dest.l + j)],
                               dtype=np.uint64)
                rng = np.random.Generator(np.random.Philox(key=key))
                z = rng.standard_normal((MC_CELL_SAMPLES, self.params.n))
                pts = mean[b, j] + z @ chol.T
                frac = np.mean(self.dest.nearest(pts) == j)
                out[b, j] = np.log(frac) if frac > 0 else -np.inf
        return out

    def cell_probability(self, j: int, t: float, x) -> float:
        """g_j(t, x) in [0, 1]."""
        return float(np.exp(self.log_cell_probabilities(t, x)[0, j]))

    # -- value / control ---------------------------------------------------

    def _batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.ndim == 1:
            if x.shape[0] != self.params.n:
                raise ValueError(f"state dim {x.shape[0]} != {self.params.n}")
            return x[None, :], True
        return x, False

    def destination_values(self, t: float, x) -> np.ndarray:
        """V_j(t, x) for every destination; (m, n) -> (m, l)."""
        x, _ = self._batch(x)
        Pi = self.riccati.at(t)
        beta = self.offsets.beta_at(t)   # (l, n)
        delta = self.offsets.delta_at(t)
        quad = 0.5 * np.einsum("mi,ij,mj->m", x, Pi, x)
        return quad[:, None] + x @ beta.T + delta[None, :]

    def _log_terms(self, t: float, x: np.ndarray) -> np.ndarray:
        """-eta V_j + log g_j, the log of each unnormalized Gibbs weight."""
        return -self.params.eta * self.destination_values(t, x) \
            + self.log_cell_probabilities(t, x)

    def value(self, t: float, x):
        """Optimal cost-to-go; min_j |x-p_j|_M^2 at t = T exactly."""
        xb, single = self._batch(x)
        if t >= self.grid.horizon:
            v = self.dest.distances_sq(xb).min(axis=-1)
            return float(v[0]) if single else v
        terms = self._log_terms(t, xb)
        lse = logsumexp(terms, axis=-1)
        if np.any(np.isneginf(lse)):
            raise DegenerateWeightsError(
                f"all destination weights vanished at t={t:.6g}; "
                "Monte Carlo cell estimates may need more samples"
            )
        v = -lse / self.params.eta
        return float(v[0]) if single else v

    def weights(self, t: float, x) -> np.ndarray:
        """Gibbs weights w_j(t,x) in [0,1], summing to 1 over destinations."""
        xb, single = self._batch(x)
        terms = self._log_terms(t, xb)
        peak = terms.max(axis=-1, keepdims=True)
        if np.any(np.isneginf(peak)):
            raise DegenerateWeightsError(f"all destination weights vanished at t={t:.6g}")
        w = np.exp(terms - peak)
        w /= w.sum(axis=-1, keepdims=True)
        return w[0] if single else w

    def control(self, t: float, x):
        """Gibbs blend of the pure feedback laws; zero at t = T."""
        xb, single = self._batch(x)
        if t >= self.grid.horizon:
            u = np.zeros((xb.shape[0], self.params.m))
            return u[0] if single else u
        w = self.weights(t, xb)
        Pi = self.riccati.at(t)
        beta = self.offsets.beta_at(t)
        u = -(xb @ Pi + w @ beta) @ self.params.gain.T
        return u[0] if single else u

    def drift(self, t: float, x):
        """State drift A x + B u*(t, x) under the optimal control."""
        xb, single = self._batch(x)
        mu = xb @ self.params.A.T + self.control(t, xb) @ self.params.B.T
        return mu[0] if single else mu

    def risk_adjusted_value(self, j: int, t: float, x):
        """Vtilde_j = V_j - log(g_j)/eta (+inf where g_j = 0)."""
        xb, single = self._batch(x)
        v = self.destination_values(t, xb)[:, j] \
            - self.log_cell_probabilities(t, xb)[:, j] / self.params.eta
        return float(v[0]) if single else v

    def choice_probabilities(self, t: float, x) -> np.ndarray:
        """Instantaneous discrete-choice probabilities Pr_j (a simplex point).

        Pr_j = softmax_j(-eta Vtilde_j), identical to the control weights;
        destinations with g_j = 0 get probability 0.
        """
        return self.weights(t, x)


# -- residual diagnostics ---------------------------------------------------

def _time_stencil(policy: MinLqgPolicy, t: float) -> tuple[np.ndarray, float]:
    """Five node-aligned times around t for 4th-order time differences."""
    times = policy.grid.times
    dt = policy.grid.dt
    i = grid_index(times, t)
    i = min(max(i, 2), len(times) - 3)
    return times[i - 2:i + 3], dt


def _d_dt4(vals: Sequence[float], h: float) -> float:
    return (-vals[4] + 8.0 * vals[3] - 8.0 * vals[1] + vals[0]) / (12.0 * h)


def _grad_hess(f, x: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient and Hessian of a scalar field."""
    n = x.shape[0]
    g = np.empty(n)
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n); ei[i] = h
        fp, fm = f(x + ei), f(x - ei)
        g[i] = (fp - fm) / (2 * h)
        H[i, i] = (fp - 2 * f0 + fm) / h**2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n); ei[i] = h
            ej = np.zeros(n); ej[j] = h
            H[i, j] = H[j, i] = (f(x + ei + ej) - f(x + ei - ej)
                                 - f(x - ei + ej) + f(x - ei - ej)) / (4 * h**2)
    return g, H


def hjb_residual(policy: MinLqgPolicy, sample: Iterable[tuple[float, np.ndarray]],
                 dx: float = 1e-2) -> float:
    """Max absolute residual of the value HJB and the linearized equation.

    For each sampled (t, x) evaluates

      V_t + x'A'V_x - V_x' S V_x / 2 + Tr(sigma' V_xx sigma)/2 + |x-xbar|_Q^2
      psi_t + x'A'psi_x + Tr(sigma' psi_xx sigma)/2 - eta |x-xbar|_Q^2 psi

    with psi = exp(-eta V), using 4th-order node-aligned time differences
    and 2nd-order central space differences, and returns the overall max.
    Sample times must stay at least two grid steps away from T.
    """
    p = policy.params
    worst = 0.0
    for t, x in sample:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ts, h = _time_stencil(policy, t)
        t0 = ts[2]
        xb = interp_series(policy.grid.times, policy.xbar, t0)
        track = 0.5 * (x - xb) @ p.Q @ (x - xb)

        v_t = _d_dt4([policy.value(s, x) for s in ts], h)
        v_x, v_xx = _grad_hess(lambda y: policy.value(t0, y), x, dx)
        res_v = (v_t + x @ p.A.T @ v_x - 0.5 * v_x @ p.S @ v_x
                 + 0.5 * np.trace(p.sigma.T @ v_xx @ p.sigma) + track)

        def psi(s, y):
            return float(np.exp(-p.eta * policy.value(s, y)))

        psi_t = _d_dt4([psi(s, x) for s in ts], h)
        psi_x, psi_xx = _grad_hess(lambda y: psi(t0, y), x, dx)
        res_psi = (psi_t + x @ p.A.T @ psi_x
                   + 0.5 * np.trace(p.sigma.T @ psi_xx @ p.sigma)
                   - p.eta * track * psi(t0, x))
        worst = max(worst, abs(float(res_v)), abs(float(res_psi)))
    return worst


def parabolic_residual(policy: MinLqgPolicy, sample, dx: float = 1e-2) -> float:
    """Max residual of the linearized (Hopf-Cole) equation alone."""
    p = policy.params
    worst = 0.0
    for t, x in sample:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ts, h = _time_stencil(policy, t)
        t0 = ts[2]
        xb = interp_series(policy.grid.times, policy.xbar, t0)
        track = 0.5 * (x - xb) @ p.Q @ (x - xb)

        def psi(s, y):
            return float(np.exp(-p.eta * policy.value(s, y)))

        psi_t = _d_dt4([psi(s, x) for s in ts], h)
        psi_x, psi_xx = _grad_hess(lambda y: psi(t0, y), x, dx)
        res = (psi_t + x @ p.A.T @ psi_x
               + 0.5 * np.trace(p.sigma.T @ psi_xx @ p.sigma)
               - p.eta * track * psi(t0, x))
        worst = max(worst, abs(float(res)))
    return worst


def kolmogorov_residual(policy: MinLqgPolicy, j: int, sample, dx: float = 1e-2) -> float:
    """Max residual of the backward equation satisfied by g_j.

    g_j is a terminal-event probability of the pure-LQG diffusion toward
    destination j, so it must satisfy

        g_t + ((A - S Pi) x - S beta_j)' g_x + Tr(sigma' g_xx sigma)/2 = 0.
    """
    p = policy.params
    worst = 0.0
    for t, x in sample:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ts, h = _time_stencil(policy, t)
        t0 = ts[2]
        Pi = policy.riccati.at(t0)
        beta = policy.offsets.beta_at(t0)[j]
        mu = (p.A - p.S @ Pi) @ x - p.S @ beta

        def g(s, y):
            return float(np.exp(policy.log_cell_probabilities(s, y)[0, j]))

        g_t = _d_dt4([g(s, x) for s in ts], h)
        g_x, g_xx = _grad_hess(lambda y: g(t0, y), x, dx)
        res = g_t + mu @ g_x + 0.5 * np.trace(p.sigma.T @ g_xx @ p.sigma)
        worst = max(worst, abs(float(res)))
    return worst
