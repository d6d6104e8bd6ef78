"""Single-destination LQG tracking solutions.

For each destination p_j the agent's problem reduces to a classical
tracking LQG whose value is the quadratic V_j(t,x) = x'Pi(t)x/2 +
x'beta_j(t) + delta_j(t) with feedback u_j = -R^-1 B'(Pi x + beta_j).
This module integrates the backward Riccati/offset system

    dPi/dt     = Pi S Pi - A'Pi - Pi A - Q,              Pi(T) = M
    dbeta_j/dt = -(A - S Pi)' beta_j + Q xbar,           beta_j(T) = -M p_j
    ddelta_j/dt = beta_j' S beta_j / 2 - Tr(sigma' Pi sigma)/2
                  - |xbar|_Q^2,                          delta_j(T) = |p_j|_M^2

with S = B R^-1 B', plus the closed-loop transition matrices alpha(t,s)
and the terminal covariance Sigma_t of the controlled state.  All backward
ODEs use RK4 on the shared time grid; stored trajectories are linearly
interpolated between nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AgentClassParams, DestinationSet, TimeGrid, weighted_norm_sq
from .numerics import interp_series, reverse_cumtrapz, rk4

__all__ = [
    "RiccatiBlowupError", "RiccatiSolution", "TrackingOffsets",
    "TransitionKernel", "solve_riccati", "solve_offsets",
    "transition_and_covariance", "lqg_value", "lqg_control",
]

BLOWUP_NORM = 1e12


class RiccatiBlowupError(RuntimeError):
    """Backward Riccati integration left the representable range."""


@dataclass(frozen=True)
class RiccatiSolution:
    grid: TimeGrid
    Pi: np.ndarray  # (n_steps+1, n, n), symmetric, Pi[-1] = M exactly

    def at(self, t: float) -> np.ndarray:
        return interp_series(self.grid.times, self.Pi, t)


@dataclass(frozen=True)
class TrackingOffsets:
    grid: TimeGrid
    beta: np.ndarray   # (n_steps+1, l, n)
    delta: np.ndarray  # (n_steps+1, l)

    def beta_at(self, t: float) -> np.ndarray:
        return interp_series(self.grid.times, self.beta, t)

    def delta_at(self, t: float) -> np.ndarray:
        return interp_series(self.grid.times, self.delta, t)


@dataclass(frozen=True)
class TransitionKernel:
    """Closed-loop state transition alpha(t,s) and terminal covariance.

    Phi stores the fundamental solution alpha(t_i, 0); alpha_T stores
    alpha(T, t_i) from a dedicated backward pass (no inversions); Sigma
    stores Sigma_{t_i} = int_{t_i}^T alpha(T,tau) sigma sigma' alpha(T,tau)' dtau,
    so Sigma[-1] is exactly zero and Sigma is nonincreasing in time.
    """

    grid: TimeGrid
    Phi: np.ndarray      # (n_steps+1, n, n)
    alpha_T: np.ndarray  # (n_steps+1, n, n)
    Sigma: np.ndarray    # (n_steps+1, n, n)

    def alpha(self, t: float, s: float) -> np.ndarray:
        """alpha(t, s) = Phi(t) Phi(s)^-1 with alpha(s, s) = I."""
        phi_t = interp_series(self.grid.times, self.Phi, t)
        phi_s = interp_series(self.grid.times, self.Phi, s)
        return np.linalg.solve(phi_s.T, phi_t.T).T

    def alpha_from(self, t: float) -> np.ndarray:
        """alpha(T, t)."""
        return interp_series(self.grid.times, self.alpha_T, t)

    def sigma_at(self, t: float) -> np.ndarray:
        return interp_series(self.grid.times, self.Sigma, t)


def _check_finite(name: str):
    def check(y: np.ndarray, t: float) -> None:
        norm = float(np.linalg.norm(y))
        if not np.isfinite(norm) or norm > BLOWUP_NORM:
            raise RiccatiBlowupError(
                f"{name} blew up near t={t:.6g} (norm {norm:.3g}); "
                "no solution exists on this horizon"
            )
    return check


def solve_riccati(params: AgentClassParams, grid: TimeGrid) -> RiccatiSolution:
    """Backward RK4 for Pi with Pi(T) = M, symmetrized after every step."""
    A, Q, M, S = params.A, params.Q, params.M, params.S

    def f(t: float, Pi: np.ndarray) -> np.ndarray:
        return Pi @ S @ Pi - A.T @ Pi - Pi @ A - Q

    Pi = rk4(f, M, grid.times, backward=True,
             postprocess=lambda y: 0.5 * (y + y.T),
             check=_check_finite("Riccati solution"))
    Pi[-1] = M  # terminal node exact
    return RiccatiSolution(grid=grid, Pi=Pi)


def solve_offsets(riccati: RiccatiSolution, xbar: np.ndarray,
                  dest: DestinationSet, params: AgentClassParams) -> TrackingOffsets:
    """Backward RK4 for all destination offsets (beta_j, delta_j) at once.

    xbar is the tracked mean path sampled on the grid, shape
    (n_steps+1, n); off-node values are linearly interpolated.
    """
    grid = riccati.grid
    xbar = np.asarray(xbar, dtype=float)
    if xbar.ndim == 1:
        xbar = xbar[:, None]
    if xbar.shape != (len(grid.times), params.n):
        raise ValueError(f"xbar shape {xbar.shape} does not match grid/state dims")
    A, Q, S, sigma = params.A, params.Q, params.S, params.sigma
    l = dest.l

    beta_T = -dest.points @ params.M  # rows -M p_j (M symmetric)
    delta_T = np.array([weighted_norm_sq(p, params.M) for p in dest.points])
    yT = np.concatenate([beta_T.reshape(-1), delta_T])

    def f(t: float, y: np.ndarray) -> np.ndarray:
        beta = y[: l * params.n].reshape(l, params.n)
        Pi = riccati.at(t)
        xb = interp_series(grid.times, xbar, t)
        Acl = A - S @ Pi
        dbeta = -beta @ Acl + (Q @ xb)[None, :]
        ddelta = (0.5 * np.einsum("jn,nm,jm->j", beta, S, beta)
                  - 0.5 * np.trace(sigma.T @ Pi @ sigma)
                  - 0.5 * xb @ Q @ xb)
        return np.concatenate([dbeta.reshape(-1), ddelta])

    y = rk4(f, yT, grid.times, backward=True, check=_check_finite("tracking offsets"))
    beta = y[:, : l * params.n].reshape(len(grid.times), l, params.n)
    delta = y[:, l * params.n:]
    return TrackingOffsets(grid=grid, beta=beta, delta=delta)


def transition_and_covariance(riccati: RiccatiSolution, params: AgentClassParams,
                              generator=None) -> TransitionKernel:
    """Closed-loop transition matrices and terminal covariance Sigma_t.

    `generator` overrides the closed-loop matrix t -> A - S Pi(t) (used by
    degenerate-case tests).  Sigma is accumulated by trapezoidal quadrature
    on the grid, which makes Sigma(T) = 0 exact.
    """
    grid = riccati.grid
    n = params.n
    if generator is None:
        A, S = params.A, params.S

        def generator(t: float) -> np.ndarray:
            return A - S @ riccati.at(t)

    eye = np.eye(n)
    Phi = rk4(lambda t, y: generator(t) @ y, eye, grid.times)
    alpha_T = rk4(lambda t, y: -y @ generator(t), eye, grid.times, backward=True)
    noise = params.noise_cov
    integrand = np.einsum("tij,jk,tlk->til", alpha_T, noise, alpha_T)
    Sigma = reverse_cumtrapz(grid.times, integrand)
    Sigma = 0.5 * (Sigma + np.swapaxes(Sigma, 1, 2))
    return TransitionKernel(grid=grid, Phi=Phi, alpha_T=alpha_T, Sigma=Sigma)


def _as_batch(x, n: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.ndim == 1:
        if x.shape[0] != n:
            raise ValueError(f"state dim {x.shape[0]} != {n}")
        return x[None, :], True
    return x, False


def lqg_value(riccati: RiccatiSolution, offsets: TrackingOffsets, j: int, t: float, x):
    """V_j(t, x) = x'Pi x/2 + x'beta_j + delta_j; x may be a batch."""
    xb, single = _as_batch(x, riccati.Pi.shape[1])
    Pi = riccati.at(t)
    beta = offsets.beta_at(t)[j]
    delta = offsets.delta_at(t)[j]
    v = 0.5 * np.einsum("mi,ij,mj->m", xb, Pi, xb) + xb @ beta + delta
    return float(v[0]) if single else v


def lqg_control(params: AgentClassParams, riccati: RiccatiSolution,
                offsets: TrackingOffsets, j: int, t: float, x):
    """u_j(t, x) = -R^-1 B' (Pi x + beta_j); x may be a batch."""
    xb, single = _as_batch(x, params.n)
    Pi = riccati.at(t)
    beta = offsets.beta_at(t)[j]
    u = -(xb @ Pi + beta[None, :]) @ params.gain.T
    return u[0] if single else u
