"""Domain types for collective-destination tracking games.

A population of noisy linear agents must each end up near one of `l`
destination points.  Distances are measured in the weighted norm
``|x|_W^2 = x' W x / 2`` (note the 1/2: it is baked into every cost,
terminal condition and fixed-point value in this package, and mixing
conventions silently changes all of them).  The terminal min-of-quadratics
cost partitions the state space into Voronoi cells, one per destination.

The Hopf-Cole scalar ``eta`` is the constant linking control authority to
noise, ``B R^-1 B' = eta * sigma sigma'``; it is what makes the
best-response HJB equation linearizable and is derived here by a
least-squares fit and then re-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

__all__ = [
    "AgentClassParams", "Population", "DestinationSet", "TimeGrid",
    "GaussianInitial", "SampleInitial", "InitialDistribution",
    "ValidationReport", "weighted_norm_sq", "nearest_destination",
    "validate_params", "fit_eta",
]

ETA_REL_TOL = 1e-10  # relative Frobenius tolerance for B R^-1 B' = eta sigma sigma'


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got ndim={m.ndim}")
    m = m.copy()
    m.flags.writeable = False
    return m


def _as_vector(a, name: str) -> np.ndarray:
    v = np.atleast_1d(np.asarray(a, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    v = v.copy()
    v.flags.writeable = False
    return v


def _is_symmetric(m: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.allclose(m, m.T, rtol=0, atol=tol * (1.0 + np.abs(m).max())))


def _min_eig(m: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())


def fit_eta(B: np.ndarray, R: np.ndarray, sigma: np.ndarray) -> float:
    """Least-squares scalar fit of B R^-1 B' against sigma sigma'."""
    S = B @ np.linalg.solve(R, B.T)
    N = sigma @ sigma.T
    denom = float(np.sum(N * N))
    if denom == 0.0:
        return float("nan")
    return float(np.sum(S * N) / denom)


def weighted_norm_sq(x, W) -> float:
    """Half-quadratic form x' W x / 2 (the square of the weighted norm)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (x.shape[-1], x.shape[-1]):
        raise ValueError(f"dimension mismatch: x has dim {x.shape[-1]}, W is {W.shape}")
    return 0.5 * float(x @ W @ x)


@dataclass(frozen=True)
class AgentClassParams:
    """Dynamics and cost matrices of one agent type.

    dx = (A x + B u) dt + sigma dw, running cost |x - xbar|_Q^2 + |u|_R^2,
    terminal cost min_j |x(T) - p_j|_M^2.  ``eta`` is derived on
    construction from the control/noise alignment B R^-1 B' = eta sigma
    sigma'; validity of that alignment is checked by validate_params, not
    here.
    """

    A: np.ndarray
    B: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    M: np.ndarray
    eta: float = field(default=float("nan"))

    def __post_init__(self):
        for name in ("A", "B", "sigma", "Q", "R", "M"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        if np.isnan(self.eta):
            object.__setattr__(self, "eta", fit_eta(self.B, self.R, self.sigma))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @cached_property
    def S(self) -> np.ndarray:
        """Control authority B R^-1 B'."""
        return self.B @ np.linalg.solve(self.R, self.B.T)

    @cached_property
    def gain(self) -> np.ndarray:
        """Feedback gain factor R^-1 B' (control = -gain @ (Pi x + beta))."""
        return np.linalg.solve(self.R, self.B.T)

    @cached_property
    def noise_cov(self) -> np.ndarray:
        """sigma sigma'."""
        return self.sigma @ self.sigma.T

    def alignment_residual(self) -> float:
        """Relative Frobenius mismatch of B R^-1 B' against eta sigma sigma'."""
        target = self.eta * self.noise_cov
        scale = np.linalg.norm(target)
        if not np.isfinite(self.eta) or scale == 0.0:
            return float("inf")
        return float(np.linalg.norm(self.S - target) / scale)


@dataclass(frozen=True)
class Population:
    """Finite mixture of agent classes with limit weights summing to one."""

    classes: tuple[AgentClassParams, ...]
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "weights", _as_vector(self.weights, "weights"))

    @property
    def k(self) -> int:
        return len(self.classes)

    @property
    def n(self) -> int:
        return self.classes[0].n


@dataclass(frozen=True)
class DestinationSet:
    """Destination points with the weight matrix of the terminal norm.

    Voronoi cell j is the set of states at least as close (in |.|_M) to
    points[j] as to any other point; ties go to the lowest index, so cell
    membership is a total deterministic function.
    """

    points: np.ndarray  # (l, n)
    metric: np.ndarray  # (n, n)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 1 and pts.shape[1] > 1 and np.asarray(self.points).ndim == 1:
            # a flat list of scalars is l scalar destinations, not one point
            pts = pts.T
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "metric", _as_matrix(self.metric, "metric"))

    @property
    def l(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[1]

    def distances_sq(self, x: np.ndarray) -> np.ndarray:
        """|x - p_j|_M^2 for every destination; x may be a batch (..., n)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        d = x[..., None, :] - self.points  # (..., l, n)
        return 0.5 * np.einsum("...ji,ik,...jk->...j", d, self.metric, d)

    def nearest(self, x) -> np.ndarray | int:
        """Index of the nearest destination (lowest index wins ties)."""
        d = self.distances_sq(x)
        idx = np.argmin(d, axis=-1)
        return int(idx) if idx.ndim == 0 else idx

    @cached_property
    def intervals_1d(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-destination cell intervals (lo, hi) for scalar states.

        Edges sit at midpoints of adjacent destinations; outer cells are
        half-lines.  Only valid for n == 1.
        """
        if self.n != 1:
            raise ValueError("cell intervals are only defined for scalar states")
        pts = self.points[:, 0]
        order = np.argsort(pts)
        edges = 0.5 * (pts[order][:-1] + pts[order][1:])
        lo = np.empty(self.l)
        hi = np.empty(self.l)
        lo[order] = np.concatenate(([-np.inf], edges))
        hi[order] = np.concatenate((edges, [np.inf]))
        return lo, hi


def nearest_destination(x, dest: DestinationSet) -> int:
    """Smallest index j minimizing |x - p_j|_M; deterministic on ties."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (dest.n,):
        raise ValueError(f"state shape {x.shape} incompatible with destination dim {dest.n}")
    return int(dest.nearest(x))


@dataclass(frozen=True)
class GaussianInitial:
    """Gaussian initial law N(mean, cov)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_vector(self.mean, "mean"))
        object.__setattr__(self, "cov", _as_matrix(self.cov, "cov"))

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=size)

    def density_1d(self, x: np.ndarray) -> np.ndarray:
        s2 = float(self.cov[0, 0])
        return np.exp(-0.5 * (x - self.mean[0]) ** 2 / s2) / np.sqrt(2 * np.pi * s2)


@dataclass(frozen=True)
class SampleInitial:
    """Empirical initial law given by a finite sample of states."""

    points: np.ndarray  # (N0, n)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float)).copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, self.points.shape[0], size=size)
        return self.points[idx]

    def density_1d(self, x: np.ndarray) -> np.ndarray:
        from scipy.stats import gaussian_kde

        return gaussian_kde(self.points[:, 0])(x)


InitialDistribution = Union[GaussianInitial, SampleInitial]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with n_steps intervals."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.horizon, self.n_steps + 1)
        t.flags.writeable = False
        return t


@dataclass
class ValidationReport:
    """Outcome of validate_params: every violated invariant, per class."""

    violations: list[str]
    etas: list[float]

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_for_errors(self) -> None:
        if self.violations:
            raise ValueError("invalid configuration:\n  " + "\n  ".join(self.violations))

    def __str__(self) -> str:
        if self.ok:
            etas = ", ".join(f"{e:.6g}" for e in self.etas)
            return f"OK (eta per class: {etas})"
        return "\n".join(self.violations)


def validate_params(pop: Population, dest: DestinationSet, grid: TimeGrid) -> ValidationReport:
    """Check every model invariant; report violations rather than fixing them.

    Derives eta per class (already stored on the params) and checks the
    control/noise alignment to a 1e-10 relative Frobenius tolerance.
    """
    v: list[str] = []
    etas: list[float] = []
    n0 = pop.classes[0].n if pop.classes else 0

    if abs(pop.weights.sum() - 1.0) > 1e-12:
        v.append(f"population weights sum to {pop.weights.sum():.15g}, not 1")
    if np.any(pop.weights <= 0):
        v.append("population weights must all be positive")
    if len(pop.classes) != len(pop.weights):
        v.append(f"{len(pop.classes)} classes but {len(pop.weights)} weights")

    for s, c in enumerate(pop.classes):
        tag = f"class {s}"
        if c.n != n0:
            v.append(f"{tag}: state dim {c.n} differs from class 0 ({n0})")
        if not _is_symmetric(c.R) or _min_eig(c.R) <= 0:
            v.append(f"{tag}: R not symmetric positive definite")
        if not _is_symmetric(c.M) or _min_eig(c.M) <= 0:
            v.append(f"{tag}: M not symmetric positive definite")
        if not _is_symmetric(c.Q) or _min_eig(c.Q) < -1e-12 * max(1.0, np.abs(c.Q).max()):
            v.append(f"{tag}: Q not psd")
        cond = np.linalg.cond(c.sigma)
        if not np.isfinite(cond) or cond > 1e12:
            v.append(f"{tag}: sigma not invertible (cond={cond:.3g})")
        etas.append(c.eta)
        res = c.alignment_residual()
        if not np.isfinite(c.eta) or c.eta <= 0 or res > ETA_REL_TOL:
            v.append(
                f"{tag}: control/noise alignment B R^-1 B' = eta sigma sigma' fails "
                f"(eta={c.eta:.6g}, relative Frobenius mismatch {res:.3g})"
            )
        if c.sigma.shape != (c.n, c.n):
            v.append(f"{tag}: sigma must be {c.n}x{c.n}")

    if dest.n != n0 and pop.classes:
        v.append(f"destination dim {dest.n} differs from state dim {n0}")
    for i in range(dest.l):
        for j in range(i + 1, dest.l):
            if np.array_equal(dest.points[i], dest.points[j]):
                v.append(f"destinations {i} and {j} coincide")

    return ValidationReport(violations=v, etas=etas)
