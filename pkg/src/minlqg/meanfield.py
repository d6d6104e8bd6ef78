"""Mean-field consistency: candidate paths, transport, and fixed points.

A candidate population behavior is summarized by a k x l row-stochastic
choice-distribution matrix (CDM) Lambda whose (s, j) entry is the
probability that a type-s agent finishes in destination j's cell.  Every
admissible mean path lies in the family

    xbar_Lambda(t) = P1 ( R1(t,0) Xbar(0) + R2(t) (Lambda kron I_n) p ),

where R1/R2 are built from the aggregate (nonsymmetric) Riccati equation

    dpi/dt = -A'pi - pi A + pi S pi + Q L,   pi(T) = M,

over the nk-dimensional stacked per-class means (L is the consensus-kernel
matrix I - 1_k kron P1).  Blow-up of this equation is a legitimate model
outcome ("no equilibrium decomposition on this horizon"), reported as
AggregateRiccatiError.

The map F sends Lambda to the CDM realized when every class best-responds
to xbar_Lambda; its fixed points are exactly the equilibria.  For scalar
states the class laws are propagated by an implicit finite-difference
Fokker-Planck solver (backward Euler in time, upwind advection, central
diffusion, zero-flux walls -- unconditionally stable and exactly mass
conserving); for n > 1 an Euler-Maruyama ensemble substitutes.  The scalar
binary uniform case reduces to a 1-d fixed point r = G(r) found by
bisection; the general search is damped Picard iteration with multi-start.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.linalg import solve_banded

from .lqg import RiccatiSolution, TransitionKernel, solve_riccati, transition_and_covariance
from .model import (DestinationSet, GaussianInitial, InitialDistribution,
                    Population, TimeGrid)
from .numerics import interp_series, rk4
from .policy import MinLqgPolicy

__all__ = [
    "AggregateRiccatiError", "MassConservationError", "AggregateModel",
    "PathBasis", "MeanFieldPath", "DensityField", "FpGrid", "MeanFieldProblem",
    "check_row_stochastic", "build_aggregate", "solve_aggregate_riccati",
    "solve_path_basis", "mean_path_for_cdm", "solve_fokker_planck",
    "eval_F", "eval_G", "bisection_fixed_point", "find_all_fixed_points",
    "damped_iteration", "multistart_fixed_points", "consistency_residual",
    "boundedness_sweep", "default_fp_grid",
]

BLOWUP_NORM = 1e12
COND_LIMIT = 1e10  # fundamental-solution inversion guard


class AggregateRiccatiError(RuntimeError):
    """The aggregate Riccati equation has no solution on this horizon."""


class MassConservationError(RuntimeError):
    """Transported density lost or gained more than the tolerated mass."""


def check_row_stochastic(Lam: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate entries in [0,1] and unit row sums; returns the array."""
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    if np.any(Lam < -tol) or np.any(Lam > 1 + tol):
        raise ValueError("CDM entries must lie in [0, 1]")
    rows = Lam.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > tol):
        raise ValueError(f"CDM rows must sum to 1 (got {rows})")
    return Lam


@dataclass(frozen=True)
class AggregateModel:
    """Block-diagonal stacked model over the k classes plus the coupling.

    P1 (n x nk) averages stacked per-class means with the population
    weights; L = I - 1_k kron P1 annihilates consensus vectors.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    M: np.ndarray
    sigma: np.ndarray
    P1: np.ndarray
    L: np.ndarray
    k: int
    n: int

    @cached_property
    def S(self) -> np.ndarray:
        return self.B @ np.linalg.solve(self.R, self.B.T)


def build_aggregate(pop: Population) -> AggregateModel:
    from scipy.linalg import block_diag

    n, k = pop.n, pop.k
    blocks = {name: block_diag(*[getattr(c, name) for c in pop.classes])
              for name in ("A", "B", "Q", "R", "M", "sigma")}
    P1 = np.kron(pop.weights[None, :], np.eye(n))           # (n, nk)
    L = np.eye(n * k) - np.kron(np.ones((k, 1)), P1)
    return AggregateModel(P1=P1, L=L, k=k, n=n, **blocks)


def solve_aggregate_riccati(agg: AggregateModel, grid: TimeGrid) -> np.ndarray:
    """Backward RK4 of the nonsymmetric aggregate Riccati equation."""
    A, S, QL, M = agg.A, agg.S, agg.Q @ agg.L, agg.M

    def f(t, pi):
        return -A.T @ pi - pi @ A + pi @ S @ pi + QL

    def check(y, t):
        norm = float(np.linalg.norm(y))
        if not np.isfinite(norm) or norm > BLOWUP_NORM:
            raise AggregateRiccatiError(
                f"aggregate Riccati equation blew up near t={t:.6g} (norm {norm:.3g}): "
                "no equilibrium path decomposition exists on this horizon"
            )

    return rk4(f, M, grid.times, backward=True, check=check)


@dataclass(frozen=True)
class PathBasis:
    """R1(t,0), R1(T,t) and R2(t) on the grid (nk x nk each)."""

    grid: TimeGrid
    R1: np.ndarray    # (n_steps+1, nk, nk), R1[0] = I
    R1_T: np.ndarray  # (n_steps+1, nk, nk), alpha-style R1(T, t)
    R2: np.ndarray    # (n_steps+1, nk, nk), R2[0] = 0


def solve_path_basis(agg: AggregateModel, pi: np.ndarray, grid: TimeGrid,
                     generator=None) -> PathBasis:
    """Forward RK4 for the path basis behind the candidate mean paths.

    R1(T,t) is formed by inverting the stored fundamental solution; if its
    conditioning exceeds 1e10 it is re-integrated backward directly.
    """
    nk = agg.n * agg.k
    S, M = agg.S, agg.M
    if generator is None:
        def generator(t):
            return agg.A - S @ interp_series(grid.times, pi, t)

    eye = np.eye(nk)
    R1 = rk4(lambda t, y: generator(t) @ y, eye, grid.times)
    if max(np.linalg.cond(R1[i]) for i in (len(R1) // 2, len(R1) - 1)) < COND_LIMIT:
        R1_T = np.einsum("ij,tjk->tik", R1[-1], np.linalg.inv(R1))
    else:
        R1_T = rk4(lambda t, y: -y @ generator(t), eye, grid.times, backward=True)

    def f2(t, R2):
        return generator(t) @ R2 + S @ interp_series(grid.times, R1_T, t).T @ M

    R2 = rk4(f2, np.zeros((nk, nk)), grid.times)
    return PathBasis(grid=grid, R1=R1, R1_T=R1_T, R2=R2)


@dataclass(frozen=True)
class MeanFieldPath:
    """Aggregated mean path and the stacked per-class means behind it."""

    grid: TimeGrid
    xbar: np.ndarray  # (n_steps+1, n)
    Xbar: np.ndarray  # (n_steps+1, nk)


def mean_path_for_cdm(agg: AggregateModel, basis: PathBasis, Lam: np.ndarray,
                      X0: np.ndarray, dest: DestinationSet) -> MeanFieldPath:
    """Candidate mean path xbar_Lambda for a row-stochastic CDM."""
    Lam = check_row_stochastic(Lam)
    p_stack = dest.points.reshape(-1)                       # (l n,)
    pull = np.kron(Lam, np.eye(agg.n)) @ p_stack            # (nk,)
    Xbar = basis.R1 @ X0 + basis.R2 @ pull
    xbar = Xbar @ agg.P1.T
    return MeanFieldPath(grid=basis.grid, xbar=xbar, Xbar=Xbar)


# -- Fokker-Planck transport (scalar states) ---------------------------------

@dataclass(frozen=True)
class FpGrid:
    """Uniform spatial grid for the scalar density solver."""

    x_min: float
    x_max: float
    n_nodes: int = 801

    @cached_property
    def x(self) -> np.ndarray:
        g = np.linspace(self.x_min, self.x_max, self.n_nodes)
        g.flags.writeable = False
        return g

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n_nodes - 1)


def default_fp_grid(dest: DestinationSet, init: InitialDistribution,
                    pop: Population, grid: TimeGrid, n_nodes: int = 801) -> FpGrid:
    """Domain [min p - 5(sigma sqrt(T) + std0), max p + 5(...)]."""
    sig = max(float(np.linalg.norm(c.sigma, 2)) for c in pop.classes)
    if isinstance(init, GaussianInitial):
        std0 = float(np.sqrt(np.max(np.diag(init.cov))))
    else:
        std0 = float(np.std(init.points))
    pad = 5.0 * (sig * np.sqrt(grid.horizon) + std0)
    pts = dest.points[:, 0]
    return FpGrid(x_min=float(pts.min() - pad), x_max=float(pts.max() + pad),
                  n_nodes=n_nodes)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative density values per time node on a uniform spatial grid.

    `clipped_mass` records the largest mass removed by the negativity clip
    in any single step (the implicit upwind scheme is an M-matrix, so this
    should stay at solver roundoff).
    """

    fpgrid: FpGrid
    times: np.ndarray
    values: np.ndarray  # (n_steps+1, n_nodes)
    clipped_mass: float = 0.0

    def mass(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.fpgrid.h

    def mean(self) -> np.ndarray:
        m = self.mass()
        return (self.values @ self.fpgrid.x) * self.fpgrid.h / m

    def snapshot(self, t: float) -> np.ndarray:
        return interp_series(self.times, self.values, t)

    def interval_mass(self, a: float, b: float, t_index: int = -1) -> float:
        """Mass in [a, b] at a time node (exact for the piecewise-linear
        interpolant of the stored values; infinite bounds clamp to the
        domain)."""
        x = self.fpgrid.x
        p = self.values[t_index]
        a = max(float(a), float(x[0]))
        b = min(float(b), float(x[-1]))
        if b <= a:
            return 0.0
        inside = (x > a) & (x < b)
        xs = np.concatenate(([a], x[inside], [b]))
        ps = np.concatenate(([np.interp(a, x, p)], p[inside], [np.interp(b, x, p)]))
        return float(np.trapezoid(ps, xs))

    def cell_masses(self, dest: DestinationSet, t_index: int = -1) -> np.ndarray:
        """Fraction of mass in each destination cell at a time node."""
        lo, hi = dest.intervals_1d
        masses = np.array([self.interval_mass(lo[j], hi[j], t_index)
                           for j in range(dest.l)])
        return masses / masses.sum()


def solve_fokker_planck(policy: MinLqgPolicy, init: InitialDistribution,
                        fpgrid: FpGrid, drift=None,
                        mass_tol: float = 1e-3) -> DensityField:
    """Implicit finite-difference transport of the class density.

    Backward-Euler in time with first-order upwind advection and central
    diffusion in flux form on cell interfaces; zero-flux boundaries make
    the scheme conserve mass to solver roundoff, and the resulting
    tridiagonal system is an M-matrix, so the density stays nonnegative.
    The drift is re-evaluated at every interface and step; the final step
    reuses the control at T - dt (the terminal control is identically zero,
    which would spuriously freeze the drift on one node).
    """
    times = policy.grid.times
    x, h = fpgrid.x, fpgrid.h
    x_mid = 0.5 * (x[:-1] + x[1:])
    if drift is None:
        drift = lambda t, xs: policy.drift(t, xs[:, None])[:, 0]
    D = 0.5 * float(policy.params.noise_cov[0, 0])

    p = init.density_1d(x).astype(float)
    p /= p.sum() * h
    out = np.empty((len(times), len(x)))
    out[0] = p

    n = len(x)
    band = np.zeros((3, n))
    horizon = policy.grid.horizon
    dt_grid = times[1] - times[0]
    clipped = 0.0
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        t_eval = min(times[i + 1], horizon - dt_grid)
        mu = np.asarray(drift(t_eval, x_mid), dtype=float)
        a_pos = np.maximum(mu, 0.0)
        a_neg = np.minimum(mu, 0.0)
        r = dt / h
        # interface fluxes F_{i+1/2} = a+ p_i + a- p_{i+1} - D (p_{i+1}-p_i)/h
        up = np.zeros(n); lo_ = np.zeros(n); di = np.ones(n)
        di[:-1] += r * (a_pos + D / h)
        up[1:] = r * (a_neg - D / h)
        di[1:] += r * (-a_neg + D / h)
        lo_[:-1] = -r * (a_pos + D / h)
        band[0], band[1], band[2] = up, di, lo_
        p = solve_banded((1, 1), band, p)
        neg = p < 0
        if np.any(neg):
            clipped = max(clipped, float(-p[neg].sum() * h))
            p = np.where(neg, 0.0, p)
        out[i + 1] = p
        mass = p.sum() * h
        if abs(mass - 1.0) > mass_tol:
            raise MassConservationError(
                f"density mass drifted to {mass:.6g} at t={times[i+1]:.6g}; "
                "refine the spatial grid or widen the domain"
            )
    return DensityField(fpgrid=fpgrid, times=times, values=out, clipped_mass=clipped)


# -- the map F and its fixed points ------------------------------------------

@dataclass(frozen=True)
class MeanFieldProblem:
    """A population, destination set, initial law and grids, with caches.

    The cached pieces (aggregate Riccati, path basis, per-class Riccati
    and transition kernels) do not depend on the candidate CDM, so
    repeated F evaluations only re-solve the tracking offsets and the
    transport.
    """

    pop: Population
    dest: DestinationSet
    init: InitialDistribution
    grid: TimeGrid
    fpgrid: FpGrid | None = None
    mc_paths: int = 20000
    mc_seed: int = 20210331

    def __post_init__(self):
        if self.fpgrid is None and self.pop.n == 1:
            object.__setattr__(self, "fpgrid",
                               default_fp_grid(self.dest, self.init, self.pop, self.grid))

    @property
    def n(self) -> int:
        return self.pop.n

    @property
    def is_scalar_binary(self) -> bool:
        c = self.pop.classes[0]
        return self.pop.k == 1 and self.n == 1 and self.dest.l == 2 and c.m == 1

    @cached_property
    def aggregate(self) -> AggregateModel:
        return build_aggregate(self.pop)

    @cached_property
    def aggregate_pi(self) -> np.ndarray:
        return solve_aggregate_riccati(self.aggregate, self.grid)

    @cached_property
    def basis(self) -> PathBasis:
        return solve_path_basis(self.aggregate, self.aggregate_pi, self.grid)

    @cached_property
    def X0(self) -> np.ndarray:
        # all classes share the initial law, so Xbar(0) stacks k copies
        return np.tile(np.asarray(self.init.mean, dtype=float), self.pop.k)

    @cached_property
    def class_riccati(self) -> tuple[RiccatiSolution, ...]:
        return tuple(solve_riccati(c, self.grid) for c in self.pop.classes)

    @cached_property
    def class_kernel(self) -> tuple[TransitionKernel, ...]:
        return tuple(transition_and_covariance(r, c)
                     for r, c in zip(self.class_riccati, self.pop.classes))

    def mean_path(self, Lam: np.ndarray) -> MeanFieldPath:
        return mean_path_for_cdm(self.aggregate, self.basis, Lam, self.X0, self.dest)

    def policy(self, s: int, xbar: np.ndarray) -> MinLqgPolicy:
        return MinLqgPolicy.solve(self.pop.classes[s], self.dest, self.grid, xbar,
                                  riccati=self.class_riccati[s],
                                  kernel=self.class_kernel[s],
                                  mc_seed=self.mc_seed + s)

    def policies(self, Lam: np.ndarray) -> list[MinLqgPolicy]:
        xbar = self.mean_path(Lam).xbar
        return [self.policy(s, xbar) for s in range(self.pop.k)]


def _ensemble_cell_masses(problem: MeanFieldProblem, policy: MinLqgPolicy,
                          s: int) -> np.ndarray:
    """Terminal cell frequencies of an Euler-Maruyama ensemble (n > 1)."""
    rng = np.random.Generator(np.random.Philox(
        key=np.array([problem.mc_seed, s], dtype=np.uint64)))
    X = problem.init.sample(problem.mc_paths, rng)
    times = problem.grid.times
    sig = policy.params.sigma
    for i in range(len(times) - 1):
        dt = times[i + 1] - times[i]
        X = X + policy.drift(times[i], X) * dt \
            + rng.standard_normal(X.shape) @ sig.T * np.sqrt(dt)
    cells = problem.dest.nearest(X)
    return np.bincount(cells, minlength=problem.dest.l) / X.shape[0]


def eval_F(problem: MeanFieldProblem, Lam: np.ndarray) -> np.ndarray:
    """One application of the map F: best-respond to xbar_Lambda, read off
    the realized CDM (class mass per destination cell at T)."""
    Lam = check_row_stochastic(Lam)
    policies = problem.policies(Lam)
    rows = []
    for s, pol in enumerate(policies):
        if problem.n == 1:
            dens = solve_fokker_planck(pol, problem.init, problem.fpgrid)
            rows.append(dens.cell_masses(problem.dest))
        else:
            rows.append(_ensemble_cell_masses(problem, pol, s))
    return np.array(rows)


def eval_G(problem: MeanFieldProblem, r: float) -> float:
    """G(r) = first entry of F applied to the binary CDM (r, 1-r)."""
    if not problem.is_scalar_binary:
        raise ValueError("G(r) requires a scalar binary uniform scenario "
                         "(k=1, n=m=1, l=2)")
    return float(eval_F(problem, np.array([[r, 1.0 - r]]))[0, 0])


@dataclass
class BisectionResult:
    r: float
    trace: list[tuple[float, float]]  # (r, G(r)) evaluations in order


def bisection_fixed_point(problem: MeanFieldProblem, tol: float = 1e-3,
                          max_iter: int = 25) -> BisectionResult:
    """Bisection on H(r) = G(r) - r over [0, 1].

    H(0) >= 0 and H(1) <= 0 because G maps [0,1] into itself, so a bracket
    always exists.
    """
    trace: list[tuple[float, float]] = []

    def H(r: float) -> float:
        g = eval_G(problem, r)
        trace.append((r, g))
        return g - r

    a, b = 0.0, 1.0
    ha = H(a)
    if ha <= 0.0:
        return BisectionResult(r=a, trace=trace)
    hb = H(b)
    if hb >= 0.0:
        return BisectionResult(r=b, trace=trace)
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        hm = H(mid)
        if hm == 0.0:
            return BisectionResult(r=mid, trace=trace)
        if hm > 0.0:
            a = mid
        else:
            b = mid
        if b - a < tol:
            break
    return BisectionResult(r=0.5 * (a + b), trace=trace)


def _refine_bracket(problem, a, b, ha, hb, tol):
    for _ in range(60):
        if b - a < tol:
            break
        mid = 0.5 * (a + b)
        hm = eval_G(problem, mid) - mid
        if hm == 0.0:
            return mid
        if np.sign(hm) == np.sign(ha):
            a, ha = mid, hm
        else:
            b, hb = mid, hm
    return 0.5 * (a + b)


def find_all_fixed_points(problem: MeanFieldProblem, n_scan: int = 41,
                          tol: float = 1e-3, n_jobs: int = 1) -> list[float]:
    """Scan H(r) = G(r) - r on a uniform grid, refine every sign change.

    Returns fixed points sorted and deduplicated within 2*tol.  Scan points
    are independent; n_jobs > 1 evaluates them on a thread pool (results
    are collected by index, so parallelism never changes them).
    """
    rs = np.linspace(0.0, 1.0, n_scan)
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        problem.basis, problem.class_kernel  # build shared caches up front
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            gs = list(pool.map(lambda r: eval_G(problem, r), rs))
        hs = np.array(gs) - rs
    else:
        hs = np.array([eval_G(problem, r) - r for r in rs])
    roots: list[float] = []
    for i, (r, hv) in enumerate(zip(rs, hs)):
        if abs(hv) < 1e-12:
            roots.append(float(r))
    for i in range(len(rs) - 1):
        if hs[i] == 0.0 or hs[i + 1] == 0.0:
            continue
        if np.sign(hs[i]) != np.sign(hs[i + 1]):
            roots.append(_refine_bracket(problem, rs[i], rs[i + 1],
                                         hs[i], hs[i + 1], tol))
    roots.sort()
    dedup: list[float] = []
    for r in roots:
        if not dedup or r - dedup[-1] > 2 * tol:
            dedup.append(r)
    return dedup


@dataclass
class IterationResult:
    Lam: np.ndarray
    converged: bool
    n_iter: int
    residual: float  # max-entry |F(Lam) - Lam| at the returned point


def damped_iteration(problem: MeanFieldProblem, Lam0: np.ndarray,
                     omega: float = 0.5, tol: float = 1e-4,
                     max_iter: int = 200) -> IterationResult:
    """Damped Picard iteration Lam <- (1-w) Lam + w F(Lam).

    Converged when the max-entry change drops below tol; the result is then
    re-verified against |F(Lam*) - Lam*|_max < 5 tol.  Without a
    convergence guarantee, non-convergence returns the best iterate with a
    warning.
    """
    Lam = check_row_stochastic(Lam0).copy()
    best, best_res = Lam, np.inf
    for it in range(1, max_iter + 1):
        F = eval_F(problem, Lam)
        res = float(np.abs(F - Lam).max())
        if res < best_res:
            best, best_res = Lam, res
        if float(np.abs(omega * (F - Lam)).max()) < tol:
            Lam = (1 - omega) * Lam + omega * F
            final = float(np.abs(eval_F(problem, Lam) - Lam).max())
            return IterationResult(Lam=Lam, converged=final < 5 * tol,
                                   n_iter=it, residual=final)
        Lam = (1 - omega) * Lam + omega * F
    warnings.warn(f"damped iteration did not converge in {max_iter} steps "
                  f"(best residual {best_res:.3g}); returning best iterate")
    return IterationResult(Lam=best, converged=False, n_iter=max_iter,
                           residual=best_res)


def multistart_fixed_points(problem: MeanFieldProblem, omega: float = 0.5,
                            tol: float = 1e-4, max_iter: int = 200) -> list[np.ndarray]:
    """Damped iteration from every vertex CDM and the barycenter.

    Returns the distinct converged fixed points (max-entry distance > 2 tol).
    """
    k, l = problem.pop.k, problem.dest.l
    starts = [np.full((k, l), 1.0 / l)]
    for j in range(l):
        Lam = np.zeros((k, l))
        Lam[:, j] = 1.0
        starts.append(Lam)
    found: list[np.ndarray] = []
    for Lam0 in starts:
        res = damped_iteration(problem, Lam0, omega=omega, tol=tol, max_iter=max_iter)
        if res.converged and all(np.abs(res.Lam - f).max() > 2 * tol for f in found):
            found.append(res.Lam)
    return found


def consistency_residual(problem: MeanFieldProblem, Lam: np.ndarray) -> float:
    """Scale-free gap between the tracked path and the realized mean.

    sup_t | sum_s alpha_s mean_s(t) - xbar_Lambda(t) | / (1 + max_t |xbar|),
    where mean_s is the mean of the transported class-s density.
    """
    if problem.n != 1:
        raise ValueError("consistency residual needs the scalar transport solver")
    Lam = check_row_stochastic(Lam)
    path = problem.mean_path(Lam)
    agg_mean = np.zeros(len(problem.grid.times))
    for s, w in enumerate(problem.pop.weights):
        pol = problem.policy(s, path.xbar)
        dens = solve_fokker_planck(pol, problem.init, problem.fpgrid)
        agg_mean += w * dens.mean()
    gap = np.abs(agg_mean - path.xbar[:, 0]).max()
    return float(gap / (1.0 + np.abs(path.xbar).max()))


def boundedness_sweep(problem: MeanFieldProblem, M_values) -> list[dict]:
    """L2 norms of the candidate paths as the terminal weight M varies.

    For each M the scenario is re-built and the norm (int |xbar|^2 dt)^1/2
    is maximized over the vertex CDMs and the barycenter.  Uniform
    populations only.
    """
    if problem.pop.k != 1:
        raise ValueError("boundedness sweep is defined for uniform populations")
    rows = []
    l = problem.dest.l
    cdms = [np.full((1, l), 1.0 / l)] + \
        [np.eye(l)[j][None, :] for j in range(l)]
    for M in M_values:
        prob_M = with_terminal_weight(problem, float(M))
        worst = 0.0
        for Lam in cdms:
            xbar = prob_M.mean_path(Lam).xbar
            sq = np.trapezoid((xbar ** 2).sum(axis=1), prob_M.grid.times)
            worst = max(worst, float(np.sqrt(sq)))
        rows.append({"M": float(M), "max_l2_norm": worst})
    return rows


def with_terminal_weight(problem: MeanFieldProblem, M: float) -> MeanFieldProblem:
    """Clone a problem with the terminal weight replaced everywhere."""
    n = problem.pop.n
    Mmat = M * np.eye(n)
    classes = tuple(replace(c, M=Mmat) for c in problem.pop.classes)
    pop = Population(classes=classes, weights=problem.pop.weights)
    dest = DestinationSet(points=problem.dest.points, metric=Mmat)
    return replace(problem, pop=pop, dest=dest)
