"""Incentive and combination-weight allocation by Alternate Convex Search.

The controller combines n_src private forecasts element-wise with
nonnegative coefficients that sum to one per coordinate, and splits a
total incentive budget across the sources.  Expected regret is

    sum_i c_i' [Psi  *  (Sigma_i + var_i(rho_i) I)] c_i

(* is the element-wise product), which is convex in the coefficients for
fixed incentives and convex in the incentives for fixed coefficients.
Each block is minimized by projected gradient descent with backtracking;
alternation descends monotonically and stops once the objective change
falls below a tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .forecast import SourceProfile
from .privacy import laplace_variance, laplace_variance_slope

COEFF_SUM_ATOL = 1e-9
NONNEG_ATOL = 1e-12
KKT_TOL = 1e-6
SUBPROBLEM_ITER_CAP = 10_000
ACS_ITER_CAP = 500


@dataclass(frozen=True)
class Allocation:
    """Per-source combination coefficients (n_src, dim) and incentives (n_src,)."""

    coeffs: np.ndarray
    incentives: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        incentives = np.asarray(self.incentives, dtype=float).reshape(-1)
        if coeffs.shape[0] != incentives.size:
            raise InvalidInputError(
                f"{coeffs.shape[0]} coefficient rows vs {incentives.size} incentives"
            )
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "incentives", incentives)

    @property
    def n_src(self) -> int:
        return self.incentives.size

    @property
    def rho_total(self) -> float:
        return float(self.incentives.sum())


def validate_allocation(alloc: Allocation, rho_total: float | None = None) -> None:
    """Check feasibility: columns sum to one, budget met, everything nonnegative."""
    col_sums = alloc.coeffs.sum(axis=0)
    if np.abs(col_sums - 1.0).max() > COEFF_SUM_ATOL:
        raise InvalidInputError(
            f"coefficients must sum to 1 per coordinate (worst {col_sums[np.argmax(np.abs(col_sums - 1.0))]:.12f})"
        )
    if alloc.coeffs.min() < -NONNEG_ATOL:
        raise InvalidInputError(f"coefficients must be nonnegative, min {alloc.coeffs.min():.3e}")
    if alloc.incentives.min() < -NONNEG_ATOL:
        raise InvalidInputError(f"incentives must be nonnegative, min {alloc.incentives.min():.3e}")
    if rho_total is not None and abs(alloc.incentives.sum() - rho_total) > COEFF_SUM_ATOL:
        raise InvalidInputError(
            f"incentives sum to {alloc.incentives.sum():.12f}, expected {rho_total}"
        )


@dataclass(frozen=True)
class SubproblemResult:
    """Best iterate of one convex block solve plus convergence diagnostics."""

    x: np.ndarray
    converged: bool
    iterations: int
    kkt_residual: float


@dataclass(frozen=True)
class AcsReport:
    """Outcome of one Alternate Convex Search run."""

    allocation: Allocation
    objective_trace: tuple
    iterations: int
    converged: bool
    failure: str | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def uniform_allocation(n_src: int, rho_total: float, dim: int) -> Allocation:
    """Equal coefficients 1/n_src and equal incentives rho_total/n_src."""
    if n_src < 1:
        raise InvalidInputError(f"n_src must be >= 1, got {n_src}")
    if rho_total < 0:
        raise InvalidInputError(f"rho_total must be >= 0, got {rho_total}")
    coeffs = np.full((n_src, dim), 1.0 / n_src)
    incentives = np.full(n_src, rho_total / n_src)
    return Allocation(coeffs=coeffs, incentives=incentives)


def combine_forecasts(coeffs, forecasts) -> np.ndarray:
    """Element-wise linear combination sum_i c_i * forecast_i."""
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    forecasts = np.atleast_2d(np.asarray(forecasts, dtype=float))
    if coeffs.shape != forecasts.shape:
        raise InvalidInputError(
            f"coefficients {coeffs.shape} and forecasts {forecasts.shape} must match"
        )
    return (coeffs * forecasts).sum(axis=0)


def project_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of v onto {x >= 0, sum x = total}."""
    if not total > 0:
        raise InvalidInputError(f"total must be > 0, got {total}")
    v = np.asarray(v, dtype=float).reshape(-1)
    return _project_columns(v[:, None], total)[:, 0]


def _project_columns(V: np.ndarray, total: float) -> np.ndarray:
    """Project each column of V onto the scaled simplex (sort-based, exact)."""
    k = V.shape[0]
    u = np.sort(V, axis=0)[::-1]
    cumulative = np.cumsum(u, axis=0) - total
    counts = np.arange(1, k + 1)[:, None]
    mask = u - cumulative / counts > 0
    last = k - 1 - np.argmax(mask[::-1], axis=0)
    tau = cumulative[last, np.arange(V.shape[1])] / (last + 1)
    return np.maximum(V - tau, 0.0)


class _RegretModel:
    """Precomputed pieces of the expected-regret objective.

    Splitting Psi * Sigma_i (fixed) from the var(rho_i)-scaled diagonal
    makes block objectives and gradients cheap inside the solvers.
    """

    def __init__(self, psi: np.ndarray, profiles: Sequence[SourceProfile]):
        psi = np.asarray(psi, dtype=float)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise InvalidInputError(f"regret weight must be square, got {psi.shape}")
        if not profiles:
            raise InvalidInputError("need at least one source profile")
        for prof in profiles:
            if prof.sigma.shape != psi.shape:
                raise InvalidInputError(
                    f"source covariance {prof.sigma.shape} must match weight {psi.shape}"
                )
        self.dim = psi.shape[0]
        self.n_src = len(profiles)
        self.psi_diag = np.diag(psi).copy()
        self.psi_sigma = [psi * prof.sigma for prof in profiles]
        self.privacy = [prof.privacy for prof in profiles]

    def variances(self, incentives: np.ndarray) -> np.ndarray:
        return np.array(
            [laplace_variance(rho, prof) for rho, prof in zip(incentives, self.privacy)]
        )

    def objective(self, coeffs: np.ndarray, incentives: np.ndarray) -> float:
        variances = self.variances(incentives)
        total = 0.0
        for i in range(self.n_src):
            ci = coeffs[i]
            total += ci @ self.psi_sigma[i] @ ci
            total += variances[i] * (self.psi_diag @ (ci * ci))
        return float(total)

    def coeff_objective(self, coeffs: np.ndarray, variances: np.ndarray) -> float:
        total = 0.0
        for i in range(self.n_src):
            ci = coeffs[i]
            total += ci @ self.psi_sigma[i] @ ci + variances[i] * (self.psi_diag @ (ci * ci))
        return float(total)

    def coeff_gradient(self, coeffs: np.ndarray, variances: np.ndarray) -> np.ndarray:
        grad = np.empty_like(coeffs)
        for i in range(self.n_src):
            grad[i] = 2.0 * (self.psi_sigma[i] @ coeffs[i] + variances[i] * self.psi_diag * coeffs[i])
        return grad

    def diag_weights(self, coeffs: np.ndarray) -> np.ndarray:
        """Per-source weight on its noise variance: a_i = sum_j Psi_jj c_i[j]^2."""
        return coeffs**2 @ self.psi_diag

    def incentive_objective(self, weights: np.ndarray, incentives: np.ndarray) -> float:
        return float(weights @ self.variances(incentives))

    def incentive_gradient(self, weights: np.ndarray, incentives: np.ndarray) -> np.ndarray:
        slopes = np.array(
            [laplace_variance_slope(rho, prof) for rho, prof in zip(incentives, self.privacy)]
        )
        return weights * slopes


def expected_regret(psi, profiles: Sequence[SourceProfile], alloc: Allocation) -> float:
    """Expected extra control cost of the allocation under the error model.

    Direct evaluation of sum_i c_i' [Psi * (Sigma_i + var_i I)] c_i; the
    solvers use an equivalent precomputed form, which tests cross-check
    against this one.
    """
    psi = np.asarray(psi, dtype=float)
    validate_allocation(alloc)
    if len(profiles) != alloc.n_src:
        raise InvalidInputError(f"{len(profiles)} profiles vs {alloc.n_src} sources")
    total = 0.0
    for prof, ci, rho in zip(profiles, alloc.coeffs, alloc.incentives):
        if rho < 0:
            raise InvalidInputError(f"incentive must be >= 0, got {rho}")
        effective = prof.sigma + laplace_variance(rho, prof.privacy) * np.eye(psi.shape[0])
        total += ci @ (psi * effective) @ ci
    return float(total)


def _projected_descent(x0, value, gradient, project, tol=KKT_TOL, cap=SUBPROBLEM_ITER_CAP):
    """Monotone projected gradient descent with backtracking line search.

    Stops when the unit-step projected-gradient mapping norm (the KKT
    surrogate reported in the result) falls below tol.
    """
    x = project(x0)
    fx = value(x)
    step = 1.0
    residual = np.inf
    for it in range(1, cap + 1):
        g = gradient(x)
        residual = float(np.linalg.norm(x - project(x - g)))
        if residual <= tol:
            return SubproblemResult(x=x, converged=True, iterations=it - 1, kkt_residual=residual)
        while True:
            candidate = project(x - step * g)
            delta = candidate - x
            sq = float(delta.ravel() @ delta.ravel())
            if sq > 0.0:
                f_cand = value(candidate)
                if f_cand <= fx + float(g.ravel() @ delta.ravel()) + sq / (2.0 * step):
                    break
            step *= 0.5
            if step < 1e-18:
                # numerically stuck; report honestly against the KKT surrogate
                return SubproblemResult(x=x, converged=residual <= tol, iterations=it, kkt_residual=residual)
        x, fx = candidate, f_cand
        step = min(step * 2.0, 1e12)
    residual = float(np.linalg.norm(x - project(x - gradient(x))))
    return SubproblemResult(x=x, converged=residual <= tol, iterations=cap, kkt_residual=residual)


def coefficient_kkt_residual(model: _RegretModel, coeffs: np.ndarray, incentives: np.ndarray) -> float:
    """Unit-step projected-gradient mapping norm of the coefficient block."""
    variances = model.variances(incentives)
    g = model.coeff_gradient(coeffs, variances)
    return float(np.linalg.norm(coeffs - _project_columns(coeffs - g, 1.0)))


def incentive_kkt_residual(model: _RegretModel, coeffs: np.ndarray, incentives: np.ndarray, rho_total: float) -> float:
    """Unit-step projected-gradient mapping norm of the incentive block."""
    if rho_total <= 0:
        return 0.0
    weights = model.diag_weights(coeffs)
    g = model.incentive_gradient(weights, incentives)
    return float(np.linalg.norm(incentives - project_simplex(incentives - g, rho_total)))


def solve_coefficients(psi, profiles: Sequence[SourceProfile], incentives, init_coeffs,
                       tol: float = KKT_TOL, cap: int = SUBPROBLEM_ITER_CAP) -> SubproblemResult:
    """Minimize expected regret over the coefficients for fixed incentives.

    Convex QP over one unit simplex per coordinate (across sources); the
    result's objective never exceeds the initial point's.
    """
    model = psi if isinstance(psi, _RegretModel) else _RegretModel(psi, profiles)
    incentives = np.asarray(incentives, dtype=float).reshape(-1)
    if incentives.size != model.n_src:
        raise InvalidInputError(f"expected {model.n_src} incentives, got {incentives.size}")
    variances = model.variances(incentives)
    init = np.atleast_2d(np.asarray(init_coeffs, dtype=float))
    if init.shape != (model.n_src, model.dim):
        raise InvalidInputError(f"init coefficients must be {(model.n_src, model.dim)}, got {init.shape}")
    return _projected_descent(
        init,
        value=lambda c: model.coeff_objective(c, variances),
        gradient=lambda c: model.coeff_gradient(c, variances),
        project=lambda c: _project_columns(c, 1.0),
        tol=tol, cap=cap,
    )


def solve_incentives(psi, profiles: Sequence[SourceProfile], coeffs, rho_total: float, init_incentives,
                     tol: float = KKT_TOL, cap: int = SUBPROBLEM_ITER_CAP) -> SubproblemResult:
    """Minimize expected regret over the incentive split for fixed coefficients.

    Separable convex objective sum_i a_i var_i(rho_i) over the scaled
    simplex {rho >= 0, sum rho = rho_total}.
    """
    model = psi if isinstance(psi, _RegretModel) else _RegretModel(psi, profiles)
    if rho_total < 0:
        raise InvalidInputError(f"rho_total must be >= 0, got {rho_total}")
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if coeffs.shape != (model.n_src, model.dim):
        raise InvalidInputError(f"coefficients must be {(model.n_src, model.dim)}, got {coeffs.shape}")
    if rho_total == 0.0:
        zeros = np.zeros(model.n_src)
        return SubproblemResult(x=zeros, converged=True, iterations=0, kkt_residual=0.0)
    weights = model.diag_weights(coeffs)
    init = np.asarray(init_incentives, dtype=float).reshape(-1)
    if init.size != model.n_src:
        raise InvalidInputError(f"expected {model.n_src} incentives, got {init.size}")
    return _projected_descent(
        init,
        value=lambda r: model.incentive_objective(weights, r),
        gradient=lambda r: model.incentive_gradient(weights, r),
        project=lambda r: project_simplex(r, rho_total),
        tol=tol, cap=cap,
    )


def acs(psi, profiles: Sequence[SourceProfile], rho_total: float, init: Allocation,
        eta: float = 1e-8, avg_window: int = 1, max_iters: int = ACS_ITER_CAP,
        subproblem_tol: float = KKT_TOL) -> AcsReport:
    """Alternate Convex Search from a feasible starting allocation.

    Each round minimizes the incentive block, then the coefficient block,
    and stops once the objective change (averaged over the last
    `avg_window` rounds) drops below eta.  The trace is non-increasing and
    the final objective never exceeds the starting one.
    """
    model = _RegretModel(psi, profiles)
    validate_allocation(init, rho_total)
    if init.coeffs.shape != (model.n_src, model.dim):
        raise InvalidInputError(
            f"init coefficients must be {(model.n_src, model.dim)}, got {init.coeffs.shape}"
        )
    if avg_window < 1:
        raise InvalidInputError(f"avg_window must be >= 1, got {avg_window}")

    coeffs = init.coeffs.copy()
    incentives = init.incentives.copy()
    trace = [model.objective(coeffs, incentives)]
    gaps: list[float] = [abs(trace[0] - 0.0)]  # objective is compared against 0 before the first round

    iterations = 0
    converged = False
    failure = None
    while np.mean(gaps[-avg_window:]) >= eta:
        if iterations >= max_iters:
            break
        rho_step = solve_incentives(model, profiles, coeffs, rho_total, incentives,
                                    tol=subproblem_tol)
        incentives = rho_step.x
        coeff_step = solve_coefficients(model, profiles, incentives, coeffs,
                                        tol=subproblem_tol)
        coeffs = coeff_step.x
        trace.append(model.objective(coeffs, incentives))
        gaps.append(abs(trace[-1] - trace[-2]))
        iterations += 1
        if not (rho_step.converged and coeff_step.converged):
            failure = (
                f"subproblem hit iteration cap at round {iterations} "
                f"(incentives kkt {rho_step.kkt_residual:.2e}, coefficients kkt {coeff_step.kkt_residual:.2e})"
            )
            break
    else:
        converged = True

    allocation = Allocation(coeffs=coeffs, incentives=incentives)
    return AcsReport(
        allocation=allocation,
        objective_trace=tuple(trace),
        iterations=iterations,
        converged=converged and failure is None,
        failure=failure,
    )
