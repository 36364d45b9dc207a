"""Finite-horizon input-driven LQR in stacked (batch) quadratic form.

The system x_{t+1} = A x_t + B u_t + C s_t is unrolled over a horizon T
so that the total quadratic cost becomes an explicit quadratic in the
stacked action vector u = [u_0; ...; u_{T-1}].  Compilation produces the
Hessian K, the linear coupling terms L1 (initial state) and L2 (exogenous
series), and the regret weight Psi = L2' K^{-1} L2 that turns a forecast
error directly into extra control cost.

Stacking convention: block t of a stacked vector holds the step-t value,
so u in R^{mT} is [u_0; ...; u_{T-1}] and s in R^{pT} is [s_0; ...; s_{T-1}].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConditioningError, InvalidInputError

# Relative tolerances for the symmetry / positive-definiteness checks on Q, R.
SYMMETRY_RTOL = 1e-10
EIGENVALUE_RTOL = 1e-10


def _as_matrix(value, name: str) -> np.ndarray:
    mat = np.asarray(value, dtype=float)
    if mat.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-d matrix, got shape {mat.shape}")
    return mat


def _as_vector(value, name: str, size: int | None = None) -> np.ndarray:
    vec = np.asarray(value, dtype=float).reshape(-1)
    if size is not None and vec.size != size:
        raise InvalidInputError(f"{name} must have length {size}, got {vec.size}")
    return vec


def _check_symmetric_pd(mat: np.ndarray, name: str) -> None:
    scale = np.abs(mat).max()
    if scale == 0.0:
        raise InvalidInputError(f"{name} must be positive definite, got all zeros")
    if np.abs(mat - mat.T).max() > SYMMETRY_RTOL * scale:
        raise InvalidInputError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    if eigs.min() <= EIGENVALUE_RTOL * eigs.max():
        raise InvalidInputError(
            f"{name} must be positive definite (min eigenvalue {eigs.min():.3e})"
        )


@dataclass(frozen=True)
class LqrSystem:
    """Input-driven linear system with quadratic stage costs.

    Dynamics: x_{t+1} = A x_t + B u_t + C s_t for t = 0..T-1.
    Cost: sum_{t=0}^{T} x_t' Q x_t + sum_{t=0}^{T-1} u_t' R u_t.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: int
    x0: np.ndarray

    def __post_init__(self) -> None:
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n = A.shape[0]
        if A.shape != (n, n):
            raise InvalidInputError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != n:
            raise InvalidInputError(f"B must have {n} rows, got shape {B.shape}")
        if C.shape[0] != n:
            raise InvalidInputError(f"C must have {n} rows, got shape {C.shape}")
        if Q.shape != (n, n):
            raise InvalidInputError(f"Q must be {n}x{n}, got shape {Q.shape}")
        m = B.shape[1]
        if R.shape != (m, m):
            raise InvalidInputError(f"R must be {m}x{m}, got shape {R.shape}")
        _check_symmetric_pd(Q, "Q")
        _check_symmetric_pd(R, "R")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidInputError(f"T must be an integer >= 1, got {self.T}")
        x0 = _as_vector(self.x0, "x0", n)
        for name, value in (
            ("A", A), ("B", B), ("C", C), ("Q", Q), ("R", R), ("x0", x0),
        ):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "T", int(self.T))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True)
class CompiledLqr:
    """Stacked quadratic-form representation of an LqrSystem horizon.

    M[t] maps the stacked actions to x_{t+1}; N[t] does the same for the
    stacked exogenous series.  The total cost is
    u' K u + 2 u' (L1 x0 + L2 s) + const, so the unconstrained minimizer
    is u* = -K^{-1}(L1 x0 + L2 s) and the extra cost of acting on a
    forecast with error e is e' Psi e with Psi = L2' K^{-1} L2.
    """

    M: tuple
    N: tuple
    K: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    Psi: np.ndarray
    Kinv_L2: np.ndarray
    K_chol: np.ndarray  # lower Cholesky factor of K, reused by all solves
    T: int
    n: int
    m: int
    p: int

    def solve_K(self, rhs: np.ndarray) -> np.ndarray:
        """Solve K x = rhs using the cached factorization."""
        return scipy.linalg.cho_solve((self.K_chol, True), rhs)


@dataclass(frozen=True)
class Trajectory:
    """One simulated rollout: states x_{0:T}, actions u_{0:T-1}, total cost."""

    states: np.ndarray
    actions: np.ndarray
    cost: float


def compile_lqr(sys: LqrSystem) -> CompiledLqr:
    """Unroll the horizon and assemble K, L1, L2 and the regret weight Psi.

    Raises InvalidInputError for inconsistent systems (checked at
    construction) and ConditioningError if K cannot be factorized.
    """
    n, m, p, T = sys.n, sys.m, sys.p, sys.T
    A, B, C, Q, R = sys.A, sys.B, sys.C, sys.Q, sys.R

    powers = [np.eye(n)]
    for _ in range(T):
        powers.append(A @ powers[-1])

    M = []
    N = []
    for t in range(T):
        Mt = np.zeros((n, m * T))
        Nt = np.zeros((n, p * T))
        for k in range(t + 1):
            Mt[:, k * m : (k + 1) * m] = powers[t - k] @ B
            Nt[:, k * p : (k + 1) * p] = powers[t - k] @ C
        M.append(Mt)
        N.append(Nt)

    K = scipy.linalg.block_diag(*([R] * T))
    L1 = np.zeros((m * T, n))
    L2 = np.zeros((m * T, p * T))
    for t in range(T):
        MtQ = M[t].T @ Q
        K += MtQ @ M[t]
        L1 += MtQ @ powers[t + 1]
        L2 += MtQ @ N[t]
    K = 0.5 * (K + K.T)

    try:
        chol = scipy.linalg.cholesky(K, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise ConditioningError(f"stacked cost Hessian is not factorizable: {exc}") from exc

    kinv_l2 = scipy.linalg.cho_solve((chol, True), L2)
    psi = L2.T @ kinv_l2
    psi = 0.5 * (psi + psi.T)

    return CompiledLqr(
        M=tuple(M), N=tuple(N), K=K, L1=L1, L2=L2, Psi=psi,
        Kinv_L2=kinv_l2, K_chol=chol, T=T, n=n, m=m, p=p,
    )


def optimal_actions(c: CompiledLqr, x0, series) -> np.ndarray:
    """Cost-minimizing stacked actions for a given initial state and series."""
    x0 = _as_vector(x0, "x0", c.n)
    series = _as_vector(series, "series", c.p * c.T)
    return -c.solve_K(c.L1 @ x0 + c.L2 @ series)


def rollout(sys: LqrSystem, x0, actions, series) -> Trajectory:
    """Simulate the dynamics forward and accumulate the quadratic cost."""
    x0 = _as_vector(x0, "x0", sys.n)
    actions = _as_vector(actions, "actions", sys.m * sys.T)
    series = _as_vector(series, "series", sys.p * sys.T)

    states = np.zeros((sys.T + 1, sys.n))
    states[0] = x0
    cost = float(x0 @ sys.Q @ x0)
    u = actions.reshape(sys.T, sys.m)
    s = series.reshape(sys.T, sys.p)
    for t in range(sys.T):
        states[t + 1] = sys.A @ states[t] + sys.B @ u[t] + sys.C @ s[t]
        cost += float(states[t + 1] @ sys.Q @ states[t + 1])
        cost += float(u[t] @ sys.R @ u[t])
    return Trajectory(states=states, actions=u.copy(), cost=cost)


def rollout_cost(sys: LqrSystem, x0, actions, true_series) -> float:
    """Total quadratic cost of playing `actions` against the true series."""
    return rollout(sys, x0, actions, true_series).cost


def regret_quadratic(c: CompiledLqr, forecast, truth) -> float:
    """Extra control cost of acting on `forecast` instead of `truth`.

    Evaluates the closed form e' Psi e with e = forecast - truth.
    """
    forecast = _as_vector(forecast, "forecast", c.p * c.T)
    truth = _as_vector(truth, "truth", c.p * c.T)
    err = forecast - truth
    return float(err @ c.Psi @ err)


def regret_rollout(sys: LqrSystem, x0, forecast, truth, compiled: CompiledLqr | None = None) -> float:
    """Regret measured by simulation: cost of forecast-optimal actions minus
    cost of truth-optimal actions, both rolled out against the truth.

    Independent of the Psi quadratic form up to the shared action solve; used
    as the oracle that pins down the regret weight.
    """
    if compiled is None:
        compiled = compile_lqr(sys)
    u_hat = optimal_actions(compiled, x0, forecast)
    u_star = optimal_actions(compiled, x0, truth)
    return rollout_cost(sys, x0, u_hat, truth) - rollout_cost(sys, x0, u_star, truth)
