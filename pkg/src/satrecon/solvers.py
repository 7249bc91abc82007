"""ADMM solvers for mixed analog / one-bit sparse recovery.

Every model shares the splitting

    min  R(x) + 1/2 sum_{psi=0} (u_i'x - p_i)^2 + lam sum_{psi=1} L_tau(e_i) + h(z)
    s.t. e_i = y_i (s_i - u_i'x)   (psi_i = 1),    z = x

where ``R`` is the sparsity prior (l1 here, TV for CT images) and ``h`` is
either the indicator of the ball ``|z| <= c`` (CSC) or ``gamma/2 |z|^2``
(CSR).  ``e_i > 0`` measures how far a saturated reading sits on the wrong
side of its rail.  Updates run in the order e, z, x, alpha, beta.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .prox import pinball_loss, pinball_shrink, project_l2_ball, shrink_m1bitcsr_z, soft_threshold
from .sensing import SaturatedObservations

__all__ = [
    "SolverParams",
    "AdmmState",
    "Solution",
    "MixedProblem",
    "default_hyperparams",
    "power_iteration",
    "fista_x_subproblem",
    "admm",
    "solve_m1bitcsc",
    "solve_m1bitcsr",
    "solve_lasso",
    "solve_rdcs",
    "model_objective",
    "RDCS_LAMBDA_SCALE",
]

RDCS_LAMBDA_SCALE = 1e6


@dataclass(frozen=True)
class SolverParams:
    mu: float = 0.1
    lam: float = 1.0
    gamma: float = 1e-4
    c: float = 1.0
    tau: float = 0.0
    theta1: float = 1.0
    theta2: float = 1.0
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    max_outer: int = 2000
    fista_iters: int = 50
    fista_tol: float = 1e-10

    def __post_init__(self):
        if self.mu < 0 or self.lam < 0:
            raise ValueError("mu and lam must be non-negative")
        if not (self.theta1 > 0 and self.theta2 > 0):
            raise ValueError("theta1 and theta2 must be positive")
        if self.gamma < 0 or not self.c > 0:
            raise ValueError("need gamma >= 0 and c > 0")
        if not -1.0 <= self.tau <= 0.0:
            raise ValueError("tau must lie in [-1, 0]")
        if self.max_outer < 1 or self.fista_iters < 1:
            raise ValueError("iteration caps must be positive")

    def updated(self, **kw) -> "SolverParams":
        return replace(self, **kw)


@dataclass
class AdmmState:
    x: np.ndarray
    e: np.ndarray
    z: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    iter: int = 0
    residuals: tuple = (np.inf, np.inf, np.inf)

    @classmethod
    def zeros(cls, d: int, m: int) -> "AdmmState":
        return cls(np.zeros(d), np.zeros(m), np.zeros(d), np.zeros(m), np.zeros(d))


@dataclass
class Solution:
    x_hat: np.ndarray
    objective: float
    iters: int
    converged: bool
    wall_time: float
    state: Optional[AdmmState] = field(default=None, repr=False)
    trace: list = field(default_factory=list, repr=False)


class MixedProblem:
    """Measurement rows split into analog (psi=0) and one-bit (psi=1) blocks.

    ``U`` is either a dense ``m x d`` array of sensing vectors or anything
    with ``@`` (a scipy sparse matrix); ``U.T`` must be available.
    """

    def __init__(self, U, obs: SaturatedObservations):
        rows = getattr(U, "rows", U)
        if rows.shape[0] != obs.m:
            raise ValueError("observation count does not match the sensing matrix")
        self.U = rows
        self.obs = obs
        self.m, self.d = rows.shape
        self.psi = obs.psi
        self.ana = ~obs.psi
        self.sat_idx = np.flatnonzero(obs.psi)
        self.y = obs.y.astype(float)
        self.s = obs.s
        # weighted least-squares target / weights used by the x-step
        self._A = rows

    def apply(self, x):
        return self._A @ x

    def adjoint(self, v):
        return self._A.T @ v

    def margins(self, Ux):
        """``y_i (s_i - u_i'x)`` on saturated rows, 0 elsewhere."""
        out = np.zeros(self.m)
        idx = self.sat_idx
        out[idx] = self.y[idx] * (self.s[idx] - Ux[idx])
        return out


def default_hyperparams(m: int, n: int) -> tuple[float, float, float]:
    """Heuristic ``(tau, lam, gamma)`` for ``m`` readings of which ``n`` saturate.

    ``n = 0`` disables the one-bit terms (tau = lam = 0).
    """
    if m < 1 or n < 0:
        raise ValueError("need m >= 1 and n >= 0")
    gamma = 1e-4
    if n == 0:
        return 0.0, 0.0, gamma
    return -n / (5.0 * m), m / (100.0 * n), gamma


def power_iteration(matvec: Callable, d: int, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator."""
    v = np.random.default_rng(seed).standard_normal(d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam = nrm
        v = w / nrm
    return float(lam)


class _Quadratic:
    """``f(x) = 1/2 |W^(1/2)(Ux - r)|^2 + theta2/2 |x - w|^2`` with fixed row weights."""

    def __init__(self, prob: MixedProblem, theta1: float, theta2: float, use_gram: Optional[bool] = None):
        self.prob = prob
        self.theta2 = theta2
        wts = np.where(prob.psi, theta1, 1.0)
        self.wts = wts
        dense = isinstance(prob.U, np.ndarray)
        if use_gram is None:
            use_gram = dense and prob.d <= 2 * prob.m
        self.gram = (prob.U.T * wts) @ prob.U if use_gram else None
        if self.gram is not None:
            hess = lambda v: self.gram @ v + theta2 * v  # noqa: E731
        else:
            hess = lambda v: prob.adjoint(wts * prob.apply(v)) + theta2 * v  # noqa: E731
        self.L = power_iteration(hess, prob.d) * 1.01

    def linear_term(self, r):
        return self.prob.adjoint(self.wts * r)

    def grad(self, x, h, w):
        if self.gram is not None:
            g = self.gram @ x - h
        else:
            g = self.prob.adjoint(self.wts * self.prob.apply(x)) - h
        return g + self.theta2 * (x - w)

    def value(self, x, r, w):
        res = self.prob.apply(x) - r
        return 0.5 * float(np.sum(self.wts * res * res)) + 0.5 * self.theta2 * float(np.sum((x - w) ** 2))


def _x_targets(prob: MixedProblem, obs_p, e, alpha, z, beta, theta1, theta2):
    """Row targets ``r`` and centre ``w`` of the x-step quadratic."""
    r = np.array(obs_p, dtype=float)
    idx = prob.sat_idx
    # theta1/2 (e - y(s - Ux) + alpha/theta1)^2 == theta1/2 (Ux - (s - y(e + alpha/theta1)))^2
    r[idx] = prob.s[idx] - prob.y[idx] * (e[idx] + alpha[idx] / theta1)
    # beta'(z - x) + theta2/2 |z - x|^2 == theta2/2 |x - (z + beta/theta2)|^2 + const
    w = z + beta / theta2
    return r, w


def fista_x_subproblem(U, p, psi, y, s, e, z, alpha, beta, params: SolverParams, x0=None, quad=None):
    """Approximately minimize the x-step objective

        mu|x|_1 + 1/2 sum_{psi=0}(u'x - p)^2 + theta2/2 |x - z - beta/theta2|^2
                + theta1/2 sum_{psi=1}(e - y(s - u'x) + alpha/theta1)^2

    by FISTA with step ``1/L`` and gradient-based momentum restart.
    """
    if quad is None:
        prob = U if isinstance(U, MixedProblem) else MixedProblem(U, SaturatedObservations(p, psi, y, s))
        quad = _Quadratic(prob, params.theta1, params.theta2)
    prob = quad.prob
    r, w = _x_targets(prob, p, e, alpha, z, beta, params.theta1, params.theta2)
    x0 = np.zeros(prob.d) if x0 is None else x0
    return _fista_l1(quad, r, w, params.mu, x0, params.fista_iters, params.fista_tol)


def _fista_l1(quad: _Quadratic, r, w, mu, x0, iters, tol):
    h = quad.linear_term(r)
    if quad.L == 0:
        return soft_threshold(w, mu / quad.theta2) if quad.theta2 > 0 else np.zeros_like(x0)
    step = 1.0 / quad.L
    x = x0.copy()
    v = x.copy()
    t = 1.0
    for _ in range(iters):
        x_new = soft_threshold(v - step * quad.grad(v, h, w), mu * step)
        dx = x_new - x
        if np.dot(v - x_new, dx) > 0:
            t = 1.0
            v = x_new
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            v = x_new + ((t - 1.0) / t_new) * dx
            t = t_new
        x = x_new
        if np.linalg.norm(dx) <= tol * max(1.0, np.linalg.norm(x)):
            break
    # never hand back something worse than the warm start
    f_new = quad.value(x, r, w) + mu * np.abs(x).sum()
    f_old = quad.value(x0, r, w) + mu * np.abs(x0).sum()
    return x if f_new <= f_old else x0.copy()


def model_objective(prob: MixedProblem, x, params: SolverParams, model: str) -> float:
    """Objective of ``model`` in {"csc", "csr", "lasso", "rdcs"} at ``x``.

    ``csc`` returns ``inf`` outside the ball; ``rdcs`` is its large-lam hinge form.
    """
    x = np.asarray(x, dtype=float)
    Ux = prob.apply(x)
    res = Ux[prob.ana] - prob.obs.p[prob.ana]
    val = params.mu * np.abs(x).sum() + 0.5 * float(res @ res)
    if model == "lasso":
        return val
    marg = prob.margins(Ux)[prob.sat_idx]
    if model == "rdcs":
        return val + params.lam * float(np.sum(np.maximum(marg, 0.0)))
    val += params.lam * float(np.sum(pinball_loss(marg, params.tau))) if marg.size else 0.0
    if model == "csr":
        return val + 0.5 * params.gamma * float(x @ x)
    if model == "csc":
        return val if np.linalg.norm(x) <= params.c * (1 + 1e-12) else np.inf
    raise ValueError(f"unknown model {model!r}")


def admm(
    prob: MixedProblem,
    params: SolverParams,
    z_step: Callable,
    x_step: Callable,
    state: Optional[AdmmState] = None,
    trace_path=None,
    objective: Optional[Callable] = None,
):
    """Generic ADMM loop; returns the final state, iteration count and convergence flag.

    ``z_step(x, beta)`` and ``x_step(state)`` supply the model-specific pieces.
    """
    th1, th2 = params.theta1, params.theta2
    st = state if state is not None else AdmmState.zeros(prob.d, prob.m)
    idx = prob.sat_idx
    rho = params.lam / th1
    tol_pe = params.tol_primal * np.sqrt(max(idx.size, 1))
    tol_pz = params.tol_primal * np.sqrt(prob.d)
    tol_d = params.tol_dual * np.sqrt(prob.d)
    Ux = prob.apply(st.x)
    writer = None
    fh = None
    t0 = time.perf_counter()
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "primal_e", "primal_z", "dual", "wall_time"])
    converged = False
    try:
        for k in range(1, params.max_outer + 1):
            marg = prob.margins(Ux)
            if idx.size:
                if rho > 0:
                    st.e[idx] = pinball_shrink(marg[idx] - st.alpha[idx] / th1, rho, params.tau)
                else:
                    st.e[idx] = marg[idx] - st.alpha[idx] / th1
            st.z = z_step(st.x, st.beta)
            x_old = st.x
            st.x = x_step(st)
            Ux_old = Ux
            Ux = prob.apply(st.x)
            marg = prob.margins(Ux)
            re = np.zeros(prob.m)
            re[idx] = st.e[idx] - marg[idx]
            rz = st.z - st.x
            st.alpha[idx] += th1 * re[idx]
            st.beta += th2 * rz
            dU = (Ux - Ux_old)[idx]
            dual = np.sqrt((th1**2) * float(dU @ dU) + (th2**2) * float(np.sum((st.x - x_old) ** 2)))
            st.residuals = (float(np.linalg.norm(re)), float(np.linalg.norm(rz)), float(dual))
            st.iter += 1
            if writer is not None:
                obj = objective(st.x) if objective is not None else float("nan")
                vals = (obj, *st.residuals, time.perf_counter() - t0)
                writer.writerow([st.iter, *(format(float(v), ".17g") for v in vals)])
            if st.residuals[0] < tol_pe and st.residuals[1] < tol_pz and st.residuals[2] < tol_d:
                converged = True
                break
    finally:
        if fh is not None:
            fh.close()
    return st, k, converged


def _l1_x_step(prob, params, quad):
    def step(st):
        return fista_x_subproblem(
            prob, prob.obs.p, prob.psi, prob.obs.y, prob.s, st.e, st.z, st.alpha, st.beta, params, x0=st.x, quad=quad
        )

    return step


def _solve(prob: MixedProblem, params: SolverParams, model: str, z_step, trace_path=None, state=None, quad=None):
    t0 = time.perf_counter()
    quad = quad if quad is not None else _Quadratic(prob, params.theta1, params.theta2)
    obj = lambda x: model_objective(prob, x, params, model)  # noqa: E731
    st, k, conv = admm(prob, params, z_step, _l1_x_step(prob, params, quad), state, trace_path, obj)
    x = st.x.copy()
    if model == "csc":
        x = project_l2_ball(x, params.c)
    val = obj(x)
    return Solution(x, val, k, conv and np.isfinite(val), time.perf_counter() - t0, st)


def _as_problem(problem) -> MixedProblem:
    if isinstance(problem, MixedProblem):
        return problem
    U, obs = problem
    return MixedProblem(U, obs)


def solve_m1bitcsc(problem, params: SolverParams, trace_path=None, state=None) -> Solution:
    """Mixed model with the ball constraint ``|x| <= c``."""
    prob = _as_problem(problem)
    return _solve(prob, params, "csc", lambda x, b: project_l2_ball(x - b / params.theta2, params.c), trace_path, state)


def solve_m1bitcsr(problem, params: SolverParams, trace_path=None, state=None) -> Solution:
    """Mixed model with the ridge term ``gamma/2 |x|^2`` in the objective."""
    prob = _as_problem(problem)
    z_step = lambda x, b: shrink_m1bitcsr_z(x, b, params.theta2, params.gamma)  # noqa: E731
    return _solve(prob, params, "csr", z_step, trace_path, state)


def solve_lasso(U, p_unsaturated, mu: float, params: Optional[SolverParams] = None, x0=None) -> Solution:
    """``min mu|x|_1 + 1/2 |Ux - p|^2`` over the rows handed in.

    With no saturated rows and no ridge the ADMM split is vacuous
    (z == x, beta == 0), so FISTA runs directly on the lasso objective.
    ``x0`` warm-starts the iteration (useful along a decreasing ``mu`` path).
    """
    params = params or SolverParams()
    t0 = time.perf_counter()
    rows = getattr(U, "rows", U)
    p = np.asarray(p_unsaturated, dtype=float)
    m = p.size
    obs = SaturatedObservations(p, np.zeros(m, bool), np.zeros(m, np.int8), np.zeros(m))
    prob = MixedProblem(rows, obs)
    quad = _Quadratic(prob, 1.0, 0.0)
    x = np.zeros(prob.d) if x0 is None else np.array(x0, dtype=float)
    zeros = np.zeros(prob.d)
    total = params.max_outer * params.fista_iters
    done = 0
    converged = False
    chunk = max(params.fista_iters, 50)
    while done < total:
        x_new = _fista_l1(quad, p, zeros, mu, x, chunk, 0.0)
        done += chunk
        step = np.linalg.norm(x_new - x)
        x = x_new
        if step <= params.tol_primal * np.sqrt(prob.d) * 1e-2:
            converged = True
            break
    val = model_objective(prob, x, params.updated(mu=mu), "lasso")
    return Solution(x, val, done, converged, time.perf_counter() - t0)


def solve_rdcs(U, obs: SaturatedObservations, mu: float, params: Optional[SolverParams] = None, lam_base=None) -> Solution:
    """Lasso on analog rows subject to ``y_i(u_i'x - s_i) >= 0`` on saturated rows.

    Realized as the mixed model with hinge loss (tau = 0), no ball and a
    one-bit weight ``1e6`` times the default heuristic.
    """
    params = params or SolverParams()
    n = int(obs.psi.sum())
    if n == 0:
        return solve_lasso(getattr(U, "rows", U)[~obs.psi], obs.p[~obs.psi], mu, params)
    if lam_base is None:
        lam_base = default_hyperparams(obs.m, n)[1]
    lam = RDCS_LAMBDA_SCALE * lam_base
    prm = params.updated(mu=mu, lam=lam, tau=0.0, gamma=0.0)
    prob = MixedProblem(U, obs)
    sol = _solve(prob, prm, "rdcs", lambda x, b: x - b / prm.theta2)
    viol = float(np.max(np.maximum(prob.margins(prob.apply(sol.x_hat))[prob.sat_idx], 0.0)))
    if viol > 1e-4:
        sol.converged = False
    return sol
