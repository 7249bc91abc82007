"""Losses and closed-form proximal maps used by the ADMM solvers."""
from __future__ import annotations

import numba
import numpy as np

__all__ = [
    "pinball_loss",
    "pinball_shrink",
    "project_l2_ball",
    "soft_threshold",
    "shrink_m1bitcsr_z",
    "grad2d",
    "div2d",
    "tv_norm",
    "tv_prox",
]


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if not np.all((tau >= -1.0) & (tau <= 0.0)):
        raise ValueError(f"tau={tau} outside [-1, 0]")


def pinball_loss(t, tau: float):
    """Pinball loss: ``t`` for ``t >= 0`` and ``-tau * t`` below zero.

    ``tau = 0`` is the hinge, ``tau = -1`` the linear loss.
    """
    _check_tau(tau)
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 0, t, -tau * t)
    return out[()] if out.ndim == 0 else out


def pinball_shrink(t, rho: float, tau: float):
    """Proximal map ``argmin_e rho * L_tau(e) + (e - t)**2 / 2``.

    The subdifferential of ``L_tau`` at 0 is ``[-tau, 1]``, so the dead zone
    is ``[-tau*rho, rho]``; left of it the slope ``-tau`` shifts ``t`` by
    ``+tau*rho``.  ``rho`` and ``tau`` broadcast against ``t``.
    """
    rho = np.asarray(rho, dtype=float)
    if not np.all(rho > 0):
        raise ValueError("rho must be positive")
    _check_tau(tau)
    tau = np.asarray(tau, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.where(t >= rho, t - rho, np.where(t <= -tau * rho, t + tau * rho, 0.0))
    return out[()] if out.ndim == 0 else out


def project_l2_ball(v, c: float):
    if not c > 0:
        raise ValueError("radius must be positive")
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm <= c:
        return v.copy()
    return v * (c / nrm)


def soft_threshold(v, mu: float):
    if mu < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - mu, 0.0)


def shrink_m1bitcsr_z(x, beta, theta2: float, gamma: float):
    """Minimizer of ``gamma/2 |z|^2 + beta'z + theta2/2 |z - x|^2``."""
    if not theta2 > 0 or gamma < 0:
        raise ValueError("need theta2 > 0 and gamma >= 0")
    return (theta2 * np.asarray(x, dtype=float) - np.asarray(beta, dtype=float)) / (theta2 + gamma)


def grad2d(u):
    """Forward differences with reflexive (Neumann) boundary; shape ``(2, ny, nx)``."""
    g = np.zeros((2,) + u.shape)
    g[0, :-1, :] = u[1:, :] - u[:-1, :]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    return g


def div2d(p):
    """Negative adjoint of :func:`grad2d`."""
    py, px = p[0], p[1]
    d = np.zeros(py.shape)
    d[:-1, :] += py[:-1, :]
    d[1:, :] -= py[:-1, :]
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    return d


def tv_norm(u) -> float:
    g = grad2d(np.asarray(u, dtype=float))
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


@numba.njit(cache=True)
def _div_into(p, d):
    ny, nx = d.shape
    for i in range(ny):
        for j in range(nx):
            v = 0.0
            if i < ny - 1:
                v += p[0, i, j]
            if i > 0:
                v -= p[0, i - 1, j]
            if j < nx - 1:
                v += p[1, i, j]
            if j > 0:
                v -= p[1, i, j - 1]
            d[i, j] = v


@numba.njit(cache=True)
def _tv_obj(u, f, weight):
    ny, nx = u.shape
    tv = 0.0
    fit = 0.0
    for i in range(ny):
        for j in range(nx):
            gy = u[i + 1, j] - u[i, j] if i < ny - 1 else 0.0
            gx = u[i, j + 1] - u[i, j] if j < nx - 1 else 0.0
            tv += np.sqrt(gy * gy + gx * gx)
            r = u[i, j] - f[i, j]
            fit += r * r
    return weight * tv + 0.5 * fit


@numba.njit(cache=True)
def _tv_dual_loop(f, weight, p, iters, history):
    ny, nx = f.shape
    d = np.empty((ny, nx))
    _div_into(p, d)
    best = f - weight * d
    best_obj = _tv_obj(best, f, weight)
    history[0] = best_obj
    step = 1.0 / 8.0
    for k in range(iters):
        # gradient of (div p - f/weight), then projection onto |p| <= 1
        for i in range(ny):
            for j in range(nx):
                d[i, j] -= f[i, j] / weight
        for i in range(ny):
            for j in range(nx):
                gy = d[i + 1, j] - d[i, j] if i < ny - 1 else 0.0
                gx = d[i, j + 1] - d[i, j] if j < nx - 1 else 0.0
                a = p[0, i, j] + step * gy
                b = p[1, i, j] + step * gx
                nrm = np.sqrt(a * a + b * b)
                if nrm < 1.0:
                    nrm = 1.0
                p[0, i, j] = a / nrm
                p[1, i, j] = b / nrm
        _div_into(p, d)
        u = f - weight * d
        obj = _tv_obj(u, f, weight)
        if obj <= best_obj:
            best = u
            best_obj = obj
        history[k + 1] = best_obj
    return best


def tv_prox(img, weight: float, inner_iters: int = 30, p0=None, full_output: bool = False):
    """Approximate ``argmin_u weight*TV(u) + |u - img|^2 / 2`` (isotropic TV).

    Projected gradient ascent on the dual field ``p`` (``|p_ij| <= 1``) with
    step 1/8.  The returned primal iterate is the best one seen, so the
    primal objective never increases across inner iterations.

    With ``full_output`` also returns a dict holding the final dual field
    (for warm starts), the duality gap and the objective history.
    """
    f = np.asarray(img, dtype=float)
    if not weight > 0:
        raise ValueError("weight must be positive")
    f2 = np.ascontiguousarray(f[None, :] if f.ndim == 1 else f)
    p = np.zeros((2,) + f2.shape) if p0 is None else np.array(p0, dtype=float)
    history = np.empty(inner_iters + 1)
    best = _tv_dual_loop(f2, float(weight), p, int(inner_iters), history)
    out = best.reshape(f.shape)
    if not full_output:
        return out
    w = f2 - weight * div2d(p)
    dual = 0.5 * float(np.sum(f2**2)) - 0.5 * float(np.sum(w**2))
    return out, {"dual": p, "gap": float(history[-1]) - dual, "objective": history.tolist()}
