import csv
import itertools

import cvxpy as cp
import numpy as np
import pytest

from satrecon.sensing import SaturatedObservations, SyntheticProblemSpec, generate_problem
from satrecon.solvers import (
    MixedProblem,
    SolverParams,
    _Quadratic,
    _x_targets,
    default_hyperparams,
    fista_x_subproblem,
    model_objective,
    solve_lasso,
    solve_m1bitcsc,
    solve_m1bitcsr,
    solve_rdcs,
)


def _obs(p, psi, y, s):
    return SaturatedObservations(np.asarray(p, float), np.asarray(psi, bool), np.asarray(y, np.int8), np.asarray(s, float))


def random_instance(seed, d=8, m=20, n=6):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((m, d))
    x = np.zeros(d)
    k = min(3, d)
    x[rng.choice(d, k, replace=False)] = rng.standard_normal(k)
    x /= np.linalg.norm(x)
    q = U @ x + 0.05 * rng.standard_normal(m)
    order = np.argsort(q)
    psi = np.zeros(m, bool)
    y = np.zeros(m, np.int8)
    s = np.zeros(m)
    lo, hi = order[: n // 2], order[m - n // 2:]
    s_lo = 0.5 * (q[order[n // 2 - 1]] + q[order[n // 2]])
    s_hi = 0.5 * (q[order[m - n // 2 - 1]] + q[order[m - n // 2]])
    p = np.clip(q, s_lo, s_hi)
    psi[lo], psi[hi] = True, True
    y[lo], y[hi] = -1, 1
    s[lo], s[hi] = s_lo, s_hi
    return U, _obs(p, psi, y, s)


def cvx_objective(U, obs, prm, model):
    """Independent convex-program oracle for each model."""
    d = U.shape[1]
    x = cp.Variable(d)
    ana, sat = ~obs.psi, obs.psi
    f = prm.mu * cp.norm1(x) + 0.5 * cp.sum_squares(U[ana] @ x - obs.p[ana])
    cons = []
    if sat.any() and model != "lasso":
        marg = cp.multiply(obs.y[sat].astype(float), obs.s[sat] - U[sat] @ x)
        if model == "rdcs":
            cons.append(marg <= 0)
        else:
            f = f + prm.lam * cp.sum(cp.maximum(marg, -prm.tau * marg))
    if model == "csc":
        cons.append(cp.norm(x, 2) <= prm.c)
    if model == "csr":
        f = f + 0.5 * prm.gamma * cp.sum_squares(x)
    prob = cp.Problem(cp.Minimize(f), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value, x.value


def test_default_hyperparams():
    assert default_hyperparams(500, 100) == pytest.approx((-0.04, 0.05, 1e-4))
    tau, lam, _ = default_hyperparams(500, 500)
    assert tau == pytest.approx(-0.2) and lam == pytest.approx(0.01)
    tau, lam, gamma = default_hyperparams(500, 0)
    assert tau == 0.0 and lam == 0.0 and gamma == 1e-4
    with pytest.raises(ValueError):
        default_hyperparams(0, 0)


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(tau=0.1)
    with pytest.raises(ValueError):
        SolverParams(theta1=0.0)
    with pytest.raises(ValueError):
        SolverParams(c=0.0)
    assert SolverParams().updated(mu=2.0).mu == 2.0


def _fista_args(U, p, psi=None, params=None):
    m, d = U.shape
    psi = np.zeros(m, bool) if psi is None else psi
    z = np.zeros(d)
    return dict(U=U, p=p, psi=psi, y=np.zeros(m, np.int8), s=np.zeros(m), e=np.zeros(m), z=z,
                alpha=np.zeros(m), beta=np.zeros(d), params=params)


def test_fista_identity_least_squares():
    p = np.array([0.3, -1.2, 2.0])
    prm = SolverParams(mu=0.0, theta2=1e-9, fista_iters=500)
    x = fista_x_subproblem(**_fista_args(np.eye(3), p, params=prm))
    assert np.allclose(x, p, atol=1e-6)


def test_fista_large_mu_gives_zero():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((6, 4))
    x = fista_x_subproblem(**_fista_args(U, rng.standard_normal(6), params=SolverParams(mu=1e6)))
    assert np.array_equal(x, np.zeros(4))


def _enumerate_l1_quadratic(H, h, mu):
    """argmin 1/2 x'Hx - h'x + mu|x|_1 by trying every sign / zero pattern."""
    d = h.size
    best, best_x = np.inf, None
    for pat in itertools.product((-1, 0, 1), repeat=d):
        pat = np.array(pat)
        act = pat != 0
        x = np.zeros(d)
        if act.any():
            x[act] = np.linalg.solve(H[np.ix_(act, act)], h[act] - mu * pat[act])
            if np.any(np.sign(x[act]) != pat[act]):
                continue
        # KKT on the zero set
        g = H @ x - h
        if np.any(np.abs(g[~act]) > mu + 1e-10):
            continue
        val = 0.5 * x @ H @ x - h @ x + mu * np.abs(x).sum()
        if val < best:
            best, best_x = val, x
    return best_x


@pytest.mark.parametrize("seed", range(5))
def test_fista_matches_sign_pattern_oracle_d2(seed):
    rng = np.random.default_rng(seed)
    m, d = 5, 2
    U = rng.standard_normal((m, d))
    psi = np.array([False, False, False, True, True])
    y = np.array([0, 0, 0, 1, -1], np.int8)
    s = np.array([0, 0, 0, 0.5, -0.5])
    p = rng.standard_normal(m)
    e, alpha = rng.standard_normal(m), rng.standard_normal(m)
    z, beta = rng.standard_normal(d), rng.standard_normal(d)
    prm = SolverParams(mu=0.3, theta1=0.7, theta2=1.3, fista_iters=3000, fista_tol=0.0)
    x = fista_x_subproblem(U, p, psi, y, s, e, z, alpha, beta, prm)
    # assemble the same quadratic by hand: rows with weight 1 (analog) or theta1 (one-bit)
    r = p.copy()
    r[psi] = s[psi] - y[psi] * (e[psi] + alpha[psi] / prm.theta1)
    w = np.where(psi, prm.theta1, 1.0)
    centre = z + beta / prm.theta2
    H = U.T @ (w[:, None] * U) + prm.theta2 * np.eye(d)
    h = U.T @ (w * r) + prm.theta2 * centre
    assert np.allclose(x, _enumerate_l1_quadratic(H, h, prm.mu), atol=1e-6)


def test_quadratic_gradient_matches_finite_differences():
    U, obs = random_instance(3, d=6, m=12, n=4)
    prob = MixedProblem(U, obs)
    quad = _Quadratic(prob, 0.7, 1.3)
    rng = np.random.default_rng(1)
    for _ in range(20):
        e, alpha = rng.standard_normal(prob.m), rng.standard_normal(prob.m)
        z, beta = rng.standard_normal(prob.d), rng.standard_normal(prob.d)
        r, w = _x_targets(prob, obs.p, e, alpha, z, beta, 0.7, 1.3)
        x = rng.standard_normal(prob.d)
        g = quad.grad(x, quad.linear_term(r), w)
        h = 1e-5
        fd = np.array([(quad.value(x + h * v, r, w) - quad.value(x - h * v, r, w)) / (2 * h) for v in np.eye(prob.d)])
        assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(g), 1.0)


def test_quadratic_value_is_the_xstep_objective():
    # the weighted form must equal the written-out augmented terms up to a constant
    U, obs = random_instance(4, d=5, m=10, n=4)
    prob = MixedProblem(U, obs)
    th1, th2 = 0.6, 1.7
    quad = _Quadratic(prob, th1, th2)
    rng = np.random.default_rng(2)
    e, alpha = rng.standard_normal(prob.m), rng.standard_normal(prob.m)
    z, beta = rng.standard_normal(prob.d), rng.standard_normal(prob.d)
    r, w = _x_targets(prob, obs.p, e, alpha, z, beta, th1, th2)

    def explicit(x):
        Ux = U @ x
        ana, sat = ~obs.psi, obs.psi
        marg = obs.y[sat] * (obs.s[sat] - Ux[sat])
        return (0.5 * np.sum((Ux[ana] - obs.p[ana]) ** 2) + beta @ (z - x) + 0.5 * th2 * np.sum((z - x) ** 2)
                + alpha[sat] @ (e[sat] - marg) + 0.5 * th1 * np.sum((e[sat] - marg) ** 2))

    xs = rng.standard_normal((4, prob.d))
    diffs = [quad.value(x, r, w) - explicit(x) for x in xs]
    assert np.ptp(diffs) < 1e-9


def _scalar_problem():
    U = np.array([[1.0], [1.0]])
    return U, _obs([1.0, 2.0], [False, True], [0, 1], [0.0, 2.0])


def test_csc_scalar_least_squares():
    obs = _obs([1.0], [False], [0], [0.0])
    sol = solve_m1bitcsc((np.array([[1.0]]), obs), SolverParams(mu=0.0, lam=0.0, c=10.0))
    assert sol.x_hat[0] == pytest.approx(1.0, abs=1e-5)


def test_csc_scalar_hinge_pulls_to_boundary():
    U, obs = _scalar_problem()
    prm = SolverParams(mu=0.0, lam=10.0, tau=0.0, c=10.0)
    sol = solve_m1bitcsc((U, obs), prm)
    grid = np.linspace(-5, 5, 200_001)
    f = 0.5 * (grid - 1) ** 2 + 10 * np.maximum(2 - grid, 0)
    assert sol.x_hat[0] == pytest.approx(grid[np.argmin(f)], abs=1e-4)
    assert sol.x_hat[0] == pytest.approx(2.0, abs=1e-4)
    assert sol.converged


def test_csr_scalar_close_to_csc():
    U, obs = _scalar_problem()
    prm = SolverParams(mu=0.0, lam=10.0, tau=0.0, c=10.0, gamma=1e-4)
    a = solve_m1bitcsc((U, obs), prm).x_hat[0]
    b = solve_m1bitcsr((U, obs), prm).x_hat[0]
    assert abs(a - b) < 1e-2


def test_rdcs_scalar_boundary():
    U, obs = _scalar_problem()
    sol = solve_rdcs(U, obs, 0.0, SolverParams())
    assert sol.x_hat[0] == pytest.approx(2.0, abs=1e-4)


def test_csc_d2_against_grid_oracle():
    U, obs = random_instance(9, d=2, m=8, n=4)
    prm = SolverParams(mu=0.05, lam=0.5, tau=-0.5, c=1.0)
    sol = solve_m1bitcsc((U, obs), prm)
    prob = MixedProblem(U, obs)
    r = np.sqrt(np.linspace(0, 1, 801))[:, None]
    t = np.linspace(0, 2 * np.pi, 2001)[None, :]
    pts = np.stack([(r * np.cos(t)).ravel(), (r * np.sin(t)).ravel()], axis=1)
    vals = [model_objective(prob, x, prm, "csc") for x in pts[::7]]
    assert sol.objective <= min(vals) + 1e-4


MODELS = [
    ("csc", lambda U, o, p: solve_m1bitcsc((U, o), p)),
    ("csr", lambda U, o, p: solve_m1bitcsr((U, o), p)),
    ("rdcs", lambda U, o, p: solve_rdcs(U, o, p.mu, p)),
]


@pytest.mark.parametrize("model,solve", MODELS, ids=[m for m, _ in MODELS])
@pytest.mark.parametrize("seed", range(4))
def test_models_match_convex_oracle(model, solve, seed):
    U, obs = random_instance(seed)
    m, n = obs.m, int(obs.psi.sum())
    tau, lam, gamma = default_hyperparams(m, n)
    prm = SolverParams(mu=0.05, lam=1.0, tau=-0.3, gamma=0.1, c=0.8)
    if model == "rdcs":
        prm = prm.updated(lam=1e6 * lam, tau=0.0, gamma=0.0)
    sol = solve(U, obs, prm)
    ref, _ = cvx_objective(U, obs, prm, model)
    mine = model_objective(MixedProblem(U, obs), sol.x_hat, prm, "rdcs" if model == "rdcs" else model)
    if model == "rdcs":
        # compare the constrained objective, not the penalty
        mine = model_objective(MixedProblem(U, obs), sol.x_hat, prm, "lasso")
        prob = MixedProblem(U, obs)
        viol = np.maximum(prob.margins(U @ sol.x_hat)[prob.sat_idx], 0.0).max()
        assert viol <= 1e-4
        assert mine <= ref + 1e-4 and mine >= ref - 1e-3
    else:
        assert abs(mine - ref) <= 1e-4 * max(1.0, abs(ref))


def test_lasso_matches_enumeration_d3():
    rng = np.random.default_rng(5)
    U = rng.standard_normal((6, 3))
    p = rng.standard_normal(6)
    mu = 0.4
    sol = solve_lasso(U, p, mu, SolverParams(tol_primal=1e-9))
    ref = _enumerate_l1_quadratic(U.T @ U, U.T @ p, mu)
    assert np.allclose(sol.x_hat, ref, atol=1e-6)


def test_lasso_trivial_cases():
    rng = np.random.default_rng(6)
    U = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    p = rng.standard_normal(4)
    sol = solve_lasso(U, p, 0.0, SolverParams(tol_primal=1e-10))
    assert np.allclose(sol.x_hat, np.linalg.solve(U, p), atol=1e-6)
    big = np.abs(U.T @ p).max()
    assert np.array_equal(solve_lasso(U, p, big).x_hat, np.zeros(4))


def test_rdcs_without_saturation_is_lasso():
    rng = np.random.default_rng(7)
    U = rng.standard_normal((10, 5))
    p = rng.standard_normal(10)
    obs = _obs(p, np.zeros(10, bool), np.zeros(10), np.zeros(10))
    a = solve_rdcs(U, obs, 0.2).x_hat
    b = solve_lasso(U, p, 0.2).x_hat
    assert np.allclose(a, b, atol=1e-10)


def test_model_reduction_chain():
    rng = np.random.default_rng(8)
    U = rng.standard_normal((30, 10))
    p = U @ (rng.standard_normal(10) * 0.2)
    obs = _obs(p, np.zeros(30, bool), np.zeros(30), np.zeros(30))
    prm = SolverParams(mu=0.05, lam=0.0, gamma=0.0, c=100.0)
    xs = [
        solve_lasso(U, p, 0.05, prm).x_hat,
        solve_rdcs(U, obs, 0.05, prm).x_hat,
        solve_m1bitcsc((U, obs), prm).x_hat,
        solve_m1bitcsr((U, obs), prm).x_hat,
    ]
    for x in xs[1:]:
        assert np.allclose(x, xs[0], atol=1e-4)


def _perturbation_certificate(prob, prm, model, x, rng, k=100):
    base = model_objective(prob, x, prm, model)
    worst = np.inf
    for _ in range(k):
        v = rng.standard_normal(x.size)
        v *= 1e-3 / np.linalg.norm(v)
        xp = x + v
        if model == "csc":
            xp = xp * min(1.0, prm.c / np.linalg.norm(xp))
        worst = min(worst, model_objective(prob, xp, prm, model) - base)
    return worst


@pytest.mark.parametrize("model", ["csc", "csr", "lasso"])
def test_perturbation_certificate(model):
    rng = np.random.default_rng(10)
    for seed in range(3):
        U, obs = random_instance(100 + seed, d=20, m=40, n=10)
        prob = MixedProblem(U, obs)
        prm = SolverParams(mu=0.05, lam=0.5, tau=-0.1, gamma=1e-2, c=1.0)
        if model == "csc":
            x = solve_m1bitcsc(prob, prm).x_hat
            assert np.linalg.norm(x) <= prm.c + 1e-6
        elif model == "csr":
            x = solve_m1bitcsr(prob, prm).x_hat
        else:
            x = solve_lasso(U[~obs.psi], obs.p[~obs.psi], prm.mu, prm).x_hat
        assert _perturbation_certificate(prob, prm, model, x, rng) >= -1e-6


def test_admm_primal_residuals_converge_mid_size():
    pb = generate_problem(SyntheticProblemSpec(d=200, K=10, m=150, n=30, s_n=20.0, seed=2))
    tau, lam, gamma = default_hyperparams(150, 30)
    prm = SolverParams(mu=0.05, lam=lam, tau=tau, gamma=gamma)
    sol = solve_m1bitcsr((pb.U, pb.obs), prm)
    pe, pz, _ = sol.state.residuals
    assert pe < prm.tol_primal * np.sqrt(30) and pz < prm.tol_primal * np.sqrt(200)


def test_rdcs_flags_infeasible():
    # x >= 2 and x <= -2 cannot both hold
    U = np.array([[1.0], [1.0], [1.0]])
    obs = _obs([0.0, 2.0, -2.0], [False, True, True], [0, 1, -1], [0.0, 2.0, -2.0])
    sol = solve_rdcs(U, obs, 0.0, SolverParams(max_outer=300))
    assert not sol.converged


def test_trace_csv_columns(tmp_path):
    U, obs = _scalar_problem()
    path = tmp_path / "trace.csv"
    sol = solve_m1bitcsc((U, obs), SolverParams(mu=0.0, lam=10.0, c=10.0), trace_path=path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "objective", "primal_e", "primal_z", "dual", "wall_time"]
    assert len(rows) == sol.iters + 1
    assert all(np.isfinite(float(v)) for v in rows[-1])
