"""Frozen-covariance Gauss-Newton / Newton minimization of the MAP objectives.

Stage 1 is unconstrained; stage 2 carries the slack box constraints
-s <= theta_I <= s, handled by a primal log-barrier interior-point scheme.
The noise covariance is evaluated at the current parameter iterate, frozen,
and one damped step is taken on the altered objective (refreshed each outer
iteration in stage 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bayes import MapProblem
from .errors import FolocError, MaxIterations, NotPositiveDefinite
from .likelihood import InjectionVariables, NoiseCovariance
from .report import GeneratorResult, SourceReport

_EVAL_ERRORS = (FolocError, np.linalg.LinAlgError, FloatingPointError)


@dataclass
class SolverSettings:
    tol_step: float = 1e-8
    tol_grad: float = 1e-6
    max_iter: int = 200
    gauss_newton: bool = True
    refresh_every: int = 1
    barrier_mu0: float = 1.0
    barrier_factor: float = 0.2
    barrier_tol: float = 1e-8
    frac_to_boundary: float = 0.995
    max_inner: int = 50
    armijo: float = 1e-4
    max_backtracks: int = 30


@dataclass
class MapSolution:
    theta: np.ndarray
    theta_g: np.ndarray
    objective: float
    H: np.ndarray
    iterations: int
    converged: bool
    grad_norm: float
    injections: InjectionVariables | None = None
    kkt: dict = field(default_factory=dict)


def _weighted_columns(cov: NoiseCovariance, J: np.ndarray) -> np.ndarray:
    """Gamma^-1 J for a stacked Jacobian (4n, m)."""
    n, m = cov.n, J.shape[1]
    Jb = J.reshape(4, n, m).transpose(1, 0, 2)
    Wb = cov.solve_columns(Jb)
    return Wb.transpose(1, 0, 2).reshape(4 * n, m)


def _injection_jac(problem: MapProblem) -> np.ndarray:
    cached = getattr(problem, "_JI_cache", None)
    if cached is None:
        cached = problem.injection_jacobian()
        problem._JI_cache = cached
    return cached


def _model_residual(problem: MapProblem, z: np.ndarray) -> np.ndarray:
    theta_g, theta_I, _ = problem.split(z)
    R = problem.residual_fn(theta_g)
    if problem.v:
        R = R + _injection_jac(problem) @ theta_I
    return R


def _objective_value(problem: MapProblem, z: np.ndarray, cov: NoiseCovariance) -> float:
    theta_g, _, s = problem.split(z)
    R = _model_residual(problem, z)
    d = theta_g - problem.prior.mean
    f = float(np.sum(d * d / problem.prior.var)) + cov.quad(R)
    if problem.v:
        f += problem.lam * float(np.sum(s))
    return f


def objective_gradient(problem: MapProblem, z: np.ndarray, cov: NoiseCovariance):
    """Objective value and gradient with the covariance held frozen."""
    theta_g, theta_I, s = problem.split(z)
    R0, Jg = problem.residual_jac_fn(theta_g)
    R = R0 + (_injection_jac(problem) @ theta_I if problem.v else 0.0)
    q = cov.solve(R)
    d = theta_g - problem.prior.mean
    f = float(np.sum(d * d / problem.prior.var)) + float(R @ q)
    grad = np.zeros(problem.dim)
    grad[: problem.m] = 2.0 * (Jg.T @ q) + 2.0 * d / problem.prior.var
    if problem.v:
        v4 = 4 * problem.v
        grad[problem.m : problem.m + v4] = 2.0 * (_injection_jac(problem).T @ q)
        grad[problem.m + v4 :] = problem.lam
        f += problem.lam * float(np.sum(s))
    return f, grad


def _second_derivative_term(problem: MapProblem, theta_g: np.ndarray, q: np.ndarray):
    """2 * d2R/dtheta_j dtheta_i : (Gamma^-1 R), via central differences of R."""
    m = problem.m
    T = np.zeros((m, m))
    h = np.array([1e-4 * max(1.0, abs(t)) for t in theta_g])
    R0 = problem.residual_fn(theta_g)

    def rf(shift):
        return problem.residual_fn(theta_g + shift)

    for i in range(m):
        ei = np.zeros(m)
        ei[i] = h[i]
        T[i, i] = ((rf(ei) - 2.0 * R0 + rf(-ei)) / h[i] ** 2) @ q
        for j in range(i + 1, m):
            ej = np.zeros(m)
            ej[j] = h[j]
            d2 = (rf(ei + ej) - rf(ei - ej) - rf(-ei + ej) + rf(-ei - ej)) / (
                4.0 * h[i] * h[j]
            )
            T[i, j] = T[j, i] = d2 @ q
    return 2.0 * T


def hessian(
    problem: MapProblem,
    z: np.ndarray,
    cov: NoiseCovariance,
    gauss_newton: bool = True,
) -> np.ndarray:
    """Hessian of the frozen-covariance objective.

    Gauss-Newton mode drops the residual-curvature term (exact on coordinates
    where R is affine, e.g. all injection variables).  Slack coordinates carry
    no curvature.
    """
    theta_g, theta_I, _ = problem.split(z)
    R0, Jg = problem.residual_jac_fn(theta_g)
    J = Jg if not problem.v else np.hstack([Jg, _injection_jac(problem)])
    W = _weighted_columns(cov, J)
    H_data = 2.0 * (J.T @ W)
    if not gauss_newton:
        R = R0 + (_injection_jac(problem) @ theta_I if problem.v else 0.0)
        q = cov.solve(R)
        H_data[: problem.m, : problem.m] += _second_derivative_term(problem, theta_g, q)
    H = np.zeros((problem.dim, problem.dim))
    njw = H_data.shape[0]
    H[:njw, :njw] = H_data
    H[: problem.m, : problem.m] += np.diag(2.0 / problem.prior.var)
    return H


def _try_objective(problem, z, cov):
    try:
        f = _objective_value(problem, z, cov)
    except _EVAL_ERRORS:
        return np.inf
    return f if np.isfinite(f) else np.inf


def _damped_step(H, g, lm):
    scale = np.clip(np.abs(np.diag(H)), 1e-12, None)
    return np.linalg.solve(H + lm * np.diag(scale), -g)


def minimize_stage1(problem: MapProblem, settings: SolverSettings | None = None) -> MapSolution:
    """Frozen-covariance damped Gauss-Newton/Newton iteration for stage 1."""
    st = settings or SolverSettings()
    theta = problem.theta0.copy()
    cov = None
    lm = 0.0
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(1, st.max_iter + 1):
        if cov is None or (it - 1) % st.refresh_every == 0:
            cov = problem.covariance_fn(theta)
        R0, Jg = problem.residual_jac_fn(theta)
        q = cov.solve(R0)
        d = theta - problem.prior.mean
        f = float(np.sum(d * d / problem.prior.var)) + float(R0 @ q)
        g = 2.0 * (Jg.T @ q) + 2.0 * d / problem.prior.var
        grad_norm = float(np.linalg.norm(g))
        if grad_norm < st.tol_grad:
            converged = True
            break
        W = _weighted_columns(cov, Jg)
        H = 2.0 * (Jg.T @ W) + np.diag(2.0 / problem.prior.var)
        if not st.gauss_newton:
            H += _second_derivative_term(problem, theta, q)

        accepted = False
        for _ in range(12):  # Levenberg damping escalation
            try:
                step = _damped_step(H, g, lm)
            except np.linalg.LinAlgError:
                lm = max(10.0 * lm, 1e-6)
                continue
            slope = float(g @ step)
            if slope >= 0:
                lm = max(10.0 * lm, 1e-6)
                continue
            alpha = 1.0
            for _ in range(st.max_backtracks):
                f_new = _try_objective(problem, theta + alpha * step, cov)
                if f_new <= f + st.armijo * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                theta = theta + alpha * step
                lm = lm / 10.0 if lm > 1e-10 else 0.0
                break
            lm = max(10.0 * lm, 1e-6)
        if not accepted:
            break
        if float(np.linalg.norm(alpha * step)) < st.tol_step:
            converged = True
            break

    cov = problem.covariance_fn(theta)
    H_final = hessian(problem, theta, cov, gauss_newton=st.gauss_newton)
    f_final = _objective_value(problem, theta, cov)
    return MapSolution(
        theta=theta,
        theta_g=theta,
        objective=f_final,
        H=H_final,
        iterations=it,
        converged=converged,
        grad_norm=grad_norm,
    )


def _barrier_terms(problem: MapProblem, z: np.ndarray, mu: float):
    """Value, gradient and Hessian contributions of the slack log barrier."""
    m, v = problem.m, problem.v
    theta_I = z[m : m + 4 * v]
    s = z[m + 4 * v :]
    u = s - theta_I
    w = s + theta_I
    if np.any(u <= 0) or np.any(w <= 0):
        return np.inf, None, None
    val = -mu * float(np.sum(np.log(u)) + np.sum(np.log(w)))
    gI = mu * (1.0 / u - 1.0 / w)
    gs = -mu * (1.0 / u + 1.0 / w)
    hII = mu * (u**-2 + w**-2)
    hIs = mu * (-(u**-2) + w**-2)
    hss = hII
    grad = np.zeros(problem.dim)
    grad[m : m + 4 * v] = gI
    grad[m + 4 * v :] = gs
    return val, grad, (hII, hIs, hss)


def _max_feasible_alpha(problem, z, step, frac):
    m, v = problem.m, problem.v
    dI = step[m : m + 4 * v]
    ds = step[m + 4 * v :]
    theta_I = z[m : m + 4 * v]
    s = z[m + 4 * v :]
    u = s - theta_I
    w = s + theta_I
    du = ds - dI
    dw = ds + dI
    alpha = 1.0
    for slack, d in ((u, du), (w, dw)):
        neg = d < 0
        if np.any(neg):
            alpha = min(alpha, frac * float(np.min(-slack[neg] / d[neg])))
    return alpha


def minimize_stage2(problem: MapProblem, settings: SolverSettings | None = None) -> MapSolution:
    """Primal interior-point solve of the slack-constrained stage-2 problem."""
    st = settings or SolverSettings()
    m, v = problem.m, problem.v
    z = np.concatenate([problem.theta0, np.zeros(4 * v), np.ones(4 * v)])
    if v == 0:
        # Degenerate: no masked bins declared; reduces to an unconstrained solve.
        sol = minimize_stage1(
            MapProblem(
                stage="stage1",
                prior=problem.prior,
                lam=0.0,
                included_bins=problem.included_bins,
                inj_bins=np.zeros(0, int),
                residual_fn=problem.residual_fn,
                residual_jac_fn=problem.residual_jac_fn,
                covariance_fn=problem.covariance_fn,
                theta0=problem.theta0,
                gen=problem.gen,
            ),
            st,
        )
        sol.injections = InjectionVariables.zeros(np.zeros(0, int))
        return sol

    mu = st.barrier_mu0
    cov = None
    lm = 0.0
    total_iters = 0
    converged = True
    while True:
        theta_g = z[:m]
        cov = problem.covariance_fn(theta_g)  # frozen-covariance refresh, once per outer
        inner_ok = False
        for _ in range(st.max_inner):
            total_iters += 1
            f, g = objective_gradient(problem, z, cov)
            bval, bgrad, bhess = _barrier_terms(problem, z, mu)
            phi = f + bval
            gphi = g + bgrad
            if float(np.linalg.norm(gphi)) < max(0.1 * mu, 1e-9):
                inner_ok = True
                break
            H = hessian(problem, z, cov, gauss_newton=st.gauss_newton)
            hII, hIs, hss = bhess
            iI = np.arange(m, m + 4 * v)
            iS = np.arange(m + 4 * v, m + 8 * v)
            H[iI, iI] += hII
            H[iS, iS] += hss
            H[iI, iS] += hIs
            H[iS, iI] += hIs

            accepted = False
            for _ in range(10):
                try:
                    step = _damped_step(H, gphi, lm)
                except np.linalg.LinAlgError:
                    lm = max(10.0 * lm, 1e-6)
                    continue
                slope = float(gphi @ step)
                if slope >= 0:
                    lm = max(10.0 * lm, 1e-6)
                    continue
                alpha = _max_feasible_alpha(problem, z, step, st.frac_to_boundary)
                for _ in range(st.max_backtracks):
                    z_new = z + alpha * step
                    bval_new, _, _ = _barrier_terms(problem, z_new, mu)
                    if np.isfinite(bval_new):
                        f_new = _try_objective(problem, z_new, cov)
                        if f_new + bval_new <= phi + st.armijo * alpha * slope:
                            accepted = True
                            break
                    alpha *= 0.5
                if accepted:
                    z = z_new
                    lm = lm / 10.0 if lm > 1e-10 else 0.0
                    break
                lm = max(10.0 * lm, 1e-6)
            if not accepted:
                break
            if float(np.linalg.norm(alpha * step)) < st.tol_step:
                inner_ok = True
                break
        if mu < st.barrier_tol:
            converged = converged and inner_ok
            break
        mu *= st.barrier_factor
        if total_iters > st.max_iter * st.max_inner:
            converged = False
            break

    theta_g, theta_I, s = problem.split(z)
    cov = problem.covariance_fn(theta_g)
    f_final, g_final = objective_gradient(problem, z, cov)
    H_final = hessian(problem, z, cov, gauss_newton=st.gauss_newton)[
        : m + 4 * v, : m + 4 * v
    ]
    # KKT diagnostics: smooth gradient on theta_g, l1 subgradient bound on theta_I.
    g_data_I = g_final[m : m + 4 * v]
    active = np.abs(theta_I) > 1e-12
    kkt = {
        "grad_g_norm": float(np.linalg.norm(g_final[:m], np.inf)),
        "subgrad_violation": float(
            max(0.0, np.max(np.abs(g_data_I)) - problem.lam) if v else 0.0
        ),
        "active_equality_gap": float(
            np.max(np.abs(np.abs(g_data_I[active]) - problem.lam)) if active.any() else 0.0
        ),
        "slack_gap": float(np.max(np.abs(s - np.abs(theta_I))) if v else 0.0),
    }
    return MapSolution(
        theta=z,
        theta_g=theta_g,
        objective=f_final,
        H=H_final,
        iterations=total_iters,
        converged=converged,
        grad_norm=float(np.linalg.norm(g_final[:m])),
        injections=problem.injections_from_flat(theta_I),
        kkt=kkt,
    )


def injection_norms(inj: InjectionVariables) -> np.ndarray:
    """Per-bin ||I|| = sqrt(I_Ir^2 + I_Ii^2 + I_phr^2 + I_phi^2)."""
    return np.sqrt(np.sum(inj.values**2, axis=1))


def locate_sources(
    solutions: dict,
    iota: float,
    grids: dict | None = None,
    lam: dict | None = None,
    seed: int | None = None,
) -> SourceReport:
    """Threshold the stage-2 injection norms into a source verdict per generator.

    solutions maps generator name -> stage-2 MapSolution; grids (optional)
    maps generator name -> frequency grid (rad/s) for bin -> Hz annotation.
    """
    results = []
    for gen in sorted(solutions):
        sol = solutions[gen]
        inj = sol.injections
        norms = injection_norms(inj) if inj is not None else np.zeros(0)
        inf_norm = float(np.max(norms)) if norms.size else 0.0
        freqs = []
        if grids is not None and inj is not None and gen in grids:
            freqs = [float(grids[gen][b] / (2.0 * np.pi)) for b in inj.bins]
        results.append(
            GeneratorResult(
                gen=gen,
                params_map2={},
                inj_bins=list(inj.bins) if inj is not None else [],
                inj_freqs_hz=freqs,
                inj_norms=list(norms),
                inj_inf_norm=inf_norm,
                is_source=inf_norm > iota,
                converged_stage2=sol.converged,
            )
        )
    return SourceReport(generators=results, iota=iota, lam=lam or {}, seed=seed)


def prediction_error_pct(I_meas: np.ndarray, I_pred: np.ndarray) -> np.ndarray:
    """Per-bin percent difference ||I~ - YV~|| / (||I~||/2 + ||YV~||/2).

    Inputs have shape (n, 2) complex (current magnitude and phase spectra);
    bins where both vanish are defined as 0.
    """
    I_meas = np.atleast_2d(np.asarray(I_meas))
    I_pred = np.atleast_2d(np.asarray(I_pred))
    num = np.linalg.norm(I_meas - I_pred, axis=1)
    den = 0.5 * np.linalg.norm(I_meas, axis=1) + 0.5 * np.linalg.norm(I_pred, axis=1)
    out = np.zeros(num.shape)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out
