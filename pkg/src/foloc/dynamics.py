"""Generator models, equilibria, linearization and frequency response functions.

Two machine models are supported:

* ``classical2`` -- 2nd-order classical machine (delta, omega) with constant
  internal EMF E' behind X_d' (salient X_q allowed).
* ``fluxdecay3`` -- 3rd-order flux-decay machine (delta, omega, E_q') with a
  first-order AVR state x_A (gain K_A, time constant T_A).

All terminal quantities are in pu on a common system base; angles in rad.
The FRF maps terminal voltage (magnitude, phase) deviation spectra to current
(magnitude, phase) deviation spectra: [I~, phi~] = Y(W) [V~, th~].
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, NoEquilibrium, ResonantBin, SingularAlgebraicBlock

FREE_PARAMS = {
    "classical2": ("H", "D", "X_dp", "X_q"),
    "fluxdecay3": ("H", "D", "X_d", "X_dp", "X_q", "T_d0p", "K_A", "T_A"),
}

# Parameters optimized in log space (intrinsically positive); D and Ep stay linear.
LOG_PARAMS = frozenset({"H", "X_d", "X_dp", "X_q", "T_d0p", "K_A", "T_A"})

STATE_NAMES = {
    "classical2": ("delta", "omega"),
    "fluxdecay3": ("delta", "omega", "Eqp", "xA"),
}


@dataclass
class GeneratorParams:
    """Dynamic parameters of one machine (plus AVR for fluxdecay3).

    priors, when present, maps parameter name -> (mean, variance).
    """

    model_order: str
    H: float
    D: float
    X_dp: float
    X_q: float
    X_d: float | None = None
    T_d0p: float | None = None
    K_A: float | None = None
    T_A: float | None = None
    Ep: float | None = None
    f_base: float = 60.0
    priors: dict | None = None

    @property
    def omega_b(self) -> float:
        return 2.0 * np.pi * self.f_base

    @property
    def n_states(self) -> int:
        return len(STATE_NAMES[self.model_order])

    def free_names(self) -> tuple[str, ...]:
        return FREE_PARAMS[self.model_order]

    def free_values(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.free_names()], dtype=float)

    def with_values(self, values) -> "GeneratorParams":
        kw = dict(zip(self.free_names(), np.asarray(values, dtype=float)))
        return dataclasses.replace(self, **kw)

    def validate(self) -> None:
        if self.model_order not in FREE_PARAMS:
            raise ConfigError(f"unknown model_order {self.model_order!r}")
        if self.H <= 0:
            raise ConfigError("inertia H must be positive")
        if not (self.X_dp > 0):
            raise ConfigError("X_d' must be positive")
        if self.X_q <= 0:
            raise ConfigError("X_q must be positive")
        if self.model_order == "fluxdecay3":
            for name in ("X_d", "T_d0p", "K_A", "T_A"):
                if getattr(self, name) is None:
                    raise ConfigError(f"fluxdecay3 requires {name}")
            if self.X_d < self.X_dp:
                raise ConfigError("X_d must be >= X_d'")
            if self.T_d0p <= 0 or self.T_A <= 0:
                raise ConfigError("time constants must be positive")
        if self.model_order == "classical2" and self.Ep is None:
            raise ConfigError("classical2 requires Ep")
        if self.priors is not None:
            for name, (_, var) in self.priors.items():
                if var <= 0:
                    raise ConfigError(f"prior variance for {name} must be positive")


@dataclass
class EquilibriumPoint:
    """Machine rest point consistent with a terminal (S, V) condition."""

    V0: float
    theta0: float
    I0: float
    phi0: float
    x: np.ndarray
    tau_m: float
    V_ref: float | None
    Ep: float | None


@dataclass
class LinearModel:
    """State-space Jacobians at an equilibrium: inputs (V~, th~), outputs (I~, phi~)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass
class Frf:
    """2x2 complex admittance Y(W) tabulated on a frequency grid (rad/s)."""

    grid: np.ndarray
    Y: np.ndarray  # shape (n_bins, 2, 2)


def _dq_currents(delta, E, V, theta, X_dp, X_q):
    """Machine-frame currents: i_d = (E - V cos g)/X_d', i_q = V sin g / X_q."""
    g = delta - theta
    s, c = np.sin(g), np.cos(g)
    i_d = (E - V * c) / X_dp
    i_q = V * s / X_q
    return i_d, i_q, s, c


def _electrical_torque(E, i_d, i_q, X_dp, X_q):
    return E * i_q + (X_q - X_dp) * i_d * i_q


def machine_rhs(params: GeneratorParams, x, V, theta, tau_m, V_ref=None, Ep=None):
    """State derivatives of the machine DAE with terminal voltage as input.

    For classical2, Ep overrides params.Ep when given.  Algebraic stator
    relations are substituted directly, so the RHS is an explicit ODE.
    """
    p = params
    if p.model_order == "classical2":
        delta, w = x[0], x[1]
        E = p.Ep if Ep is None else Ep
        i_d, i_q, _, _ = _dq_currents(delta, E, V, theta, p.X_dp, p.X_q)
        tau_e = _electrical_torque(E, i_d, i_q, p.X_dp, p.X_q)
        return np.array(
            [p.omega_b * w, (tau_m - tau_e - p.D * w) / (2.0 * p.H)]
        )
    delta, w, E, xa = x[0], x[1], x[2], x[3]
    i_d, i_q, _, _ = _dq_currents(delta, E, V, theta, p.X_dp, p.X_q)
    tau_e = _electrical_torque(E, i_d, i_q, p.X_dp, p.X_q)
    return np.array(
        [
            p.omega_b * w,
            (tau_m - tau_e - p.D * w) / (2.0 * p.H),
            (-E - (p.X_d - p.X_dp) * i_d + xa) / p.T_d0p,
            (p.K_A * (V_ref - V) - xa) / p.T_A,
        ]
    )


def terminal_current(params: GeneratorParams, x, V, theta, Ep=None):
    """Complex terminal current phasor in the network frame."""
    p = params
    delta = x[0]
    E = (p.Ep if Ep is None else Ep) if p.model_order == "classical2" else x[2]
    i_d, i_q, _, _ = _dq_currents(delta, E, V, theta, p.X_dp, p.X_q)
    return (i_d + 1j * i_q) * np.exp(1j * (delta - np.pi / 2.0))


def solve_equilibrium(
    params: GeneratorParams,
    S: complex,
    Vterm: complex,
    tol: float = 1e-13,
    max_iter: int = 50,
) -> EquilibriumPoint:
    """Damped Newton solve for the machine rest point at a terminal condition.

    The unknowns are (delta, E) matching the terminal current required by the
    dispatch S = Vterm * conj(I); the remaining rest values (x_A, V_ref,
    tau_m) follow in closed form from zeroing the state derivatives.
    """
    p = params
    V0 = abs(Vterm)
    theta0 = np.angle(Vterm)
    if V0 <= 0:
        raise ConfigError("terminal voltage magnitude must be positive")
    I_req = np.conj(S / Vterm)

    # Classical-compatible initial guess from the X_q EMF construction.
    Eq_phasor = Vterm + 1j * p.X_q * I_req
    delta = float(np.angle(Eq_phasor))
    g = delta - theta0
    idq = I_req * np.exp(-1j * (delta - np.pi / 2.0))
    E = float(V0 * np.cos(g) + p.X_dp * np.real(idq))
    z = np.array([delta, E])

    def current_residual(z):
        delta, E = z
        i_d, i_q, s, c = _dq_currents(delta, E, V0, theta0, p.X_dp, p.X_q)
        rot = np.exp(1j * (delta - np.pi / 2.0))
        Im = (i_d + 1j * i_q) * rot
        r = np.array([Im.real - I_req.real, Im.imag - I_req.imag])
        # d(i_d)/d(delta) = V s / X_d', d(i_q)/d(delta) = V c / X_q
        dI_ddelta = (V0 * s / p.X_dp + 1j * V0 * c / p.X_q) * rot + 1j * Im
        dI_dE = rot / p.X_dp
        J = np.array(
            [[dI_ddelta.real, dI_dE.real], [dI_ddelta.imag, dI_dE.imag]]
        )
        return r, J

    r, J = current_residual(z)
    converged = float(np.linalg.norm(r)) < tol
    for _ in range(max_iter):
        if converged:
            break
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise NoEquilibrium("singular Newton Jacobian in equilibrium solve") from exc
        alpha = 1.0
        norm0 = np.linalg.norm(r)
        while alpha > 1e-8:
            r_new, J_new = current_residual(z + alpha * step)
            if np.linalg.norm(r_new) < norm0:
                break
            alpha *= 0.5
        else:
            raise NoEquilibrium("equilibrium line search stalled")
        z = z + alpha * step
        r, J = r_new, J_new
        converged = float(np.linalg.norm(r)) < tol
    if not converged:
        raise NoEquilibrium(
            f"equilibrium Newton did not converge (residual {np.linalg.norm(r):.2e})"
        )

    delta, E = z
    i_d, i_q, s, c = _dq_currents(delta, E, V0, theta0, p.X_dp, p.X_q)
    tau_e = _electrical_torque(E, i_d, i_q, p.X_dp, p.X_q)
    I0 = float(np.hypot(i_d, i_q))
    phi0 = float(np.angle(I_req)) if I0 > 1e-12 else 0.0

    if p.model_order == "classical2":
        x = np.array([delta, 0.0])
        return EquilibriumPoint(V0, theta0, I0, phi0, x, float(tau_e), None, float(E))
    xa = E + (p.X_d - p.X_dp) * i_d  # field voltage nulling the E_q' equation
    V_ref = V0 + xa / p.K_A
    x = np.array([delta, 0.0, E, xa])
    return EquilibriumPoint(V0, theta0, I0, phi0, x, float(tau_e), float(V_ref), None)


def linearize(params: GeneratorParams, eq: EquilibriumPoint) -> LinearModel:
    """Analytic Jacobians of the machine DAE at an equilibrium point.

    Inputs are terminal (V, theta) deviations, outputs (I, phi) deviations.
    """
    p = params
    V0, theta0 = eq.V0, eq.theta0
    delta = eq.x[0]
    E = eq.Ep if p.model_order == "classical2" else eq.x[2]

    i_d, i_q, s, c = _dq_currents(delta, E, V0, theta0, p.X_dp, p.X_q)
    I0 = np.hypot(i_d, i_q)
    if I0 < 1e-9:
        raise SingularAlgebraicBlock("terminal current is zero; phase output undefined")

    # Partials of dq currents wrt (delta, theta, V, E).
    did = {"delta": V0 * s / p.X_dp, "theta": -V0 * s / p.X_dp,
           "V": -c / p.X_dp, "E": 1.0 / p.X_dp}
    diq = {"delta": V0 * c / p.X_q, "theta": -V0 * c / p.X_q,
           "V": s / p.X_q, "E": 0.0}

    def dtau(var):
        return (E * diq[var] + (p.X_q - p.X_dp) * (i_d * diq[var] + i_q * did[var])
                + (i_q if var == "E" else 0.0))

    def dI(var):
        return (i_d * did[var] + i_q * diq[var]) / I0

    def dphi(var):
        val = (i_d * diq[var] - i_q * did[var]) / I0**2
        if var == "delta":
            val += 1.0
        return val

    twoH = 2.0 * p.H
    if p.model_order == "classical2":
        A = np.array(
            [[0.0, p.omega_b],
             [-dtau("delta") / twoH, -p.D / twoH]]
        )
        B = np.array(
            [[0.0, 0.0],
             [-dtau("V") / twoH, -dtau("theta") / twoH]]
        )
        C = np.array(
            [[dI("delta"), 0.0],
             [dphi("delta"), 0.0]]
        )
    else:
        kE = p.X_d - p.X_dp
        A = np.array(
            [[0.0, p.omega_b, 0.0, 0.0],
             [-dtau("delta") / twoH, -p.D / twoH, -dtau("E") / twoH, 0.0],
             [-kE * did["delta"] / p.T_d0p, 0.0,
              (-1.0 - kE * did["E"]) / p.T_d0p, 1.0 / p.T_d0p],
             [0.0, 0.0, 0.0, -1.0 / p.T_A]]
        )
        B = np.array(
            [[0.0, 0.0],
             [-dtau("V") / twoH, -dtau("theta") / twoH],
             [-kE * did["V"] / p.T_d0p, -kE * did["theta"] / p.T_d0p],
             [-p.K_A / p.T_A, 0.0]]
        )
        C = np.array(
            [[dI("delta"), 0.0, dI("E"), 0.0],
             [dphi("delta"), 0.0, dphi("E"), 0.0]]
        )
    D = np.array(
        [[dI("V"), dI("theta")],
         [dphi("V"), dphi("theta")]]
    )
    return LinearModel(A=A, B=B, C=C, D=D)


@njit(cache=True)
def _frf_kernel(A, B, C, D, grid):
    """Y(W) = C (jW - A)^-1 B + D per bin, plus a 1-norm resolvent condition."""
    n = A.shape[0]
    nb = grid.size
    Y = np.empty((nb, 2, 2), dtype=np.complex128)
    cond = np.empty(nb)
    M = np.empty((n, n), dtype=np.complex128)
    X = np.empty((n, n + 2), dtype=np.complex128)  # [inverse columns | B solve]
    for k in range(nb):
        jw = 1j * grid[k]
        norm_m = 0.0
        for j in range(n):
            col = 0.0
            for i in range(n):
                M[i, j] = -A[i, j] + (jw if i == j else 0.0)
                col += abs(M[i, j])
            if col > norm_m:
                norm_m = col
        for i in range(n):
            for j in range(n):
                X[i, j] = 1.0 if i == j else 0.0
            X[i, n] = B[i, 0]
            X[i, n + 1] = B[i, 1]
        # Gaussian elimination with partial pivoting.
        singular = False
        for c in range(n):
            p = c
            big = abs(M[c, c])
            for r in range(c + 1, n):
                if abs(M[r, c]) > big:
                    big = abs(M[r, c])
                    p = r
            if big == 0.0:
                singular = True
                break
            if p != c:
                for j in range(n):
                    M[c, j], M[p, j] = M[p, j], M[c, j]
                for j in range(n + 2):
                    X[c, j], X[p, j] = X[p, j], X[c, j]
            piv = M[c, c]
            for r in range(c + 1, n):
                fac = M[r, c] / piv
                if fac != 0.0:
                    for j in range(c, n):
                        M[r, j] -= fac * M[c, j]
                    for j in range(n + 2):
                        X[r, j] -= fac * X[c, j]
        if singular:
            cond[k] = np.inf
            Y[k] = 0.0
            continue
        for c in range(n - 1, -1, -1):
            piv = M[c, c]
            for j in range(n + 2):
                acc = X[c, j]
                for r in range(c + 1, n):
                    acc -= M[c, r] * X[r, j]
                X[c, j] = acc / piv
        norm_inv = 0.0
        for j in range(n):
            col = 0.0
            for i in range(n):
                col += abs(X[i, j])
            if col > norm_inv:
                norm_inv = col
        cond[k] = norm_m * norm_inv
        for i in range(2):
            for j in range(2):
                acc = D[i, j] + 0.0j
                for r in range(n):
                    acc += C[i, r] * X[r, n + j]
                Y[k, i, j] = acc
    return Y, cond


def frf(model: LinearModel, grid: np.ndarray, cond_limit: float = 1e12) -> Frf:
    """Tabulate Y(W) = C (jW - A)^-1 B + D on a frequency grid."""
    grid = np.asarray(grid, dtype=float)
    n = model.A.shape[0]
    if n == 0:
        Y = np.broadcast_to(model.D.astype(complex), (grid.size, 2, 2)).copy()
        return Frf(grid=grid, Y=Y)
    Y, cond = _frf_kernel(
        np.ascontiguousarray(model.A, dtype=float),
        np.ascontiguousarray(model.B, dtype=float),
        np.ascontiguousarray(model.C, dtype=float),
        np.ascontiguousarray(model.D, dtype=float),
        np.ascontiguousarray(grid),
    )
    if np.any(cond > cond_limit) or not np.all(np.isfinite(Y)):
        k = int(np.argmax(cond))
        raise ResonantBin(
            f"resolvent condition {cond[k]:.2e} at bin {k} ({grid[k]:.4f} rad/s)"
        )
    return Frf(grid=grid, Y=Y)


def frf_for_params(
    params: GeneratorParams, S: complex, Vterm: complex, grid: np.ndarray
) -> Frf:
    """Equilibrium + linearization + resolvent in one call."""
    eq = solve_equilibrium(params, S, Vterm)
    return frf(linearize(params, eq), grid)
