"""Algebraic network model: Ybus assembly and Newton-Raphson power flow.

Used to initialize simulation scenarios (dispatch -> bus voltages).  Loads are
constant admittances folded into Ybus, so the power-flow injections are the
machine injections alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoEquilibrium


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    R: float
    X: float

    @property
    def y(self) -> complex:
        return 1.0 / complex(self.R, self.X)


@dataclass
class Network:
    """Buses, series branches and static shunt admittances; bus 0 conventionally slack."""

    n_bus: int
    branches: list
    shunts: dict = field(default_factory=dict)
    slack: int = 0

    def ybus(self) -> np.ndarray:
        Y = np.zeros((self.n_bus, self.n_bus), dtype=complex)
        for br in self.branches:
            y = br.y
            i, j = br.from_bus, br.to_bus
            Y[i, i] += y
            Y[j, j] += y
            Y[i, j] -= y
            Y[j, i] -= y
        for bus, y in self.shunts.items():
            Y[bus, bus] += y
        return Y


def newton_power_flow(
    Y: np.ndarray,
    slack: int,
    slack_V: complex,
    pv: dict,
    pq: dict | None = None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """Polar Newton-Raphson power flow.

    pv maps bus -> (P, Vmag); pq maps bus -> (P, Q).  Returns the complex bus
    voltage vector.  Injections are net machine injections (loads are assumed
    to live inside Y as shunt admittances).
    """
    pq = pq or {}
    n = Y.shape[0]
    buses = set(range(n))
    if set(pv) | set(pq) | {slack} != buses or set(pv) & set(pq):
        raise ConfigError("every bus must be exactly one of slack, PV, PQ")

    Vm = np.ones(n)
    th = np.zeros(n)
    Vm[slack] = abs(slack_V)
    th[slack] = np.angle(slack_V)
    for b, (_, vset) in pv.items():
        Vm[b] = vset

    Pset = np.zeros(n)
    Qset = np.zeros(n)
    for b, (p, _) in pv.items():
        Pset[b] = p
    for b, (p, q) in pq.items():
        Pset[b] = p
        Qset[b] = q

    ang_idx = sorted(buses - {slack})
    mag_idx = sorted(pq)
    G, B = Y.real, Y.imag

    def injections(Vm, th):
        V = Vm * np.exp(1j * th)
        S = V * np.conj(Y @ V)
        return S.real, S.imag

    for _ in range(max_iter):
        P, Q = injections(Vm, th)
        mis = np.concatenate([Pset[ang_idx] - P[ang_idx], Qset[mag_idx] - Q[mag_idx]])
        if np.linalg.norm(mis, np.inf) < tol:
            return Vm * np.exp(1j * th)

        # Standard polar Jacobian blocks.
        V = Vm * np.exp(1j * th)
        nA, nM = len(ang_idx), len(mag_idx)
        J = np.zeros((nA + nM, nA + nM))
        for a, i in enumerate(ang_idx):
            for b, j in enumerate(ang_idx):
                if i == j:
                    J[a, b] = -Q[i] - B[i, i] * Vm[i] ** 2
                else:
                    J[a, b] = Vm[i] * Vm[j] * (
                        G[i, j] * np.sin(th[i] - th[j]) - B[i, j] * np.cos(th[i] - th[j])
                    )
            for b, j in enumerate(mag_idx):
                if i == j:
                    J[a, nA + b] = P[i] / Vm[i] + G[i, i] * Vm[i]
                else:
                    J[a, nA + b] = Vm[i] * (
                        G[i, j] * np.cos(th[i] - th[j]) + B[i, j] * np.sin(th[i] - th[j])
                    )
        for a, i in enumerate(mag_idx):
            for b, j in enumerate(ang_idx):
                if i == j:
                    J[nA + a, b] = P[i] - G[i, i] * Vm[i] ** 2
                else:
                    J[nA + a, b] = -Vm[i] * Vm[j] * (
                        G[i, j] * np.cos(th[i] - th[j]) + B[i, j] * np.sin(th[i] - th[j])
                    )
            for b, j in enumerate(mag_idx):
                if i == j:
                    J[nA + a, nA + b] = Q[i] / Vm[i] - B[i, i] * Vm[i]
                else:
                    J[nA + a, nA + b] = Vm[i] * (
                        G[i, j] * np.sin(th[i] - th[j]) - B[i, j] * np.cos(th[i] - th[j])
                    )
        try:
            dx = np.linalg.solve(J, mis)
        except np.linalg.LinAlgError as exc:
            raise NoEquilibrium("singular power-flow Jacobian") from exc
        th[ang_idx] += dx[:nA]
        Vm[mag_idx] += dx[nA:]
    raise NoEquilibrium("power flow did not converge")
