"""Explicit controls steering the deterministic equation to a target.

Two phases: the control is off on ``[0, T1]`` so the dissipative flow
smooths the state; on ``[T1, T]`` the state is forced along the straight
path ``z(t)`` from ``x(T1)`` to the target with ``u = z' + A z - N(z)``,
which makes ``z`` an exact solution of the controlled equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, UsageError
from .integrator import solve_deterministic
from .spectral import Field, apply_semigroup, sobolev_norm


@dataclass
class ControlPlan:
    times: np.ndarray  # left endpoints of the control steps
    u: np.ndarray  # (n_steps, K) piecewise-constant control
    phase_split: float
    x_split: Field  # state reached at the end of the free phase
    dt: float
    T: float

    @property
    def grid(self):
        return self.x_split.grid

    @property
    def sup_v_norm(self):
        """``sup_t ||u(t)||_V`` over the plan."""
        return float(np.max(self.grid.norm(self.u, 1.0))) if len(self.u) else 0.0

    def fields(self):
        return [Field(self.grid, a) for a in self.u]


def mollify_target(a: Field, eps, t_max=1.0):
    """``exp(-s A) a`` with the largest ``s <= t_max`` such that ``||a - exp(-sA) a||_H <= eps/4``."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    gap = lambda s: sobolev_norm(a - apply_semigroup(a, s), 0.0)
    if gap(t_max) <= eps / 4:
        return apply_semigroup(a, t_max), t_max
    lo, hi = 0.0, t_max
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if gap(mid) <= eps / 4 else (lo, mid)
    return apply_semigroup(a, lo), lo


def synthesize_control(x0: Field, a: Field, T, dt, T1):
    if not 0 < T1 < T:
        raise DomainError(f"need 0 < T1 < T, got T1={T1}, T={T}")
    grid = x0.grid
    n_steps = math.ceil(T / dt - 1e-9)
    n1 = int(round(T1 / dt))
    if not 0 < n1 < n_steps:
        raise DomainError("T1 must fall strictly inside the step grid")
    lam = grid.eigenvalues
    with np.errstate(over="ignore", invalid="ignore"):
        Aa = lam * a.amps
        rough = not np.all(np.isfinite(Aa)) or not np.isfinite(grid.norm(Aa))
    if rough:
        raise UsageError("target too rough for this grid: ||A a|| is not finite")

    free = solve_deterministic(x0, None, n1 * dt, dt, record_stride=n1)
    x1 = free.amps[-1]
    t1 = n1 * dt
    span = n_steps * dt - t1
    velocity = (a.amps - x1) / span
    u = np.zeros((n_steps, grid.K), dtype=complex)
    t = np.arange(n1, n_steps) * dt
    z = x1 + np.multiply.outer(t - t1, velocity)
    u[n1:] = velocity + lam * z - grid.nonlinear(z)
    return ControlPlan(np.arange(n_steps) * dt, u, t1, Field(grid, x1), dt, n_steps * dt)


@dataclass
class ReachabilityReport:
    residual_v: float
    residual_h: float
    eps: float
    passed: bool
    sup_control_v: float
    x_T: Field


def verify_reachability(x0: Field, a: Field, T, dt, T1, eps):
    if not eps > 0:
        raise DomainError("eps must be positive")
    plan = synthesize_control(x0, a, T, dt, T1)
    traj = solve_deterministic(x0, plan.u, plan.T, dt, record_stride=len(plan.u))
    xT = Field(x0.grid, traj.amps[-1])
    d = xT - a
    rv, rh = sobolev_norm(d, 1.0), sobolev_norm(d, 0.0)
    return ReachabilityReport(rv, rh, eps, rv < eps, plan.sup_v_norm, xT)
