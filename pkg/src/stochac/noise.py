"""Subordinated cylindrical Brownian noise.

The driving process is ``L_t = W_{S_t}`` where ``S`` is an increasing
``alpha/2``-stable subordinator.  Conditional on the subordinator increment
``dS`` over a step, the noise increment of mode ``k`` is Gaussian with
variance ``beta_k^2 dS``, so the whole noise is a Gaussian scale mixture
with heavy (index ``alpha``) tails.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError
from .seeding import GAUSSIAN_STREAM, SUBORDINATOR_STREAM, trajectory_rng
from .spectral import FOUR_PI_SQ, Field, SpectralGrid

_TINY = np.finfo(float).tiny
_EPS = np.finfo(float).eps


def _check_rho(rho):
    if not 0.0 < rho < 1.0:
        raise DomainError(f"stability index rho must lie in (0, 1), got {rho}")


def sample_stable_increment(dt, rho, rng, size=None):
    """Increment over ``dt`` of the standard positive ``rho``-stable subordinator.

    Kanter's representation: with ``U ~ U(0,1)`` and ``E ~ Exp(1)``,

        S = sin(rho pi U) / sin(pi U)^(1/rho) * sin((1-rho) pi U)^((1-rho)/rho) / E^((1-rho)/rho)

    has Laplace transform ``exp(-eta^rho)``; scaling by ``dt^(1/rho)`` gives
    ``exp(-dt eta^rho)``.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    _check_rho(rho)
    u = np.clip(rng.random(size), _EPS, 1.0 - _EPS)
    e = np.maximum(rng.standard_exponential(size), _TINY)
    b = (1.0 - rho) / rho
    pu = np.pi * u
    s = np.sin(rho * pu) / np.sin(pu) ** (1.0 / rho) * np.sin((1.0 - rho) * pu) ** b / e**b
    out = dt ** (1.0 / rho) * s
    return float(out) if size is None else out


@dataclass(frozen=True)
class SubordinatorPath:
    dt: float
    increments: np.ndarray

    @cached_property
    def cumulative(self):
        """``S`` at ``0, dt, 2dt, ...``, starting from ``S_0 = 0``."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    @property
    def times(self):
        return self.dt * np.arange(len(self.increments) + 1)


def sample_path(T, dt, rho, rng):
    if not (dt > 0 and T >= dt):
        raise DomainError(f"need T >= dt > 0, got T={T}, dt={dt}")
    n = math.ceil(T / dt - 1e-9)
    inc = sample_stable_increment(dt, rho, rng, size=n)
    return SubordinatorPath(dt, inc)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Stability index and per-mode intensities ``beta_k`` of ``Q_beta``.

    ``betas`` default to ``lambda_k^(-theta/2)``.  With ``strict`` the
    admissible band ``delta lambda_k^(-theta/2) <= |beta_k| <=
    lambda_k^(-theta'/2) / delta`` with ``3/2 < theta' <= theta < 2`` is
    enforced; degenerate models (e.g. zero noise) need ``strict=False``.
    """

    alpha: float = 1.5
    theta: float = 1.8
    delta_bound: float = 1.0
    K: int = 64
    betas: np.ndarray | None = None
    theta_prime: float | None = None
    strict: bool = True

    def __post_init__(self):
        if self.theta_prime is None:
            object.__setattr__(self, "theta_prime", self.theta)
        lam = FOUR_PI_SQ * np.arange(1, self.K + 1, dtype=float) ** 2
        default = self.betas is None
        betas = lam ** (-self.theta / 2) if default else np.array(self.betas, dtype=float)
        if betas.shape != (self.K,):
            raise DomainError(f"expected {self.K} coefficients, got shape {betas.shape}")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "_default_betas", default)
        if self.strict:
            if not 1.0 < self.alpha < 2.0:
                raise DomainError(f"alpha must lie in (1, 2), got {self.alpha}")
            if not 1.5 < self.theta_prime <= self.theta < 2.0:
                raise DomainError(f"need 3/2 < theta' <= theta < 2, got {self.theta_prime}, {self.theta}")
            if not self.delta_bound > 0:
                raise DomainError("delta_bound must be positive")
            lo = self.delta_bound * lam ** (-self.theta / 2)
            hi = lam ** (-self.theta_prime / 2) / self.delta_bound
            b = np.abs(betas)
            if np.any(b < lo * (1 - 1e-12)) or np.any(b > hi * (1 + 1e-12)):
                raise DomainError("coefficients violate the admissible decay band")

    @classmethod
    def silent(cls, K, alpha=1.5):
        """Zero-intensity model: the dynamics become deterministic."""
        return cls(alpha=alpha, K=K, betas=np.zeros(K), strict=False)

    @property
    def rho(self):
        return self.alpha / 2.0

    @cached_property
    def grid(self):
        return SpectralGrid(self.K)

    def gaussian_increments(self, dS, g):
        """Map subordinator increments ``dS`` (...,) and normals ``g`` (..., K, 2) to mode increments."""
        scale = np.sqrt(np.asarray(dS) / 2.0)[..., None]
        return self.betas * scale * (g[..., 0] + 1j * g[..., 1])


def noise_increment(model: NoiseModel, dS, rng):
    """``Q_beta dW`` over a subordinated time increment ``dS``."""
    if not dS > 0:
        raise DomainError(f"subordinated increment must be positive, got {dS}")
    g = rng.standard_normal((model.K, 2))
    return Field(model.grid, model.gaussian_increments(dS, g))


@dataclass(frozen=True)
class ConvolutionState:
    z: Field
    t: float = 0.0


def advance_convolution(state: ConvolutionState, dt, dS, model: NoiseModel, rng):
    """Exponential-Euler step ``z_k <- exp(-lambda_k dt) z_k + beta_k dW_k``."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    inc = noise_increment(model, dS, rng)
    z = state.z.grid.semigroup(state.z.amps, dt) + inc.amps
    return ConvolutionState(Field(state.z.grid, z), state.t + dt)


@dataclass(frozen=True)
class KGamma:
    value: float  # 2 * sum over stored modes
    tail_bound: float | None  # bound on the omitted modes k > K
    diverges: bool

    @property
    def total_upper(self):
        if self.diverges or self.tail_bound is None:
            return math.inf
        return self.value + self.tail_bound


def k_gamma(model: NoiseModel, gamma):
    """``K_gamma = sum_{k != 0} lambda_k^gamma beta_k^2`` over the stored modes, plus a tail bound."""
    lam = FOUR_PI_SQ * np.arange(1, model.K + 1, dtype=float) ** 2
    terms = lam**gamma * model.betas**2
    value = 2.0 * math.fsum(terms)
    if not np.any(model.betas):
        return KGamma(0.0, 0.0, False)
    if model._default_betas or model.strict:
        # |beta_k| >= delta lambda_k^(-theta/2) gives divergence, the upper
        # band lambda_k^(-theta'/2)/delta gives the integral-comparison tail.
        lower = 2.0 * (gamma - model.theta)
        upper = 2.0 * (gamma - model.theta_prime)
        diverges = lower >= -1.0
        if diverges:
            return KGamma(value, math.inf, True)
        if upper >= -1.0:
            return KGamma(value, math.inf, False)
        c = 2.0 * FOUR_PI_SQ ** (gamma - model.theta_prime)
        if not model._default_betas:
            c /= model.delta_bound**2
        tail = c * model.K ** (upper + 1.0) / (-(upper + 1.0))
        return KGamma(value, tail, False)
    return KGamma(value, None, False)


class NoiseStream:
    """Block-buffered per-trajectory noise for a batch of trajectories.

    Member ``i`` draws only from the generators of trajectory
    ``indices[i]``; the draw sequence does not depend on the block size or
    on the other members of the batch.
    """

    def __init__(self, model: NoiseModel, dt, seed, indices, block=64):
        self.model = model
        self.dt = dt
        self.block = block
        self.indices = np.asarray(indices)
        self._sub = [trajectory_rng(seed, i, SUBORDINATOR_STREAM) for i in self.indices]
        self._gau = [trajectory_rng(seed, i, GAUSSIAN_STREAM) for i in self.indices]
        self._pos = block
        self._ds = self._g = None

    def _refill(self):
        b, K = self.block, self.model.K
        m = len(self._sub)
        self._ds = np.empty((m, b))
        self._g = np.empty((m, b, K, 2))
        for i in range(m):
            self._ds[i] = sample_stable_increment(self.dt, self.model.rho, self._sub[i], size=b)
            self._g[i] = self._gau[i].standard_normal((b, K, 2))
        self._pos = 0

    def next(self):
        """Subordinator increments (m,) and mode increments (m, K) for one step."""
        if self._pos >= self.block:
            self._refill()
        ds = self._ds[:, self._pos]
        xi = self.model.gaussian_increments(ds, self._g[:, self._pos])
        self._pos += 1
        return ds, xi

    def keep(self, mask):
        """Drop members where ``mask`` is False (draw sequences of the rest are untouched)."""
        mask = np.asarray(mask, dtype=bool)
        self.indices = self.indices[mask]
        self._sub = [r for r, k in zip(self._sub, mask) if k]
        self._gau = [r for r, k in zip(self._gau, mask) if k]
        if self._ds is not None:
            self._ds = self._ds[mask]
            self._g = self._g[mask]


def convolution_sup_norms(model: NoiseModel, T, dt, n_paths, seed, theta=0.0, chunk=512,
                          first_index=0):
    """``sup_{t <= T} ||Z_t||_theta`` for ``n_paths`` independent convolution paths.

    The supremum is taken over the step grid; ``Z_0 = 0``.
    """
    n_steps = math.ceil(T / dt - 1e-9)
    lam = model.grid.eigenvalues
    decay = np.exp(-lam * dt)
    w = lam**theta
    out = np.empty(n_paths)
    for start in range(0, n_paths, chunk):
        idx = np.arange(start, min(start + chunk, n_paths)) + first_index
        stream = NoiseStream(model, dt, seed, idx)
        z = np.zeros((len(idx), model.K), dtype=complex)
        best = np.zeros(len(idx))
        for _ in range(n_steps):
            _, xi = stream.next()
            z = decay * z + xi
            np.maximum(best, 2.0 * np.sum(w * (z.real**2 + z.imag**2), axis=-1), out=best)
        out[start : start + len(idx)] = np.sqrt(best)
    return out
