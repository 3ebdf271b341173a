"""Spectral representation of mean-zero real fields on the unit torus.

A field is stored through its complex Fourier amplitudes ``a_k`` for
``k = 1..K``; the negative modes are implied by conjugate symmetry and the
mean (``k = 0``) is never stored.  The represented function is

    x(xi) = sum_{k=1}^{K} a_k exp(2 pi i k xi) + conj(a_k) exp(-2 pi i k xi).

Most routines operate on plain complex arrays of shape ``(..., K)`` so that
ensembles can be advanced in one vectorised call; :class:`Field` is the
immutable single-state wrapper used at API boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import DomainError, InvariantViolation, NumericalError

FOUR_PI_SQ = 4.0 * np.pi**2


def eigenvalue(k):
    """Eigenvalue ``4 pi^2 k^2`` of ``A = -d^2/dxi^2`` on mode ``k``."""
    k = int(k)
    if k == 0:
        raise DomainError("mode 0 is excluded: fields are mean-zero")
    return FOUR_PI_SQ * k * k


def min_padded_size(K):
    """Smallest physical grid on which cubes of degree-K polynomials are alias-free."""
    return 6 * K + 1


@dataclass(frozen=True)
class SpectralGrid:
    """Mode cutoff ``K`` plus the padded physical grid used for products."""

    K: int
    padded_size: int | None = None

    def __post_init__(self):
        if int(self.K) < 1:
            raise DomainError(f"mode cutoff must be >= 1, got {self.K}")
        object.__setattr__(self, "K", int(self.K))
        n_min = min_padded_size(self.K)
        if self.padded_size is None:
            object.__setattr__(self, "padded_size", sfft.next_fast_len(n_min, real=True))
        elif self.padded_size < n_min:
            raise DomainError(f"padded_size {self.padded_size} < 6K+1 = {n_min}")
        assert self.padded_size >= 4 * self.K

    @cached_property
    def modes(self):
        return np.arange(1, self.K + 1)

    @cached_property
    def eigenvalues(self):
        return FOUR_PI_SQ * self.modes.astype(float) ** 2

    @cached_property
    def nodes(self):
        return np.arange(self.padded_size) / self.padded_size

    # -- transforms -------------------------------------------------------
    def to_physical(self, amps):
        """Samples of the represented function on the padded grid."""
        amps = np.asarray(amps)
        coef = np.zeros(amps.shape[:-1] + (self.padded_size // 2 + 1,), dtype=complex)
        coef[..., 1 : self.K + 1] = amps
        return sfft.irfft(coef, n=self.padded_size, norm="forward", axis=-1)

    def from_physical(self, u):
        """Amplitudes of modes 1..K of a sampled real function (mean dropped)."""
        coef = sfft.rfft(u, axis=-1, norm="forward")
        return coef[..., 1 : self.K + 1]

    # -- norms and inner products on raw amplitude arrays -----------------
    def norm(self, amps, theta=0.0):
        w = self.eigenvalues**theta
        return np.sqrt(2.0 * np.sum(w * np.abs(amps) ** 2, axis=-1))

    def inner(self, a, b):
        return 2.0 * np.real(np.sum(a * np.conj(b), axis=-1))

    def lp_norm(self, amps, p):
        u = self.to_physical(amps)
        return np.mean(np.abs(u) ** p, axis=-1) ** (1.0 / p)

    def semigroup(self, amps, t):
        if t < 0:
            raise DomainError(f"semigroup time must be >= 0, got {t}")
        return amps * np.exp(-self.eigenvalues * t)

    def cube(self, amps):
        """Modes 1..K of u^3 and the physical samples of u."""
        u = self.to_physical(amps)
        with np.errstate(over="ignore", invalid="ignore"):
            u3 = u * u * u
        if not np.all(np.isfinite(u3)):
            raise NumericalError("overflow while cubing the field on the physical grid")
        return self.from_physical(u3), u

    def nonlinear(self, amps):
        """Modes 1..K of u - u^3, with the mean of u^3 discarded."""
        c, _ = self.cube(amps)
        return amps - c

    def zeros(self, *batch):
        return np.zeros(tuple(batch) + (self.K,), dtype=complex)

    def mode_field(self, k=1, h_norm=1.0):
        """Amplitudes of ``h_norm * sqrt(2) cos(2 pi k xi)``, a unit-H-norm mode when h_norm=1."""
        if not 1 <= k <= self.K:
            raise DomainError(f"mode {k} outside 1..{self.K}")
        a = self.zeros()
        a[k - 1] = h_norm / np.sqrt(2.0)
        return a


@dataclass(frozen=True, eq=False)
class Field:
    """Immutable mean-zero real field on the torus."""

    grid: SpectralGrid
    amps: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        a = np.array(self.amps, dtype=complex)
        if a.shape != (self.grid.K,):
            raise DomainError(f"expected {self.grid.K} amplitudes, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise NumericalError("field amplitudes must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "amps", a)

    @classmethod
    def zero(cls, grid):
        return cls(grid, grid.zeros())

    @classmethod
    def mode(cls, grid, k=1, h_norm=1.0):
        return cls(grid, grid.mode_field(k, h_norm))

    @classmethod
    def from_function(cls, grid, fn):
        """Project a callable on [0, 1) onto modes 1..K."""
        return cls(grid, grid.from_physical(fn(grid.nodes)))

    def physical(self):
        return self.grid.to_physical(self.amps)

    def _same_grid(self, other):
        if other.grid.K != self.grid.K:
            raise DomainError("fields live on different grids")

    def __add__(self, other):
        self._same_grid(other)
        return Field(self.grid, self.amps + other.amps)

    def __sub__(self, other):
        self._same_grid(other)
        return Field(self.grid, self.amps - other.amps)

    def __mul__(self, c):
        return Field(self.grid, self.amps * c)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.amps)


def sobolev_norm(x: Field, theta=0.0):
    """``||x||_theta = ||A^{theta/2} x||_H``; theta=0 is the H norm, theta=1 the V norm."""
    return float(x.grid.norm(x.amps, theta))


def h_inner(x: Field, y: Field):
    x._same_grid(y)
    return float(x.grid.inner(x.amps, y.amps))


def apply_semigroup(x: Field, t):
    """``exp(-A t) x``."""
    return Field(x.grid, x.grid.semigroup(x.amps, t))


def nonlinearity(x: Field):
    """Mean-zero projection of ``u - u^3`` truncated to modes 1..K."""
    return Field(x.grid, x.grid.nonlinear(x.amps))


def cubic_mean(x: Field):
    """The mean of ``u^3`` that :func:`nonlinearity` discards.

    Exposed so that the effect of the mean-zero projection can be measured.
    """
    u = x.physical()
    return float(np.mean(u**3))


def cutoff(z):
    """Smooth plateau function: 1 on |z| <= 1, 0 on |z| >= 2, smoothstep between."""
    w = np.clip(np.abs(np.asarray(z, dtype=float)) - 1.0, 0.0, 1.0)
    return 1.0 - w * w * (3.0 - 2.0 * w)


def truncated_nonlinearity(x: Field, rho):
    if rho <= 0:
        raise DomainError(f"truncation radius must be positive, got {rho}")
    scale = float(cutoff(sobolev_norm(x, 1.0) / rho))
    if scale == 0.0:
        return Field.zero(x.grid)
    return nonlinearity(x) * scale


def project_low(x: Field, n):
    if not 1 <= n <= x.grid.K:
        raise DomainError(f"projection order {n} outside 1..{x.grid.K}")
    a = x.amps.copy()
    a[n:] = 0.0
    return Field(x.grid, a)


def project_high(x: Field, n):
    return x - project_low(x, n)


# -- random fields and the inequality suite ----------------------------------

def random_amplitudes(grid, rng, size, decay=1.0, heavy=False, scale=None):
    """Random amplitude arrays with spectrum ``k^-decay``.

    ``heavy`` draws Student-t(1.5) coefficients instead of Gaussians.  Overall
    scales are log-uniform over [1e-2, 1e1] unless ``scale`` is given, so
    the samples visit both the linear and the cubic regime.
    """
    shape = (size, grid.K)
    if heavy:
        re, im = rng.standard_t(1.5, shape), rng.standard_t(1.5, shape)
    else:
        re, im = rng.standard_normal(shape), rng.standard_normal(shape)
    a = (re + 1j * im) * grid.modes.astype(float) ** (-decay)
    a /= np.maximum(grid.norm(a)[:, None], 1e-300)
    if scale is None:
        scale = 10.0 ** rng.uniform(-2.0, 1.0, size)
    return a * np.reshape(scale, (-1, 1))


@dataclass
class InequalityReport:
    samples: int
    max_energy_product: float  # max <x, N(x)>, bound 1/4
    max_l4_ratio: float  # max ||x||_L4^4 / (||x||_V^2 ||x||_H^2), bound 1
    min_monotonicity: float  # min <x-y, x^3-y^3>, bound 0
    ratios: dict  # empirical constants of the C-inequalities

    def as_rows(self):
        rows = [
            ("energy_product", self.max_energy_product, 0.25),
            ("l4_ratio", self.max_l4_ratio, 1.0),
            ("monotonicity_min", self.min_monotonicity, 0.0),
        ]
        rows += [(k, v, float("nan")) for k, v in self.ratios.items()]
        return rows


DEFAULT_RATIO_CEILING = 1.0e3


def verify_inequality_suite(samples, rng_seed=0, K=32, tol=1e-9, ceiling=DEFAULT_RATIO_CEILING,
                            batch=2000):
    """Check the functional inequalities on random fields.

    The constant-free inequalities (energy product <= 1/4, L4 interpolation,
    monotonicity of the cube) raise :class:`InvariantViolation` if broken by
    more than ``tol``.  For the inequalities with unspecified constants the
    largest observed ratio is reported and must stay below ``ceiling``.
    """
    if samples < 1:
        raise DomainError("samples must be >= 1")
    grid = SpectralGrid(K)
    rng = np.random.default_rng(rng_seed)
    worst = dict(energy=-np.inf, l4=0.0, mono=np.inf)
    ratios = dict(nv=0.0, nxy_v=0.0, nxy_h_quarter=0.0, nh_sixth=0.0)

    def ratio(num, den):
        den = np.asarray(den)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)

    done = 0
    while done < samples:
        m = min(batch, samples - done)
        kinds = rng.integers(0, 4, m)
        x = np.empty((m, grid.K), dtype=complex)
        y = np.empty_like(x)
        for kind in range(4):
            sel = kinds == kind
            n = int(sel.sum())
            decay, heavy = [(0.6, True), (2.0, False), (1.0, True), (1.2, False)][kind]
            x[sel] = random_amplitudes(grid, rng, n, decay, heavy)
            y[sel] = random_amplitudes(grid, rng, n, decay, heavy)
        ux, uy = grid.to_physical(x), grid.to_physical(y)
        hx, vx = grid.norm(x), grid.norm(x, 1.0)
        hy, vy = grid.norm(y), grid.norm(y, 1.0)
        l4x = np.mean(ux**4, axis=-1)

        energy = np.mean(ux * (ux - ux**3), axis=-1)
        l4r = ratio(l4x, vx**2 * hx**2)
        mono = np.mean((ux - uy) * (ux**3 - uy**3), axis=-1)
        if np.any(energy > 0.25 + tol):
            raise InvariantViolation(f"<x, N(x)> = {energy.max()!r} exceeds 1/4")
        if np.any(l4x > vx**2 * hx**2 * (1 + tol) + tol):
            raise InvariantViolation(f"L4 interpolation ratio {l4r.max()!r} exceeds 1")
        if np.any(mono < -tol):
            raise InvariantViolation(f"<x-y, x^3-y^3> = {mono.min()!r} is negative")
        worst["energy"] = max(worst["energy"], float(energy.max()))
        worst["l4"] = max(worst["l4"], float(l4r.max()))
        worst["mono"] = min(worst["mono"], float(mono.min()))

        nx, ny = grid.nonlinear(x), grid.nonlinear(y)
        d = x - y
        dn = nx - ny
        q = lambda a: grid.norm(a, 0.5) ** 2  # ||A^{1/4} a||^2
        ratios["nv"] = max(ratios["nv"], float(ratio(grid.norm(nx, 1.0), vx + vx**3).max()))
        ratios["nxy_v"] = max(ratios["nxy_v"], float(
            ratio(grid.norm(dn, 1.0), (1 + vx**2 + vy**2) * grid.norm(d, 1.0)).max()))
        ratios["nxy_h_quarter"] = max(ratios["nxy_h_quarter"], float(
            ratio(grid.norm(dn), (1 + q(x) + q(y)) * grid.norm(d)).max()))
        ratios["nh_sixth"] = max(ratios["nh_sixth"], float(
            ratio(grid.norm(nx), 1 + grid.norm(x, 1.0 / 3.0) ** 3).max()))
        done += m

    for name, val in ratios.items():
        if not val < ceiling:
            raise InvariantViolation(f"empirical constant {name} = {val!r} above ceiling {ceiling}")
    return InequalityReport(samples, worst["energy"], worst["l4"], worst["mono"], ratios)
