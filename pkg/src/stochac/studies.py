"""End-to-end studies behind the command-line subcommands and the acceptance suite.

Each study returns plain result objects; :mod:`stochac.cli` renders them to
CSV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from . import ergodics as erg
from .integrator import (
    SimConfig,
    calibrate_young_constant,
    comparison_ode,
    comparison_plateau,
    run_ensemble,
)
from .noise import NoiseModel, convolution_sup_norms, k_gamma, sample_stable_increment
from .spectral import random_amplitudes
from .seeding import AUXILIARY_STREAM, trajectory_rng

# index offsets separating independent ensembles under one master seed
PRE_RUN_OFFSET = 10**7
TWIN_OFFSET = 2 * 10**7
HITTING_OFFSET = 3 * 10**7


@dataclass
class Check:
    name: str
    estimate: float
    reference: float
    tolerance: float
    passed: bool


# -- subordinator and noise ------------------------------------------------------------

def laplace_check(rho, n=100_000, seed=0, dt=1.0, eta=1.0):
    """``mean(exp(-eta S_dt))`` against ``exp(-dt eta^rho)`` with a 3-SE tolerance."""
    rng = trajectory_rng(seed, int(rho * 1e6), AUXILIARY_STREAM)
    v = np.exp(-eta * sample_stable_increment(dt, rho, rng, size=n))
    m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))
    ref = math.exp(-dt * eta**rho)
    return Check(f"laplace_rho_{rho:g}", m, ref, 3 * se, abs(m - ref) <= 3 * se)


def levy_cdf_check(n=100_000, seed=0, s=1.0):
    """At ``rho = 1/2`` the unit-time increment is Levy: ``P(S <= s) = erfc(1/(2 sqrt s))``."""
    rng = trajectory_rng(seed, 500_000, AUXILIARY_STREAM)
    v = sample_stable_increment(1.0, 0.5, rng, size=n) <= s
    m = float(v.mean())
    se = math.sqrt(m * (1 - m) / n)
    ref = float(erfc(1.0 / (2.0 * math.sqrt(s))))
    return Check("levy_cdf_rho_0.5", m, ref, 3 * se, abs(m - ref) <= 3 * se)


@dataclass
class HeavyTailStudy:
    sups: np.ndarray
    moments: dict  # p -> (estimate at n1, estimate at n2)
    tail: erg.TailIndex

    def relative_change(self, p):
        a, b = self.moments[p]
        return abs(b - a) / a


def heavy_tail_study(model: NoiseModel, n_paths=10_000, T=1.0, dt=1e-3, ps=(1.0, 2.5), seed=0,
                     top_fraction=0.05):
    """``sup_{t<=T} ||Z_t||_H`` samples, nested-prefix moment estimates and the Hill index."""
    sups = convolution_sup_norms(model, T, dt, n_paths, seed)
    half = n_paths // 2
    moments = {p: tuple(erg.moment_stability(sups, p, [half, n_paths])) for p in ps}
    return HeavyTailStudy(sups, moments, erg.tail_index(sups, top_fraction, seed=seed))


def noise_checks(cfg, n=100_000):
    out = [laplace_check(r, n, cfg.seed) for r in (0.6, 0.75, 0.9)]
    out.append(levy_cdf_check(n, cfg.seed))
    rng = np.random.default_rng(cfg.seed)
    pareto = rng.pareto(1.5, n) + 1.0
    ti = erg.tail_index(pareto, cfg.top_fraction, seed=cfg.seed)
    out.append(Check("hill_pareto_1.5", ti.estimate, 1.5, 0.1, abs(ti.estimate - 1.5) <= 0.1))
    model = NoiseModel(cfg.alpha, cfg.theta, cfg.delta_bound, cfg.K)
    kg = k_gamma(model, 1.0)
    out.append(Check("k_gamma_1", kg.value, kg.total_upper, kg.tail_bound or 0.0, not kg.diverges))
    return out


# -- comparison bound and forgetting ----------------------------------------------------

@dataclass
class ComparisonStudy:
    C: float
    C_needed: float
    times: np.ndarray
    h: np.ndarray  # (M, n) ||Y_t||_H^2
    g: np.ndarray  # (M, n) comparison solution
    K_T: np.ndarray
    plateau_ok: np.ndarray
    forgetting_ratio: np.ndarray  # per noise path: max/min of sup_{[T/2,T]} ||Y||_H over x0
    x0_norms: tuple

    @property
    def violations(self):
        return int(np.sum(self.h > self.g * (1 + 1e-12)))


def comparison_study(config: SimConfig, n_paths=100, x0_norms=(1.0, 10.0, 100.0),
                     calibration_paths=1000, calibration_dt=1e-3, threads=1):
    """Pathwise ``||Y_t||_H^2 <= g(t)`` and initial-condition forgetting under shared noise."""
    C, need = calibrate_young_constant(config.with_(dt=calibration_dt, T=config.T,
                                                     record_stride=1),
                                       calibration_paths, threads=threads)
    cfg = config.with_(scheme="y_split", record_stride=1)
    grid = cfg.grid()
    x0 = np.stack([grid.mode_field(1, r) for _ in range(n_paths) for r in x0_norms])
    idx = np.repeat(np.arange(n_paths), len(x0_norms))
    res = run_ensemble(cfg, x0, indices=idx, threads=threads, observables={
        "h": lambda s: s.grid.norm(s.y) ** 2,
        "zv": lambda s: s.grid.norm(s.z, 1.0),
    })
    t = res.times
    h = res.records["h"]
    K_T = np.sqrt(C * (1.0 + np.max(res.records["zv"], axis=1) ** 4))
    g = np.stack([comparison_ode(h[i, 0], K_T[i], t) for i in range(len(h))])
    late = t >= cfg.T / 2 - 1e-12
    plateau_ok = np.max(g[:, late], axis=1) <= comparison_plateau(K_T, cfg.T) * (1 + 1e-12)
    sup_late = np.sqrt(np.max(h[:, late], axis=1)).reshape(n_paths, len(x0_norms))
    ratio = sup_late.max(axis=1) / sup_late.min(axis=1)
    return ComparisonStudy(C, need, t, h, g, K_T, plateau_ok, ratio, tuple(x0_norms))


# -- contraction ------------------------------------------------------------------------

def contraction_study(config: SimConfig, n_pairs=100, t_end=0.1, seed=0, scale=3.0):
    """``||X_t - X'_t||_H / ||X_0 - X'_0||_H`` at ``t_end`` for synchronously coupled pairs."""
    cfg = config.with_(T=t_end, record_stride=1)
    cfg = cfg.with_(record_stride=cfg.n_steps)
    grid = cfg.grid()
    rng = np.random.default_rng(seed)
    a = random_amplitudes(grid, rng, n_pairs, decay=1.0, scale=scale * rng.uniform(0.1, 1, n_pairs))
    b = random_amplitudes(grid, rng, n_pairs, decay=1.0, scale=scale * rng.uniform(0.1, 1, n_pairs))
    x0 = np.concatenate([a, b])
    idx = np.concatenate([np.arange(n_pairs), np.arange(n_pairs)])
    res = run_ensemble(cfg, x0, indices=idx, keep_final=True)
    d0 = grid.norm(a - b)
    d1 = grid.norm(res.final[:n_pairs] - res.final[n_pairs:])
    bound = math.exp(-(4 * math.pi**2 - 1) * t_end)
    return d1 / d0, bound


# -- occupation / ldp -------------------------------------------------------------------

@dataclass
class OccupationStudy:
    first: dict  # name -> OccupationStats, ensemble from x0 = 0
    second: dict  # name -> OccupationStats, ensemble from a randomised initial law
    z_scores: dict


def occupation_study(config: SimConfig, n_paths, observables, pre_run_T=2.0, pre_run_norm=10.0,
                     burn_in=0.0, threads=1):
    """Twin ensembles: one started at 0, one from the end states of an independent pre-run."""
    grid = config.grid()
    first = erg.occupation_ensemble(config, grid.zeros(), n_paths, observables, threads=threads,
                                    burn_in=burn_in)
    pre = run_ensemble(config.with_(T=pre_run_T, record_stride=max(1, round(pre_run_T / config.dt))),
                       grid.mode_field(1, pre_run_norm),
                       indices=np.arange(n_paths) + PRE_RUN_OFFSET, keep_final=True, threads=threads)
    second = erg.occupation_ensemble(config, pre.final, n_paths, observables,
                                     first_index=TWIN_OFFSET, threads=threads, burn_in=burn_in)
    z = {k: erg.twin_agreement(first[k], second[k])[1] for k in first}
    return OccupationStudy(first, second, z)


@dataclass
class LDPStudy:
    scgf: erg.SCGF
    rate: erg.RateFunction
    mean: float
    se: float

    @property
    def second_differences(self):
        v = self.scgf.values
        return v[2:] - 2 * v[1:-1] + v[:-2]


def ldp_study(stats: erg.OccupationStats, lam=None, points=21):
    L = stats.samples
    if lam is None:
        lam = erg.default_lambda_grid(L, stats.T, points)
    curve = erg.scgf(L, lam, stats.T)
    rate = erg.legendre(curve, erg.rate_grid(L))
    return LDPStudy(curve, rate, stats.mean, stats.se)


# -- recurrence -------------------------------------------------------------------------

@dataclass
class RecurrenceStudy:
    level: float
    records: list  # HittingRecord per level
    fits: list  # TailFit or None (all censored)
    q: float
    moments: list  # (label, ExpMoment)


def stationary_level(config: SimConfig, n_paths, quantile, burn_in_T=2.0, delta=0.5, threads=1):
    """``quantile`` of ``||X_T||_delta`` after a burn-in of ``burn_in_T`` from 0."""
    cfg = config.with_(T=burn_in_T, record_stride=max(1, round(burn_in_T / config.dt)))
    res = run_ensemble(cfg, cfg.grid().zeros(), indices=np.arange(n_paths) + PRE_RUN_OFFSET,
                       observables={"nd": lambda s: s.grid.norm(s.x, delta)}, threads=threads)
    return float(np.quantile(res.records["nd"][:, -1], quantile))


def recurrence_study(config: SimConfig, level, n_paths=2000, delta=0.5, n_max=50, multipliers=(1, 2),
                     threads=1):
    levels = [level * m for m in multipliers]
    records, _ = erg.simulate_hitting(config, config.grid().zeros(), levels, delta, n_max, n_paths,
                                      first_index=HITTING_OFFSET, threads=threads)
    fits = []
    for r in records:
        try:
            fits.append(erg.recurrence_tail(r))
        except erg.EstimationError:
            fits.append(None)
    base = fits[0]
    q = base.q if base is not None else 1.0
    moments = []
    if base is not None and 0 < q < 1:
        for lab, lam in (("half_log_q", -0.5 * math.log(q)), ("two_log_q", -2.0 * math.log(q))):
            for m, r, f in zip(multipliers, records, fits):
                qq = f.q if f is not None else 1.0
                moments.append((f"{lab}@x{m:g}", erg.exp_moment_tau(r, lam, qq)))
    return RecurrenceStudy(level, records, fits, q, moments)
