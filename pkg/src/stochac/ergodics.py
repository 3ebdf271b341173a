"""Ensemble statistics: occupation averages, moments, recurrence, SCGF and tails."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import EstimationError, UsageError
from .integrator import SimConfig, run_ensemble

KINDS = ("h_norm", "v_norm", "sobolev_norm", "mode_amplitude", "bounded_custom")


@dataclass(frozen=True)
class Observable:
    """Scalar functional of a field, optionally clipped at ``clip``.

    ``order`` is the Sobolev order for ``sobolev_norm``/``bounded_custom``
    and the mode index for ``mode_amplitude``.  ``bounded_custom`` is
    ``clip ∧ ||x||_order`` and requires a clip level.
    """

    name: str
    kind: str
    order: float = 0.0
    clip: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown observable kind {self.kind!r}")
        if self.kind == "bounded_custom" and not (self.clip and self.clip > 0):
            raise UsageError("bounded_custom observables need a positive clip")

    def __call__(self, grid, amps):
        if self.kind == "h_norm":
            v = grid.norm(amps)
        elif self.kind == "v_norm":
            v = grid.norm(amps, 1.0)
        elif self.kind == "mode_amplitude":
            v = np.abs(amps[..., int(self.order) - 1])
        else:
            v = grid.norm(amps, self.order)
        return v if self.clip is None else np.minimum(v, self.clip)

    @property
    def bounds(self):
        return (0.0, math.inf if self.clip is None else self.clip)


def default_panel():
    return (
        Observable("clipped_h", "bounded_custom", 0.0, 10.0),
        Observable("mode1", "mode_amplitude", 1, 10.0),
        Observable("clipped_v", "bounded_custom", 1.0, 10.0),
    )


def parse_observable(text):
    """``kind[:order][@clip]`` e.g. ``bounded_custom:0@10`` or ``mode_amplitude:1``."""
    clip = None
    if "@" in text:
        text, c = text.split("@", 1)
        clip = float(c)
    kind, _, order = text.partition(":")
    return Observable(f"{kind}{':' + order if order else ''}{'@' + str(clip) if clip else ''}",
                      kind, float(order) if order else 0.0, clip)


# -- occupation measures ---------------------------------------------------------

def occupation_average(times, values):
    """``(1/T) int_0^T f(X_s) ds`` by the trapezoidal rule over recorded instants.

    ``values`` may carry a leading ensemble axis.  Recording must be dense:
    the largest gap may not exceed 1% of the horizon.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    T = times[-1] - times[0]
    if len(times) < 2 or T <= 0:
        raise UsageError("need at least two recorded instants spanning a positive horizon")
    if np.max(np.diff(times)) > 0.01 * T * (1 + 1e-9):
        raise UsageError("recording too sparse: record_stride * dt must be <= 0.01 T")
    return np.trapezoid(values, times, axis=-1) / T


@dataclass
class OccupationStats:
    T: float
    samples: np.ndarray
    bounds: tuple = (-math.inf, math.inf)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.size < 1:
            raise UsageError("empty ensemble")
        lo, hi = self.bounds
        if np.any(self.samples < lo - 1e-12) or np.any(self.samples > hi + 1e-12):
            raise EstimationError("occupation average outside the observable's range")

    @property
    def M(self):
        return len(self.samples)

    @property
    def mean(self):
        return float(np.mean(self.samples))

    @property
    def se(self):
        return float(np.std(self.samples, ddof=1) / math.sqrt(self.M)) if self.M > 1 else math.inf

    def histogram(self, bins=20):
        return np.histogram(self.samples, bins=bins)


def occupation_ensemble(config: SimConfig, x0, n_paths, observables, first_index=0, threads=1,
                        burn_in=0.0):
    """``L_T(f)`` for every path and observable; returns ``{name: OccupationStats}``.

    With ``burn_in > 0`` the first ``burn_in`` time units are simulated but
    excluded from the average (off by default).
    """
    obs = {o.name: (lambda o: lambda s: o(s.grid, s.x))(o) for o in observables}
    T_total = config.T + burn_in
    cfg = config.with_(T=T_total)
    res = run_ensemble(cfg, x0, indices=np.arange(n_paths) + first_index, observables=obs,
                       threads=threads)
    keep = res.times >= burn_in - 1e-12
    out = {}
    for o in observables:
        L = occupation_average(res.times[keep], res.records[o.name][:, keep])
        out[o.name] = OccupationStats(config.T, L, o.bounds)
    return out


def twin_agreement(a: OccupationStats, b: OccupationStats, n_se=3.0):
    """``|mean_a - mean_b| <= n_se * sqrt(se_a^2 + se_b^2)``; returns (ok, z-score)."""
    z = abs(a.mean - b.mean) / math.hypot(a.se, b.se)
    return z <= n_se, z


# -- moments ---------------------------------------------------------------------

@dataclass
class MomentRow:
    x0_label: str
    T: float
    p: float
    estimate: float
    se: float


@dataclass
class MomentStudy:
    rows: list
    uniformity_ratio: float  # max/min over initial conditions at the smallest T
    growth_ratio: float  # estimate(T_max)/estimate(T_min), worst initial condition
    growth_ceiling: float  # (T_max/T_min) * (1 + 3 rel-SE)
    validated: bool


def moment_estimate(config: SimConfig, p, delta=0.5, n_paths=1000, T_values=(1.0, 2.0, 4.0),
                    x0_set=None, threads=1, unvalidated=False):
    """Monte Carlo ``E^x ||X_T||_delta^p`` over a set of initial conditions.

    All initial conditions share the noise realisations (common random
    numbers), which sharpens the uniformity comparison.  ``p`` must lie in
    ``(0, alpha/4)`` unless ``unvalidated`` is set.
    """
    if not 0 < delta < 1:
        raise UsageError(f"delta must lie in (0, 1), got {delta}")
    if not 0 < p < config.alpha / 4:
        if not unvalidated:
            raise UsageError(f"p = {p} outside (0, alpha/4); pass unvalidated=True to force")
    T_values = sorted(float(t) for t in T_values)
    if T_values[0] < 1:
        raise UsageError("moment study needs T >= 1")
    grid = config.grid()
    if x0_set is None:
        x0_set = {"zero": grid.zeros(), "10e1": grid.mode_field(1, 10.0),
                  "100e1": grid.mode_field(1, 100.0)}
    dt = config.dt
    stride = [round(t / dt) for t in T_values]
    g = math.gcd(*stride)
    cfg = config.with_(T=T_values[-1], record_stride=g)
    rows, est = [], {}
    for label, x0 in x0_set.items():
        res = run_ensemble(cfg, x0, n_paths=n_paths,
                           observables={"nd": lambda s: s.grid.norm(s.x, delta)}, threads=threads)
        for T in T_values:
            j = int(np.argmin(np.abs(res.times - T)))
            v = res.records["nd"][:, j] ** p
            m, se = float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v)))
            rows.append(MomentRow(label, T, p, m, se))
            est[label, T] = (m, se)
    T0, T1 = T_values[0], T_values[-1]
    first = [est[k, T0][0] for k in x0_set]
    uniform = max(first) / min(first) if min(first) > 0 else (1.0 if max(first) == 0 else math.inf)
    growth, ceiling = 0.0, math.inf
    for k in x0_set:
        (m0, s0), (m1, s1) = est[k, T0], est[k, T1]
        if m0 <= 0:
            continue
        rel = math.hypot(s0 / m0, s1 / m1 if m1 > 0 else 0.0)
        r, c = m1 / m0, (T1 / T0) * (1 + 3 * rel)
        if ceiling == math.inf or r / c > growth / ceiling:
            growth, ceiling = r, c
    return MomentStudy(rows, uniform, growth, ceiling, 0 < p < config.alpha / 4)


# -- recurrence --------------------------------------------------------------------

@dataclass
class HittingRecord:
    M_level: float
    delta: float
    taus: np.ndarray  # first integer k >= 1 with ||X_k||_delta <= M_level; n_max + 1 if censored
    censored: np.ndarray
    n_max: int

    @property
    def size(self):
        return len(self.taus)


def hitting_times(norms, M_level, delta=0.5, n_max=None):
    """Hitting records from ``norms[:, k-1] = ||X_k||_delta`` at integer times ``k = 1..n_max``.

    NaN entries (paths retired after an earlier hit) count as "not below".
    """
    norms = np.asarray(norms, dtype=float)
    if n_max is None:
        n_max = norms.shape[1]
    hit = np.nan_to_num(norms[:, :n_max], nan=np.inf) <= M_level
    any_hit = hit.any(axis=1)
    taus = np.where(any_hit, np.argmax(hit, axis=1) + 1, n_max + 1)
    return HittingRecord(float(M_level), delta, taus, ~any_hit, int(n_max))


def simulate_hitting(config: SimConfig, x0, levels, delta=0.5, n_max=50, n_paths=2000,
                     first_index=0, threads=1):
    """Hitting records for several levels from one ensemble.

    Paths are retired once they hit the lowest level, which also fixes
    their hitting times for every higher level.
    """
    levels = list(levels)
    lowest = min(levels)
    stride = round(1.0 / config.dt)
    if abs(stride * config.dt - 1.0) > 1e-9:
        raise UsageError("dt must divide 1 for integer sampling instants")
    cfg = config.with_(T=float(n_max), record_stride=stride)

    def stop(s, j):
        if j == 0:
            return np.zeros(len(s.x), dtype=bool)
        return s.grid.norm(s.x, delta) <= lowest

    res = run_ensemble(cfg, x0, indices=np.arange(n_paths) + first_index,
                       observables={"nd": lambda s: s.grid.norm(s.x, delta)}, stop=stop,
                       threads=threads)
    norms = res.records["nd"][:, 1:]
    return [hitting_times(norms, L, delta, n_max) for L in levels], norms


def wilson_interval(k, n, z=1.96):
    k, n = np.asarray(k, dtype=float), float(n)
    p = k / n
    den = 1 + z**2 / n
    centre = (p + z**2 / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / den
    return np.maximum(centre - half, 0.0), np.minimum(centre + half, 1.0)


@dataclass
class TailFit:
    n: np.ndarray
    p_tail: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    slope: float = math.nan
    intercept: float = math.nan
    r2: float = math.nan
    fitted: bool = False
    note: str = ""

    @property
    def q(self):
        """Fitted geometric rate ``P(tau > n) ~ q^n``; 0 when the tail vanishes after n = 1."""
        return math.exp(self.slope) if self.fitted else 0.0


def recurrence_tail(record: HittingRecord, min_count=1):
    """Empirical ``P(tau > n)`` with Wilson bands and a least-squares fit of its log against n."""
    if np.all(record.censored):
        raise EstimationError("every path is censored: no hitting observed")
    n = np.arange(1, record.n_max + 1)
    counts = np.array([(record.taus > k).sum() for k in n])
    lo, hi = wilson_interval(counts, record.size)
    fit = TailFit(n, counts / record.size, lo, hi)
    use = counts >= min_count
    if use.sum() < 2:
        fit.note = "tail vanishes after fewer than two points; fit skipped"
        return fit
    xs, ys = n[use].astype(float), np.log(counts[use] / record.size)
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    sst = np.sum((ys - ys.mean()) ** 2)
    fit.slope, fit.intercept = float(slope), float(intercept)
    fit.r2 = float(1 - np.sum(resid**2) / sst) if sst > 0 else 1.0
    fit.fitted = True
    return fit


@dataclass
class ExpMoment:
    lam: float
    estimate: float  # censoring-aware lower bound of E[exp(lam tau)]
    criterion: float  # exp(lam) * q
    status: str  # "finite", "divergent" or "not_conclusive"

    @property
    def finite(self):
        return self.status == "finite"


def exp_moment_tau(record: HittingRecord, lam, q=None, dominance=0.5):
    """``E[exp(lam tau_M)]`` with a finiteness verdict.

    Censored paths contribute ``exp(lam (n_max+1))`` so the estimate is a
    lower bound.  The verdict uses the geometric rate ``q`` of the tail
    (fitted from the record when not given): finite needs ``e^lam q < 1``;
    if that holds but censored paths carry more than ``dominance`` of the
    estimate, the result is "not_conclusive".
    """
    if not lam > 0:
        raise UsageError("lam must be positive")
    if q is None:
        q = recurrence_tail(record).q if not np.all(record.censored) else 1.0
    w = np.exp(lam * record.taus.astype(float))
    est = float(np.mean(w))
    cens = float(np.sum(w[record.censored])) / record.size
    crit = math.exp(lam) * q
    if crit >= 1.0:
        status = "divergent"
    elif cens > dominance * est:
        status = "not_conclusive"
    else:
        status = "finite"
    return ExpMoment(lam, est, crit, status)


# -- SCGF and Legendre transform ------------------------------------------------------

@dataclass
class SCGF:
    lam: np.ndarray
    values: np.ndarray
    T: float
    max_weight: np.ndarray  # largest single-sample share of the exponential sum
    low_ess: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.low_ess is None:
            self.low_ess = self.max_weight > 0.5


def scgf(samples, lam, T):
    """``Lambda_T(lam) = (1/T) log mean_m exp(lam T L_T^(m))`` on a grid of ``lam``."""
    L = np.asarray(samples, dtype=float)
    if L.size == 0:
        raise UsageError("empty sample")
    lam = np.asarray(lam, dtype=float)
    b = np.multiply.outer(lam * T, L)
    lse = logsumexp(b, axis=1)
    vals = (lse - math.log(L.size)) / T
    maxw = np.exp(np.max(b, axis=1) - lse)
    return SCGF(lam, vals, T, maxw)


def default_lambda_grid(samples, T, points=21, max_share=0.5):
    """Symmetric grid whose half-width is the largest power-of-two multiple of
    ``1/(T * spread)`` keeping every single-sample weight at or below ``max_share``."""
    L = np.asarray(samples, dtype=float)
    spread = max(float(np.std(L)), 1e-12)
    h = 1.0 / (T * spread)
    for _ in range(60):
        s = scgf(L, [-2 * h, 2 * h], T)
        if np.any(s.max_weight > max_share):
            break
        h *= 2
    while h > 1e-12 and np.any(scgf(L, [-h, h], T).max_weight > max_share):
        h /= 2
    lam = np.linspace(-h, h, points)
    lam[np.abs(lam) < 1e-9 * h] = 0.0  # keep Lambda(0) = 0 exact on odd grids
    return lam


@dataclass
class RateFunction:
    r: np.ndarray
    values: np.ndarray
    interior: np.ndarray  # supremum attained strictly inside the lambda grid

    def minimum(self):
        v = np.where(self.interior, self.values, np.inf)
        i = int(np.argmin(v))
        return float(self.r[i]), float(self.values[i])


def legendre(curve: SCGF, r, tol=1e-10):
    """``J(r) = sup_lam (lam r - Lambda(lam))`` with local quadratic refinement.

    Around the best grid node the SCGF is replaced by the parabola through
    three neighbouring nodes and maximised exactly, so quadratic SCGFs are
    transformed without grid error.
    """
    lam, L = np.asarray(curve.lam), np.asarray(curve.values)
    if len(lam) < 3:
        raise EstimationError("need at least three grid points")
    d2 = L[2:] - 2 * L[1:-1] + L[:-2]
    if np.any(d2 < -tol * max(1.0, np.max(np.abs(L)))):
        raise EstimationError("SCGF is not convex on the grid")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    vals = np.empty_like(r)
    interior = np.zeros(len(r), dtype=bool)
    for j, rj in enumerate(r):
        g = lam * rj - L
        best = np.max(g)
        hits = np.flatnonzero(g >= best - 1e-14 * max(1.0, abs(best)))
        inner = hits[(hits > 0) & (hits < len(lam) - 1)]
        if len(inner) == 0:
            vals[j] = best
            continue
        interior[j] = True
        i = inner[0]
        x0, x1, x2 = lam[i - 1 : i + 2]
        y0, y1, y2 = L[i - 1 : i + 2]
        # parabola a l^2 + b l + c through the three nodes
        den = (x0 - x1) * (x0 - x2) * (x1 - x2)
        a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
        b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / den
        c = (x1 * x2 * (x1 - x2) * y0 + x2 * x0 * (x2 - x0) * y1 + x0 * x1 * (x0 - x1) * y2) / den
        v = best
        if a > 0:
            ls = np.clip((rj - b) / (2 * a), x0, x2)
            v = max(v, ls * rj - (a * ls**2 + b * ls + c))
        vals[j] = v
    return RateFunction(r, vals, interior)


def rate_grid(samples, points=201):
    """Grid of ``r`` spanning the sample range, with the sample mean inserted."""
    L = np.asarray(samples, dtype=float)
    lo, hi = float(L.min()), float(L.max())
    if hi <= lo:
        hi = lo + 1e-12
    g = np.linspace(lo, hi, points)
    return np.unique(np.append(g, L.mean()))


# -- tails -----------------------------------------------------------------------------

@dataclass
class TailIndex:
    estimate: float
    ci: tuple
    k: int
    light_tail: bool


def hill(x, k):
    xs = np.sort(np.asarray(x, dtype=float))[::-1]
    logs = np.log(xs[:k]) - math.log(xs[k])
    h = float(np.mean(logs))
    return 1.0 / h if h > 0 else math.inf


def tail_index(samples, top_fraction=0.05, n_boot=200, seed=0, level=0.95, light_cut=4.0):
    """Hill estimate of the tail index from the top ``top_fraction`` order statistics,
    with a percentile-bootstrap confidence interval."""
    x = np.asarray(samples, dtype=float)
    if x.size < 500:
        raise UsageError("tail-index estimation needs at least 500 samples")
    if not 0 < top_fraction <= 0.2:
        raise UsageError("top_fraction must lie in (0, 0.2]")
    if np.any(x <= 0):
        raise UsageError("samples must be positive")
    k = int(top_fraction * x.size)
    xs = np.sort(x)[::-1]
    if xs[0] == xs[k]:
        raise EstimationError("degenerate sample: top order statistics are tied")
    est = hill(xs, k)
    rng = np.random.default_rng(seed)
    boots = np.array([hill(rng.choice(x, x.size), k) for _ in range(n_boot)])
    a = (1 - level) / 2
    ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a)))
    return TailIndex(est, ci, k, est > light_cut)


def moment_stability(samples, p, sizes):
    """Running MC estimates of ``E[X^p]`` on nested prefixes of ``samples``."""
    x = np.asarray(samples, dtype=float) ** p
    return [float(np.mean(x[:n])) for n in sizes]

