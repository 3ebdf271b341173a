"""Exponential-Euler integration of the mild formulation.

One step of size ``h`` maps

    x  ->  exp(-A h) x + phi1(h) h (N(x) + f) + dZ,

where ``phi1(h) h = (1 - exp(-lambda_k h)) / lambda_k`` integrates a frozen
forcing exactly against the semigroup and ``dZ`` is the stochastic
convolution increment of the step.  The cubic is explicit, so a step is
split into sub-steps for a trajectory whose state is large enough that
``3 max u^2 h`` exceeds a safety bound; the decision is made per
trajectory, so a path's result never depends on its batch neighbours.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, NumericalError, UsageError
from .noise import NoiseModel, NoiseStream
from .spectral import Field, SpectralGrid, cutoff

SCHEMES = ("full", "y_split", "truncated")
MAX_SUBSTEPS = 100_000
CHUNK = 256


@dataclass(frozen=True)
class SimConfig:
    alpha: float = 1.5
    theta: float = 1.8
    delta_bound: float = 1.0
    K: int = 64
    dt: float = 1e-3
    T: float = 10.0
    seed: int = 0
    record_stride: int = 10
    scheme: str = "full"
    rho: float | None = None  # truncation radius, scheme "truncated" only
    delta: float = 0.5  # Sobolev order of the recorded ||X||_delta
    zero_noise: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.T >= self.dt * (1 - 1e-12):
            raise DomainError(f"need T >= dt, got T={self.T}, dt={self.dt}")
        if self.K < 1:
            raise DomainError("K must be >= 1")
        if not 1.0 < self.alpha < 2.0:
            raise DomainError(f"alpha must lie in (1, 2), got {self.alpha}")
        if self.record_stride < 1:
            raise DomainError("record_stride must be >= 1")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "truncated" and not (self.rho and self.rho > 0):
            raise DomainError("scheme 'truncated' needs a positive rho")

    @property
    def n_steps(self):
        return math.ceil(self.T / self.dt - 1e-9)

    def grid(self):
        return SpectralGrid(self.K)

    def noise_model(self):
        if self.zero_noise:
            return NoiseModel.silent(self.K, self.alpha)
        return NoiseModel(self.alpha, self.theta, self.delta_bound, self.K)

    def with_(self, **kw):
        return replace(self, **kw)


class Engine:
    """Deterministic part of a step, vectorised over a leading batch axis."""

    def __init__(self, grid: SpectralGrid, dt, rho=None, safety=0.5):
        self.grid = grid
        self.dt = dt
        self.rho = rho
        self.safety = safety
        lam = grid.eigenvalues
        self.lam = lam
        self.decay = np.exp(-lam * dt)
        self.weight = -np.expm1(-lam * dt) / lam

    def rhs(self, w):
        """``N(w)`` (truncated if configured) and the stiffness ``3 max u^2`` per member."""
        c, u = self.grid.cube(w)
        n = w - c
        if self.rho is not None:
            n = n * cutoff(self.grid.norm(w, 1.0) / self.rho)[..., None]
        return n, 3.0 * np.max(u * u, axis=-1)

    def drift_step(self, x, shift=None, forcing=None, step=None):
        """Advance ``x' = -Ax + N(x + exp(-As) shift) + forcing`` over one ``dt``."""
        single = x.ndim == 1
        x = np.atleast_2d(x)
        sh = None if shift is None else np.broadcast_to(shift, x.shape)
        f = None if forcing is None else np.broadcast_to(forcing, x.shape)
        n, stiff = self.rhs(x if sh is None else x + sh)
        if f is not None:
            n = n + f
        out = self.decay * x + self.weight * n
        slow = ~(stiff * self.dt <= self.safety)
        if np.any(slow):
            out[slow] = self._substep(x[slow], None if sh is None else sh[slow],
                                      None if f is None else f[slow], step)
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite state", step)
        return out[0] if single else out

    def _substep(self, x, sh, f, step):
        x = x.copy()
        sh = None if sh is None else sh.copy()
        rem = np.full(len(x), self.dt)
        lam = self.lam
        for _ in range(MAX_SUBSTEPS):
            act = rem > 0
            if not np.any(act):
                return x
            xa = x[act]
            sa = None if sh is None else sh[act]
            n, stiff = self.rhs(xa if sa is None else xa + sa)
            if f is not None:
                n = n + f[act]
            if not np.all(np.isfinite(stiff)):
                raise NumericalError("non-finite state during sub-stepping", step)
            h = np.minimum(rem[act], self.safety / np.maximum(stiff, 1e-300))
            h = np.where(rem[act] - h < 1e-15 * self.dt, rem[act], h)
            dec = np.exp(-lam * h[:, None])
            x[act] = dec * xa + (-np.expm1(-lam * h[:, None]) / lam) * n
            if sh is not None:
                sh[act] = dec * sa
            r = rem[act] - h
            r[h >= rem[act]] = 0.0
            rem[act] = r
        raise NumericalError("sub-step budget exhausted", step)


def step_mild(x: Field, dt, z_inc: Field, model: NoiseModel | None = None, rho=None):
    """One exponential-Euler step of the full equation.

    ``z_inc`` is the convolution increment of the step (new Z minus the
    semigroup-decayed old Z).  ``model`` is accepted for signature symmetry;
    the noise enters only through ``z_inc``.
    """
    eng = Engine(x.grid, dt, rho)
    return Field(x.grid, eng.drift_step(x.amps) + z_inc.amps)


# -- ensemble machinery --------------------------------------------------------

class State:
    """View of a batch handed to observables: ``x`` (solution), ``y`` (= x - z), ``z``."""

    __slots__ = ("grid", "x", "y", "z", "t")

    def __init__(self, grid, x, y, z, t):
        self.grid, self.x, self.y, self.z, self.t = grid, x, y, z, t


@dataclass
class EnsembleResult:
    times: np.ndarray
    records: dict = field(default_factory=dict)  # name -> (M, n_rec)
    sups: dict = field(default_factory=dict)  # name -> (M,)
    final: np.ndarray | None = None  # (M, K) final solution states
    states: np.ndarray | None = None  # (M, n_rec, K) when requested


def record_times(config: SimConfig):
    n = config.n_steps
    steps = list(range(0, n + 1, config.record_stride))
    if steps[-1] != n:
        steps.append(n)
    return np.array(steps), np.array(steps) * config.dt


def _run_chunk(config, x0, indices, observables, sup_observables, keep_states, stop):
    grid = config.grid()
    model = config.noise_model()
    eng = Engine(grid, config.dt, config.rho if config.scheme == "truncated" else None)
    stream = NoiseStream(model, config.dt, config.seed, indices)
    m = len(indices)
    x = np.array(np.broadcast_to(x0, (m, grid.K)), dtype=complex)
    z = grid.zeros(m)
    y_split = config.scheme == "y_split"
    rec_steps, rec_t = record_times(config)
    rec_set = {int(s): j for j, s in enumerate(rec_steps)}
    records = {k: np.full((m, len(rec_steps)), np.nan) for k in observables}
    sups = {k: np.full(m, -np.inf) for k in sup_observables}
    states = np.full((m, len(rec_steps), grid.K), np.nan, dtype=complex) if keep_states else None
    alive = np.arange(m)  # rows of the output still being simulated

    def view(t):
        if y_split:
            return State(grid, x + z, x, z, t)
        return State(grid, x, x - z, z, t)

    def observe(n):
        nonlocal x, z, alive
        s = view(n * config.dt)
        for k, fn in sup_observables.items():
            sups[k][alive] = np.maximum(sups[k][alive], fn(s))
        j = rec_set.get(n)
        if j is None:
            return
        for k, fn in observables.items():
            records[k][alive, j] = fn(s)
        if keep_states:
            states[alive, j] = s.x
        if stop is not None:
            keep = ~np.asarray(stop(s, j), dtype=bool)
            if not np.all(keep):
                x, z, alive = x[keep], z[keep], alive[keep]
                stream.keep(keep)

    observe(0)
    for n in range(config.n_steps):
        if len(alive) == 0:
            break
        _, xi = stream.next()
        if y_split:
            x = eng.drift_step(x, shift=z, step=n)
        else:
            x = eng.drift_step(x, step=n) + xi
        z = eng.decay * z + xi
        observe(n + 1)
    final = view(config.n_steps * config.dt).x
    return records, sups, final, states, alive


def run_ensemble(config: SimConfig, x0, n_paths=None, indices=None, observables=None,
                 sup_observables=None, keep_final=False, keep_states=False, threads=1,
                 stop=None, chunk=CHUNK):
    """Simulate many trajectories, each driven by its own noise streams.

    ``x0`` is one amplitude array (K,) shared by all paths or one row per
    path.  ``indices`` selects the noise stream of each path (default
    ``0..n_paths-1``); repeating an index reuses the same noise realisation.
    ``observables`` map names to ``fn(State) -> (m,)`` evaluated at the
    recorded instants; ``sup_observables`` are maximised over every step.
    ``stop(state, j)`` may return a mask of paths to retire after record
    ``j``; their later records stay NaN.  Chunks are fixed by ``chunk``, so
    the output does not depend on ``threads``.
    """
    observables = dict(observables or {})
    sup_observables = dict(sup_observables or {})
    if indices is None:
        if n_paths is None:
            raise UsageError("give n_paths or indices")
        indices = np.arange(n_paths)
    indices = np.asarray(indices)
    M = len(indices)
    x0 = np.asarray(x0, dtype=complex)
    if x0.ndim == 1 and x0.shape == (config.K,):
        x0 = np.broadcast_to(x0, (M, config.K))
    if x0.shape != (M, config.K):
        raise UsageError(f"x0 has shape {x0.shape}, expected ({M}, {config.K})")
    bounds = [(s, min(s + chunk, M)) for s in range(0, M, chunk)]

    def job(b):
        s, e = b
        return _run_chunk(config, x0[s:e], indices[s:e], observables, sup_observables,
                          keep_states, stop)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    _, times = record_times(config)
    res = EnsembleResult(times)
    res.records = {k: np.concatenate([p[0][k] for p in parts]) for k in observables}
    res.sups = {k: np.concatenate([p[1][k] for p in parts]) for k in sup_observables}
    if keep_final:
        fin = np.full((M, config.K), np.nan, dtype=complex)
        for (s, _), p in zip(bounds, parts):
            fin[s + p[4]] = p[2]
        res.final = fin
    if keep_states:
        res.states = np.concatenate([p[3] for p in parts])
    return res


# -- single trajectories ---------------------------------------------------------

@dataclass
class Trajectory:
    grid: SpectralGrid
    times: np.ndarray
    amps: np.ndarray  # (n_rec, K)
    observables: dict

    @property
    def states(self):
        return [Field(self.grid, a) for a in self.amps]

    def __len__(self):
        return len(self.times)


def standard_observables(delta, extra=()):
    """Recorded columns: ``h_norm, v_norm, sobolev_delta, f1..fn``."""
    obs = {
        "h_norm": lambda s: s.grid.norm(s.x),
        "v_norm": lambda s: s.grid.norm(s.x, 1.0),
        "sobolev_delta": lambda s: s.grid.norm(s.x, delta),
    }
    for i, f in enumerate(extra, 1):
        obs[f"f{i}"] = (lambda g: (lambda s: g(s.grid, s.x)))(f)
    return obs


def _as_amps(config, x0):
    a = x0.amps if isinstance(x0, Field) else np.asarray(x0, dtype=complex)
    if a.shape != (config.K,):
        raise UsageError(f"initial field has {a.shape[-1]} modes, config has K={config.K}")
    return a


def simulate(config: SimConfig, x0, functionals=(), threads=1, index=0):
    """One trajectory; fully determined by ``(config, x0)``.

    ``functionals`` are callables ``f(grid, amps) -> (m,)``, e.g.
    :class:`stochac.ergodics.Observable` instances.
    """
    obs = standard_observables(config.delta, functionals)
    res = run_ensemble(config, _as_amps(config, x0), indices=[index], observables=obs,
                       keep_states=True)
    return Trajectory(config.grid(), res.times, res.states[0],
                      {k: v[0] for k, v in res.records.items()})


def simulate_pair_synchronous(config: SimConfig, x0, y0, functionals=(), index=0):
    """Two trajectories driven by one noise realisation."""
    obs = standard_observables(config.delta, functionals)
    a = np.stack([_as_amps(config, x0), _as_amps(config, y0)])
    res = run_ensemble(config, a, indices=[index, index], observables=obs, keep_states=True)
    grid = config.grid()
    return tuple(Trajectory(grid, res.times, res.states[i], {k: v[i] for k, v in res.records.items()})
                 for i in range(2))


def convolution_path(config: SimConfig, index=0):
    """The stochastic convolution Z of trajectory ``index`` on every step, shape (n_steps+1, K)."""
    stream = NoiseStream(config.noise_model(), config.dt, config.seed, [index])
    decay = np.exp(-config.grid().eigenvalues * config.dt)
    out = np.zeros((config.n_steps + 1, config.K), dtype=complex)
    for n in range(config.n_steps):
        _, xi = stream.next()
        out[n + 1] = decay * out[n] + xi[0]
    return out


def solve_Y(config: SimConfig, x0, z_path):
    """Integrate ``Y' = -AY + N(Y + Z)`` for a frozen convolution path.

    ``z_path`` holds Z on every step (``n_steps + 1`` rows).  Within a step
    Z follows its noise-free decay from the left endpoint, matching the
    left-point discretisation of the convolution.
    """
    z = np.array([f.amps if isinstance(f, Field) else f for f in z_path], dtype=complex)
    if z.shape != (config.n_steps + 1, config.K):
        raise UsageError(f"z_path must have shape ({config.n_steps + 1}, {config.K}), got {z.shape}")
    eng = Engine(config.grid(), config.dt, config.rho if config.scheme == "truncated" else None)
    steps, times = record_times(config)
    out = np.empty((len(steps), config.K), dtype=complex)
    y = _as_amps(config, x0).copy()
    j = 0
    for n in range(config.n_steps + 1):
        if j < len(steps) and steps[j] == n:
            out[j] = y
            j += 1
        if n < config.n_steps:
            y = eng.drift_step(y, shift=z[n], step=n)
    grid = config.grid()
    obs = {"h_norm": grid.norm(out), "v_norm": grid.norm(out, 1.0),
           "sobolev_delta": grid.norm(out, config.delta)}
    return Trajectory(grid, times, out, obs)


def solve_deterministic(x0, u, T, dt, rho=None, record_stride=1):
    """Integrate ``x' + Ax = N(x) + u`` with piecewise-constant control ``u``.

    ``u`` is ``None`` (no control), one Field/array used on every step, or a
    sequence with one entry per step.
    """
    grid = x0.grid if isinstance(x0, Field) else SpectralGrid(len(x0))
    n_steps = math.ceil(T / dt - 1e-9)
    per_step = False
    if isinstance(u, Field):
        u = u.amps
    elif isinstance(u, (list, tuple)) or (u is not None and np.ndim(u) == 2):
        u = np.array([f.amps if isinstance(f, Field) else f for f in u], dtype=complex)
        if len(u) != n_steps:
            raise UsageError(f"control has {len(u)} steps, expected {n_steps}")
        per_step = True
    eng = Engine(grid, dt, rho)
    x = (x0.amps if isinstance(x0, Field) else np.asarray(x0, dtype=complex)).copy()
    steps = list(range(0, n_steps + 1, record_stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    out = np.empty((len(steps), grid.K), dtype=complex)
    j = 0
    for n in range(n_steps + 1):
        if steps[j] == n:
            out[j] = x
            j += 1
        if n < n_steps:
            f = u[n] if per_step else u
            x = eng.drift_step(x, forcing=f, step=n)
    obs = {"h_norm": grid.norm(out), "v_norm": grid.norm(out, 1.0)}
    return Trajectory(grid, np.array(steps) * dt, out, obs)


# -- comparison ODE ----------------------------------------------------------------

def comparison_ode(g0, K, t):
    """Closed-form solution of ``g' = -g^2 + K^2``, ``g(0) = g0``, at times ``t``."""
    if g0 < 0 or not K > 0:
        raise DomainError("need g0 >= 0 and K > 0")
    t = np.asarray(t, dtype=float)
    if g0 == K:
        return np.full_like(t, K)
    # g = K (r + e) / (r - e) with r = (g0+K)/(g0-K), e = exp(-2Kt), written
    # through d = r - 1 and m = 1 - e so that g0 >> K does not cancel near t = 0
    d = 2.0 * K / (g0 - K)
    m = -np.expm1(-2.0 * K * t)
    return K * (2.0 + d - m) / (d + m)


def comparison_plateau(K, T):
    """Bound ``K (1 + 2/(e^T - 1))`` on g over ``[T/2, T]``, valid for every ``g0`` when ``K >= 1``."""
    return K * (1.0 + 2.0 / np.expm1(T))


def young_slack(state):
    """Per-path ``(2<Y, N(Y+Z)> + ||Y||_L4^4) / (1 + ||Z||_L4^4)``: the constant needed at this instant."""
    grid = state.grid
    uy = grid.to_physical(state.y)
    uz = grid.to_physical(state.z)
    w = uy + uz
    lhs = 2.0 * np.mean(uy * (w - w**3), axis=-1)
    return (lhs + np.mean(uy**4, axis=-1)) / (1.0 + np.mean(uz**4, axis=-1))


def calibrate_young_constant(config: SimConfig, n_paths=1000, x0_norms=(0.0, 1.0, 10.0, 100.0),
                             first_index=10**6, threads=1):
    """Smallest power of two ``C >= 1`` with ``2<Y,N(Y+Z)> <= -||Y||_L4^4 + C(1 + ||Z||_L4^4)``
    at every recorded instant of ``n_paths`` calibration paths."""
    grid = config.grid()
    x0 = np.stack([grid.mode_field(1, x0_norms[i % len(x0_norms)]) for i in range(n_paths)])
    res = run_ensemble(config.with_(scheme="y_split"), x0,
                       indices=np.arange(n_paths) + first_index,
                       sup_observables={"c": young_slack}, threads=threads)
    need = float(np.max(res.sups["c"]))
    return 2.0 ** max(0, math.ceil(math.log2(max(need, 1.0)))), need
