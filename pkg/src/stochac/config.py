"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment.  Output files echo the full
configuration as ``#@ key = value`` lines; a file containing such lines is
read from those lines only, so any output file can be fed back as a config.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace

from .errors import UsageError
from .integrator import SCHEMES, SimConfig

ECHO_PREFIX = "#@ "


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    # simulation
    alpha: float = 1.5
    theta: float = 1.8
    delta_bound: float = 1.0
    K: int = 64
    dt: float = 1e-3
    T: float = 10.0
    seed: int = 0
    record_stride: int = 10
    scheme: str = "full"
    rho: float = 0.0
    delta: float = 0.5
    zero_noise: bool = False
    x0_norm: float = 0.0
    observables: str = "bounded_custom:0@10,mode_amplitude:1@10,bounded_custom:1@10"
    # ensembles
    ensemble_size: int = 1000
    threads: int = 1
    out: str = "out"
    # moments
    p: float = 0.3
    T_values: str = "1 2 4"
    unvalidated: bool = False
    # recurrence
    M_level: float = -1.0  # negative: use the level_quantile of the stationary law
    level_quantile: float = 0.9
    burn_in_T: float = 2.0
    n_max: int = 50
    # occupation and ldp
    burn_in: float = 0.0
    lambda_grid: str = "auto"
    lambda_points: int = 21
    # tails
    top_fraction: float = 0.05
    # control
    T1: float = 0.5
    eps: float = 1e-2
    start_norm: float = 10.0
    target_norm: float = 0.1
    control_K: int = 32
    control_dt: float = 1e-4
    control_T: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scheme not in SCHEMES:
            raise UsageError(f"scheme must be one of {SCHEMES}")
        if self.ensemble_size < 1:
            raise UsageError("ensemble_size must be >= 1")
        if self.threads < 1:
            raise UsageError("threads must be >= 1")
        if not 0 < self.delta < 1:
            raise UsageError("delta must lie in (0, 1)")
        if not 0 < self.top_fraction <= 0.2:
            raise UsageError("top_fraction must lie in (0, 0.2]")
        if not 0 < self.level_quantile < 1:
            raise UsageError("level_quantile must lie in (0, 1)")
        if self.n_max < 1:
            raise UsageError("n_max must be >= 1")
        if self.lambda_grid != "auto":
            _floats(self.lambda_grid)
        if len(_floats(self.T_values)) < 1:
            raise UsageError("T_values must list at least one horizon")
        try:
            self.sim()
        except ValueError as e:
            raise UsageError(str(e)) from e

    def sim(self, **kw):
        cfg = SimConfig(self.alpha, self.theta, self.delta_bound, self.K, self.dt, self.T,
                        self.seed, self.record_stride, self.scheme, self.rho or None, self.delta,
                        self.zero_noise)
        return cfg.with_(**kw) if kw else cfg

    @property
    def t_values(self):
        return _floats(self.T_values)

    @property
    def lambdas(self):
        return None if self.lambda_grid == "auto" else _floats(self.lambda_grid)

    def echo(self):
        return [f"{ECHO_PREFIX}{f.name} = {_render(getattr(self, f.name))}" for f in fields(self)]

    def override(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(name, typ, text):
    text = text.strip()
    try:
        if typ in (bool, "bool"):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(text, 0)
        if typ in (float, "float"):
            return float(text)
        return text
    except ValueError as e:
        raise UsageError(f"bad value for {name}: {text!r}") from e


def parse_config(text):
    """Parse configuration text into a :class:`RunConfig` (unknown keys rejected)."""
    lines = text.splitlines()
    echoed = [ln[len(ECHO_PREFIX):] for ln in lines if ln.startswith(ECHO_PREFIX)]
    body = echoed if echoed else lines
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   delimiters=("=",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + "\n".join(body))
    except configparser.Error as e:
        raise UsageError(f"malformed config: {e}") from e
    known = {f.name: f.type for f in fields(RunConfig)}
    kw = {}
    for key, val in cp["run"].items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        kw[key] = _convert(key, known[key], val)
    return RunConfig(**kw)


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
