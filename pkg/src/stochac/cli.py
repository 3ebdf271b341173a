"""``stochac`` command-line front end.

Usage: ``stochac <subcommand> [config] [--threads N] [--out DIR] [--seed U64]``.
Every output file starts with a ``#`` header (tool version, master seed,
full config echo); the body below it is plain CSV.
"""
from __future__ import annotations

import argparse
import os
import sys
import tempfile
import time

import numpy as np

from . import __version__
from . import ergodics as erg
from . import studies
from .config import load_config
from .control import verify_reachability
from .errors import InvariantViolation, NumericalError, StochacError, UsageError
from .integrator import simulate, standard_observables
from .spectral import Field, SpectralGrid, verify_inequality_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def header(cfg):
    return [f"# stochac {__version__}", f"# master_seed = {cfg.seed}", *cfg.echo()]


def write_csv(path, cfg, columns, rows):
    """Write header + CSV body to ``path`` atomically (temp file, then rename)."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write("\n".join(header(cfg)) + "\n")
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(fmt(v) for v in r) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_body(path):
    """Lines of an output file below the ``#`` header."""
    with open(path) as fh:
        return [ln for ln in fh if not ln.startswith("#")]


def _observables(cfg):
    try:
        return [erg.parse_observable(s) for s in cfg.observables.split(",") if s.strip()]
    except ValueError as e:
        raise UsageError(f"bad observables: {e}") from e


def _x0(grid, norm):
    return Field.mode(grid, 1, norm) if norm else Field.zero(grid)


# -- subcommands -----------------------------------------------------------------------

def cmd_simulate(cfg, out, log):
    sim = cfg.sim()
    obs = _observables(cfg)
    traj = simulate(sim, _x0(sim.grid(), cfg.x0_norm), obs, threads=cfg.threads)
    names = list(standard_observables(cfg.delta, obs))
    cols = ["t", *names]
    rows = np.column_stack([traj.times, *(traj.observables[n] for n in names)])
    write_csv(os.path.join(out, "simulate.csv"), cfg, cols, rows)
    log(f"simulate: {len(rows)} snapshots, final h_norm {rows[-1, 1]:.6g}")
    return EXIT_OK


def cmd_moments(cfg, out, log):
    sim = cfg.sim()
    st = erg.moment_estimate(sim, cfg.p, cfg.delta, cfg.ensemble_size, cfg.t_values,
                             threads=cfg.threads, unvalidated=cfg.unvalidated)
    rows = [(r.x0_label, r.T, r.p, r.estimate, r.se) for r in st.rows]
    write_csv(os.path.join(out, "moments.csv"), cfg, ["x0_label", "T", "p", "estimate", "se"], rows)
    write_csv(os.path.join(out, "moments_summary.csv"), cfg, ["key", "value"], [
        ("uniformity_ratio", st.uniformity_ratio), ("growth_ratio", st.growth_ratio),
        ("growth_ceiling", st.growth_ceiling), ("validated", st.validated)])
    log(f"moments: uniformity {st.uniformity_ratio:.4g}, growth {st.growth_ratio:.4g}"
        f" (ceiling {st.growth_ceiling:.4g})")
    return EXIT_OK


def cmd_occupation(cfg, out, log):
    st = studies.occupation_study(cfg.sim(), cfg.ensemble_size, _observables(cfg),
                                  burn_in=cfg.burn_in, threads=cfg.threads)
    rows = []
    for name in st.first:
        a, b = st.first[name], st.second[name]
        rows.append((name, a.mean, a.se, b.mean, b.se, st.z_scores[name],
                     st.z_scores[name] <= 3.0))
    write_csv(os.path.join(out, "occupation.csv"), cfg,
              ["observable", "mean_a", "se_a", "mean_b", "se_b", "z", "agree"], rows)
    samples = [(m, *(st.first[n].samples[m] for n in st.first)) for m in range(cfg.ensemble_size)]
    write_csv(os.path.join(out, "occupation_samples.csv"), cfg, ["path", *st.first], samples)
    for r in rows:
        log(f"occupation: {r[0]} mean {r[1]:.6g} vs {r[3]:.6g} (z = {r[5]:.3g})")
    return EXIT_OK


def cmd_ldp(cfg, out, log):
    obs = _observables(cfg)[:1]
    stats = erg.occupation_ensemble(cfg.sim(), cfg.sim().grid().zeros(), cfg.ensemble_size, obs,
                                    threads=cfg.threads, burn_in=cfg.burn_in)[obs[0].name]
    st = studies.ldp_study(stats, cfg.lambdas, cfg.lambda_points)
    write_csv(os.path.join(out, "scgf.csv"), cfg, ["lambda", "scgf"],
              zip(st.scgf.lam, st.scgf.values))
    write_csv(os.path.join(out, "rate.csv"), cfg, ["r", "rate"], zip(st.rate.r, st.rate.values))
    r_min, j_min = st.rate.minimum()
    write_csv(os.path.join(out, "ldp_summary.csv"), cfg, ["key", "value"], [
        ("observable", obs[0].name), ("mean", st.mean), ("se", st.se), ("argmin", r_min),
        ("min_rate", j_min), ("low_ess_points", int(np.sum(st.scgf.low_ess)))])
    log(f"ldp: rate minimum {j_min:.3g} at {r_min:.6g}, mean {st.mean:.6g}")
    return EXIT_OK


def _tail_rows(rec):
    n = np.arange(1, rec.n_max + 1)
    counts = np.array([(rec.taus > k).sum() for k in n])
    lo, hi = erg.wilson_interval(counts, rec.size)
    return list(zip(n, counts / rec.size, lo, hi))


def cmd_recurrence(cfg, out, log):
    sim = cfg.sim()
    level = cfg.M_level
    if level < 0:
        level = studies.stationary_level(sim, cfg.ensemble_size, cfg.level_quantile, cfg.burn_in_T,
                                         cfg.delta, threads=cfg.threads)
    st = studies.recurrence_study(sim, level, cfg.ensemble_size, cfg.delta, cfg.n_max,
                                  threads=cfg.threads)
    rec, fit = st.records[0], st.fits[0]
    write_csv(os.path.join(out, "recurrence.csv"), cfg, ["n", "p_tail", "ci_lo", "ci_hi"],
              _tail_rows(rec))
    all_censored = bool(np.all(rec.censored))
    summary = [("M_level", level), ("all_censored", all_censored),
               ("censored_fraction", float(np.mean(rec.censored)))]
    if fit is not None:
        summary += [("fitted", fit.fitted), ("slope", fit.slope), ("r2", fit.r2), ("q", fit.q)]
    summary += [(f"exp_moment_{lab}", f"{m.status}:{fmt(m.estimate)}") for lab, m in st.moments]
    write_csv(os.path.join(out, "recurrence_summary.csv"), cfg, ["key", "value"], summary)
    if all_censored:
        log(f"recurrence: every path censored at M_level = {level:.6g}; no tail fit")
    else:
        log(f"recurrence: M_level {level:.6g}, q {st.q:.4g}")
    return EXIT_OK


def cmd_control(cfg, out, log):
    g = SpectralGrid(cfg.control_K)
    rep = verify_reachability(Field.mode(g, 1, cfg.start_norm), Field.mode(g, 1, cfg.target_norm),
                              cfg.control_T, cfg.control_dt, cfg.T1, cfg.eps)
    write_csv(os.path.join(out, "control.csv"), cfg, ["key", "value"], [
        ("residual_v", rep.residual_v), ("residual_h", rep.residual_h), ("eps", rep.eps),
        ("passed", rep.passed), ("sup_control_v", rep.sup_control_v)])
    log(f"control: ||x(T) - a||_V = {rep.residual_v:.4g} (eps {rep.eps:g})")
    return EXIT_OK


def _check_rows(checks):
    return [(c.name, c.estimate, c.reference, c.tolerance, c.passed) for c in checks]


def cmd_noise_check(cfg, out, log):
    checks = studies.noise_checks(cfg)
    write_csv(os.path.join(out, "noise_check.csv"), cfg,
              ["check", "estimate", "reference", "tolerance", "passed"], _check_rows(checks))
    for c in checks:
        log(f"noise-check: {c.name} {'ok' if c.passed else 'FAILED'}")
    return EXIT_OK


def selftest_checks(cfg):
    """Invariant suites; each entry is a :class:`studies.Check`."""
    C = studies.Check
    checks = []
    rep = verify_inequality_suite(10_000, rng_seed=cfg.seed)
    for name, worst, bound in rep.as_rows():
        # the suite raises on violation; reaching here means every bound held
        checks.append(C(f"inequality_{name}", worst, bound, 1e-9, True))
    checks += studies.noise_checks(cfg, n=100_000)
    sim = cfg.sim(K=32, T=0.1, dt=1e-3, record_stride=100)
    ratio, bound = studies.contraction_study(sim.with_(dt=1e-4), n_pairs=20, seed=cfg.seed)
    checks.append(C("contraction", float(ratio.max()), bound, 0.1 * bound,
                    bool(ratio.max() <= 1.1 * bound)))
    g = sim.grid()
    x0 = Field.mode(g, 1, 10.0).amps
    full = simulate(sim, x0).amps[-1]
    split = simulate(sim.with_(scheme="y_split"), x0).amps[-1]
    gap = float(g.norm(full - split))
    checks.append(C("split_identity", gap, 0.0, 1e-10, gap <= 1e-10))
    L = np.random.default_rng(cfg.seed).normal(size=500)
    s0 = float(erg.scgf(L, [0.0], 1.0).values[0])
    checks.append(C("scgf_zero", s0, 0.0, 0.0, s0 == 0.0))
    return checks


def cmd_selftest(cfg, out, log):
    checks = selftest_checks(cfg)
    write_csv(os.path.join(out, "selftest.csv"), cfg,
              ["check", "estimate", "reference", "tolerance", "passed"], _check_rows(checks))
    bad = [c.name for c in checks if not c.passed]
    for c in checks:
        log(f"selftest: {c.name} {'ok' if c.passed else 'FAILED'}")
    if bad:
        raise InvariantViolation("failed: " + ", ".join(bad))
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "occupation": cmd_occupation,
    "recurrence": cmd_recurrence,
    "ldp": cmd_ldp,
    "control": cmd_control,
    "noise-check": cmd_noise_check,
    "selftest": cmd_selftest,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="stochac", description="Stochastic Allen-Cahn studies.")
    ap.add_argument("--version", action="version", version=f"stochac {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", nargs="?", help="key = value config file (or any output file)")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr))
    try:
        cfg = load_config(args.config).override(threads=args.threads, out=args.out, seed=args.seed)
        if cfg.seed < 0 or cfg.seed >= 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")
    except (UsageError, ValueError) as e:
        print(f"stochac: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](cfg, cfg.out, log)
    except InvariantViolation as e:
        print(f"stochac: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericalError as e:
        print(f"stochac: numerical error at step {e.step}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ValueError) as e:
        print(f"stochac: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StochacError as e:
        print(f"stochac: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    log(f"{args.command}: done in {time.perf_counter() - t0:.1f} s")
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
