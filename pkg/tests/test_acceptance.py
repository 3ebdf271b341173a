"""The ten acceptance criteria at their stated tolerances.

Each test records one pass/fail line (shown in the terminal summary) and
then asserts it.  Runtime is several minutes; all randomness is seeded.
"""
import math
import time

import numpy as np
import pytest

from stochac import ergodics as erg
from stochac import studies
from stochac.cli import COMMANDS, csv_body, run
from stochac.control import verify_reachability
from stochac.integrator import SimConfig
from stochac.noise import NoiseModel
from stochac.spectral import Field, SpectralGrid, verify_inequality_suite

pytestmark = pytest.mark.slow

BASE = SimConfig(alpha=1.5, theta=1.8, delta_bound=1.0, K=64, dt=1e-3, seed=0)


def test_c01_subordinator_law(criterion):
    t0 = time.perf_counter()
    checks = [studies.laplace_check(r, 100_000) for r in (0.6, 0.75, 0.9)]
    checks.append(studies.levy_cdf_check(100_000))
    dt = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and dt < 10
    detail = "; ".join(f"{c.name} |d|={abs(c.estimate - c.reference):.2e}<=3SE={c.tolerance:.2e}"
                       for c in checks)
    assert criterion(1, ok, f"{detail}; {dt:.1f}s<10s")


def test_c02_inequality_suite(criterion):
    t0 = time.perf_counter()
    rep = verify_inequality_suite(10_000, rng_seed=0)  # raises on any violation
    dt = time.perf_counter() - t0
    ok = (rep.max_energy_product <= 0.25 + 1e-9 and rep.max_l4_ratio <= 1 + 1e-9
          and rep.min_monotonicity >= -1e-9 and dt < 60)
    assert criterion(2, ok, f"max<x,N(x)>={rep.max_energy_product:.4f}, "
                            f"max L4 ratio={rep.max_l4_ratio:.4f}, "
                            f"min monotone={rep.min_monotonicity:.2e}; {dt:.1f}s<60s")


def test_c03_convolution_moment_dichotomy(criterion):
    t0 = time.perf_counter()
    st = studies.heavy_tail_study(NoiseModel(1.5, 1.8, 1.0, 64), n_paths=10_000, T=1.0, dt=1e-3,
                                  ps=(1.0, 2.5), seed=0)
    dt = time.perf_counter() - t0
    c1, c25 = st.relative_change(1.0), st.relative_change(2.5)
    hill = st.tail.estimate
    ok = c1 < 0.10 and c25 >= 0.10 and abs(hill - 1.5) <= 0.3 and dt < 300
    assert criterion(3, ok, f"p=1 change {c1:.1%} (<10%), p=2.5 change {c25:.1%} (>=10%), "
                            f"Hill {hill:.3f} in 1.5+-0.3; {dt:.0f}s<300s")


def test_c04_pathwise_comparison(criterion):
    cfg = BASE.with_(dt=1e-4, T=1.0)
    st = studies.comparison_study(cfg, n_paths=100, x0_norms=(1.0, 10.0, 100.0))
    worst = float(np.max(st.forgetting_ratio))
    ok = st.violations == 0 and bool(np.all(st.plateau_ok)) and worst <= 1.05
    assert criterion(4, ok, f"h<=g violations {st.violations}, plateau ok "
                            f"{int(np.sum(st.plateau_ok))}/{len(st.plateau_ok)}, "
                            f"C={st.C:g} (needed {st.C_needed:.3g}), "
                            f"worst forgetting ratio {worst:.6f}<=1.05")


def test_c05_moment_uniformity(criterion):
    t0 = time.perf_counter()
    st = erg.moment_estimate(BASE, p=0.3, delta=0.5, n_paths=1000, T_values=(1.0, 2.0, 4.0))
    dt = time.perf_counter() - t0
    ok = st.uniformity_ratio <= 1.5 and st.growth_ratio <= st.growth_ceiling and dt < 600
    assert criterion(5, ok, f"max/min over x0 {st.uniformity_ratio:.6f}<=1.5, "
                            f"E(T=4)/E(T=1) {st.growth_ratio:.4f}<={st.growth_ceiling:.4f}; "
                            f"{dt:.0f}s<600s")


def test_c06_recurrence(criterion):
    level = studies.stationary_level(BASE, 2000, 0.9, burn_in_T=2.0, delta=0.5)
    # the x4 level is reported for information only; the criterion uses x1 and x2
    st = studies.recurrence_study(BASE, level, n_paths=2000, delta=0.5, n_max=50,
                                  multipliers=(1, 2, 4))
    fit = st.fits[0]
    m = dict(st.moments)
    half, two, two_doubled = m["half_log_q@x1"], m["two_log_q@x1"], m["two_log_q@x2"]
    ok = (fit is not None and fit.fitted and fit.r2 >= 0.9 and fit.slope < 0
          and half.finite and not two.finite and two_doubled.finite)
    assert criterion(6, ok, f"M90={level:.4g}, R2={fit.r2:.3f}, slope={fit.slope:.3f}, "
                            f"q={st.q:.4f}; lam=-log(q)/2 {half.status}; "
                            f"lam=-2log(q) {two.status}; after doubling M {two_doubled.status} "
                            f"(e^lam q'={two_doubled.criterion:.3f}); "
                            f"[info] at 4M {m['two_log_q@x4'].status} "
                            f"(e^lam q''={m['two_log_q@x4'].criterion:.3f})")


def test_c07_occupation_and_ldp(criterion):
    cfg = BASE.with_(T=10.0, record_stride=10)
    f = erg.Observable("clipped_h", "bounded_custom", 0.0, 10.0)
    occ = studies.occupation_study(cfg, 1000, [f])
    a, b = occ.first["clipped_h"], occ.second["clipped_h"]
    ld = studies.ldp_study(a)
    zero = ld.scgf.values[ld.scgf.lam == 0.0]
    r_min, j_min = ld.rate.minimum()
    ok = (len(zero) == 1 and zero[0] == 0.0
          and float(np.min(ld.second_differences)) >= -1e-10
          and float(np.min(ld.rate.values)) >= 0.0
          and abs(r_min - a.mean) <= 3 * a.se and j_min <= 0.01
          and occ.z_scores["clipped_h"] <= 3.0)
    assert criterion(7, ok, f"Lambda(0)={zero[0] if len(zero) else float('nan')!r}, "
                            f"min 2nd diff {np.min(ld.second_differences):.2e}, "
                            f"min J {np.min(ld.rate.values):.2e}, "
                            f"argmin-mean {abs(r_min - a.mean):.2e}<=3SE={3 * a.se:.2e}, "
                            f"J min {j_min:.2e}<=0.01; twin means {a.mean:.6f}/{b.mean:.6f} "
                            f"z={occ.z_scores['clipped_h']:.2f}<=3")


def test_c08_reachability(criterion):
    t0 = time.perf_counter()
    g = SpectralGrid(32)
    x0, a = Field.mode(g, 1, 10.0), Field.mode(g, 1, 0.1)
    r1 = verify_reachability(x0, a, 1.0, 1e-4, 0.5, 1e-2)
    r2 = verify_reachability(x0, a, 1.0, 5e-5, 0.5, 1e-2)
    dt = time.perf_counter() - t0
    shrink = r1.residual_v / r2.residual_v
    ok = r1.residual_v <= 1e-2 and shrink >= 1.8 and dt < 60
    assert criterion(8, ok, f"||x(T)-a||_V={r1.residual_v:.3e}<=1e-2, "
                            f"shrink on dt halving {shrink:.3f}>=1.8; {dt:.1f}s<60s")


def test_c09_contraction(criterion):
    ratio, bound = studies.contraction_study(BASE.with_(dt=1e-4), n_pairs=100, t_end=0.1)
    ok = bool(np.all(ratio <= bound * 1.1))
    assert criterion(9, ok, f"max ratio {ratio.max():.5f}<=e^-(4pi^2-1)0.1*1.1={bound * 1.1:.5f} "
                            f"over {len(ratio)} pairs")


REPRO_CONFIG = """\
K = 16
T = 0.5
dt = 1e-3
record_stride = 5
ensemble_size = 300
T_values = 1 2
n_max = 3
control_K = 16
control_dt = 1e-3
"""


def test_c10_reproducibility(tmp_path, criterion):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(REPRO_CONFIG)
    bad = []
    for cmd in sorted(COMMANDS):
        a, b = tmp_path / cmd / "a", tmp_path / cmd / "b"
        if run([cmd, str(cfg), "--out", str(a), "--threads", "1", "-q"]) != 0:
            bad.append(f"{cmd}: first run failed")
            continue
        files = sorted(p.name for p in a.iterdir())
        if run([cmd, str(a / files[0]), "--out", str(b), "--threads", "4", "-q"]) != 0:
            bad.append(f"{cmd}: echoed re-run failed")
            continue
        bad += [f"{cmd}/{f}" for f in files if csv_body(a / f) != csv_body(b / f)]
    assert criterion(10, not bad, f"{len(COMMANDS)} subcommands re-run on echoed config at 4 "
                                  f"threads vs 1; mismatches: {bad or 'none'}")
