"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line (visible in ``pytest -v``
output) before asserting.  Run this file directly to get just the summary:

    python tests/test_acceptance.py
"""
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, linalg

from fastslow.brownian import (
    DimensionlessParams,
    brownian_limit_sde,
    nondimensionalize,
    physical_system,
    water_preset,
)
from fastslow.cli import main
from fastslow.config import build_config, load_config_file
from fastslow.estimators import stationary_moment_bound, validity_window
from fastslow.experiments import RUNNERS
from fastslow.fields import Box, GaussianBump, Product, SmoothRamp
from fastslow.fokker_planck import DensityGrid, equivalence_orders
from fastslow.integrators import SchemeConfig, simulate_full
from fastslow.limit import limit_diffusion, limit_drift, solve_stationary_lyapunov
from fastslow.paths import sample_ensemble, uniform_grid
from fastslow.system import make_brownian_system

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def report(capsys):
    """Print one summary line per criterion, bypassing output capture."""
    def _report(n: int, name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{n}] {name}: {detail}", flush=True)
    return _report


def test_1_preset_reproduction(report):
    dp = nondimensionalize(water_preset())
    ok = 1e-13 <= dp.m0 <= 1e-11 and 1e-20 <= dp.eps <= 1e-16 and 1.0 <= dp.sigma_bar_sq <= 100.0
    report(1, "preset reproduction", ok,
           f"m0={dp.m0:.4g} (ref 1e-12), eps={dp.eps:.4g} (ref 1e-18), sigma_bar_sq={dp.sigma_bar_sq:.4g} (ref 10)")
    assert ok


def test_2_K1_arithmetic(report):
    dp = DimensionlessParams(1e-12, 1e-18, 10.0, GaussianBump(1.0, -0.5, (0.0, 0.0, 0.0), 0.5))
    box = Box.cube(2.0)
    vals = [stationary_moment_bound(dp, n, box, 9) for n in (1, 2, 3)]
    ok = all(abs(v - t) <= 1e-12 * t for v, t in zip(vals, (15.0, 225.0, 3375.0)))
    report(2, "K1 arithmetic", ok, f"K1^n = {vals}")
    assert ok


def test_3_reduction_identity(report):
    families = {
        "gaussian-bump": GaussianBump(1.0, -0.6, (0.2, -0.1, 0.0), 0.7),
        "smooth-ramp": SmoothRamp(0.7, 0.25, (0.6, 0.0, 0.8), 0.1, 1.3),
        "product": Product((GaussianBump(1.0, -0.3, (0.0, 0.0, 0.0), 1.0),
                            SmoothRamp(0.8, 0.15, (0.0, 1.0, 0.0), 0.0, 0.7))),
    }
    rng = np.random.default_rng(3)
    worst = 0.0
    t0 = time.perf_counter()
    for eta in families.values():
        dp = DimensionlessParams(1e-12, 1e-3, 10.0, eta)
        sys_ = make_brownian_system(eta, dp.sigma_field, dp.eps)
        closed = brownian_limit_sde(dp)
        y = rng.uniform(-1.5, 1.5, size=(20, 3))
        q, qc = limit_drift(sys_, y), closed.drift(y)
        c, cc = limit_diffusion(sys_, y), closed.diffusion(y)
        worst = max(worst,
                    float(np.max(np.linalg.norm(q - qc, axis=1) / np.linalg.norm(qc, axis=1))),
                    float(np.max(np.linalg.norm(c - cc, axis=(1, 2)) / np.linalg.norm(cc, axis=(1, 2)))))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 1.0
    report(3, "reduction identity", ok, f"max relative error {worst:.2e} over 3 families x 20 points, {dt:.2f} s")
    assert ok


def test_4_lyapunov(report):
    rng = np.random.default_rng(4)
    worst_res, worst_quad = 0.0, 0.0
    t0 = time.perf_counter()
    for _ in range(100):
        n = int(rng.integers(1, 9))
        M, K = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        A = 0.5 * np.eye(n) + 0.3 * M @ M.T + (K - K.T)
        B = rng.normal(size=(n, int(rng.integers(1, 9))))
        S = solve_stationary_lyapunov(A, B).S
        worst_res = max(worst_res, float(np.linalg.norm(A @ S + S @ A.T - B @ B.T)))
        gamma = np.linalg.eigvalsh(0.5 * (A + A.T))[0]
        Q = B @ B.T

        def f(lam):
            E = linalg.expm(-lam * A)
            return E @ Q @ E.T

        ref, _ = integrate.quad_vec(f, 0.0, 40.0 / gamma, epsabs=1e-12, epsrel=1e-12)
        worst_quad = max(worst_quad, float(np.max(np.abs(S - ref))))
    dt = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and worst_quad <= 1e-8 and dt < 10.0
    report(4, "Lyapunov correctness", ok,
           f"max residual {worst_res:.2e}, max quadrature deviation {worst_quad:.2e}, 100 systems, {dt:.1f} s")
    assert ok


def test_5_equipartition(report):
    p = water_preset()
    relax = p.mass / (6 * math.pi * p.mu_bar * p.r)
    t0 = time.perf_counter()
    ens = sample_ensemble(5, 10_000, uniform_grid(10 * relax, 10), 3)
    tr = simulate_full(physical_system(p), np.zeros(3), np.zeros(3), ens,
                       SchemeConfig("joint-ou-brownian", dt=relax))
    ratio = 0.5 * p.mass * np.sum(tr.fast[:, -1] ** 2, axis=-1) / (1.5 * p.kB * p.T0)
    mean, se = float(ratio.mean()), float(ratio.std(ddof=1) / np.sqrt(ratio.size))
    dt = time.perf_counter() - t0
    ok = abs(mean - 1.0) <= 3 * se and dt < 120
    report(5, "equipartition", ok, f"E[m|v|^2/2]/(1.5 kB T0) = {mean:.4f} +- {se:.4f} (10^4 paths, {dt:.1f} s)")
    assert ok


@pytest.mark.slow
def test_6_error_convergence(report):
    cfg = build_config(load_config_file(CONFIGS / "error_sweep.yaml"), {"workers": 1})
    t0 = time.perf_counter()
    res, (cols, rows) = RUNNERS["error-sweep"](cfg)
    dt = time.perf_counter() - t0
    slope = res["slope"]
    below = all(r[4] is not None and r[1] <= r[4] for r in rows)
    ok = 0.8 <= slope <= 1.2 and below and dt < 600
    errs = ", ".join(f"eps={r[0]:g}: {r[1]:.3e}+-{r[2]:.1e}" for r in rows)
    report(6, "O(eps) convergence", ok,
           f"slope {slope:.3f}; {errs}; bound holds={below} (bound at eps=1e-2: {rows[0][4]:.2e}); {dt:.0f} s")
    assert ok


def test_7_validity_window(report):
    consts = {"K2_bar": 1e2, "K3_bar": 1e2, "K4": 300.0}
    w = validity_window(water_preset(), consts, delta_sq=1e-12, eps=1e-18, m0=1e-12)
    informative = validity_window(water_preset(), {**consts, "K3_bar": 1e6}, delta_sq=1e-12, eps=1e-18, m0=1e-12)
    ok = w.t_max >= 1e10 and abs(w.t_min - 1 / 300) <= 1e-15
    report(7, "validity window", ok,
           f"t_min={w.t_min:.4g} s (reference 1/300 = {1 / 300:.4g}), t_max={w.t_max:.3e} s >= 1e10; "
           f"with K3_bar=1e6 t_max would be {informative.t_max:.3e} s")
    assert ok


def test_8_fick_equivalence(report):
    t0 = time.perf_counter()
    families = {
        "gaussian-bump": GaussianBump(1.0, -0.5, (0.3,), 0.8),
        "smooth-ramp": SmoothRamp(0.7, 0.25, (1.0,), 0.2, 1.5),
        "product": Product((GaussianBump(1.0, -0.3, (0.0,), 1.0), SmoothRamp(0.8, 0.15, (1.0,), 0.0, 1.2))),
    }
    orders = {}
    for name, eta in families.items():
        dp = DimensionlessParams(1e-12, 1e-3, 2.0, eta)
        orders[name] = min(equivalence_orders(dp, DensityGrid(-4.0, 4.0, 64), levels=3)["orders"])
    cfg = build_config(load_config_file(CONFIGS / "fick_check.yaml"), {"workers": 1})
    res, _ = RUNNERS["fick-check"](cfg)
    dt = time.perf_counter() - t0
    ok = (min(orders.values()) >= 1.9 and res["L1_error"] < 0.05 and res["mass_drift"] <= 1e-10
          and res["n_paths"] >= 100_000 and dt < 300)
    report(8, "Fick equivalence", ok,
           "orders " + ", ".join(f"{k}={v:.2f}" for k, v in orders.items())
           + f"; L1={res['L1_error']:.4f} ({res['n_paths']} paths); mass drift={res['mass_drift']:.1e}; {dt:.0f} s")
    assert ok


def test_9_determinism(report, tmp_path):
    base = ["simulate", "-c", str(CONFIGS / "simulate.yaml"), "--paths", "120", "--horizon-s", "0.05"]
    runs = {"w1": ["--workers", "1"], "w1_again": ["--workers", "1"], "w2": ["--workers", "2"]}
    codes = {k: main(base + extra + ["--output-dir", str(tmp_path / k)]) for k, extra in runs.items()}
    same = True
    for name in ("simulate.json", "simulate.csv"):
        ref = (tmp_path / "w1" / name).read_bytes()
        same &= all((tmp_path / k / name).read_bytes() == ref for k in runs)
    ok = all(c == 0 for c in codes.values()) and same
    report(9, "determinism", ok, f"reruns and 1 vs 2 workers byte-identical: {same}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
