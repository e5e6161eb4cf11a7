"""Experiment runners behind the command-line subcommands.

Each runner takes a resolved config and returns ``(summary, table)`` where
``table`` is ``(columns, rows)`` or ``None``.  Path simulations are split into
contiguous blocks of path indices; every path draws from its own seeded
streams and reductions run on the re-assembled arrays in path order, so the
results do not depend on how many workers ran the blocks.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .brownian import (
    brownian_limit_sde,
    dimensionless_system,
    shift_vector_crosscheck,
)
from .config import ModelSetup, setup_from_config
from .errors import ConfigInvalid
from .estimators import (
    error_bound,
    gaussian_stationary_moment,
    gronwall_constants,
    mc_moments,
    moment_constant,
    stationary_moment_bound,
    validity_window,
)
from .fokker_planck import DensityGrid, DiffusivityField, equivalence_orders, histogram_l1, solve_fick
from .integrators import SchemeConfig, mean_and_se, simulate_full, simulate_reduced
from .limit import reduce_system
from .paths import Trajectory, sample_ensemble, uniform_grid

# Constants quoted for the water preset in the source analysis; shown next to
# the computed values, never used in computations.
REFERENCE = {"m0": 1e-12, "eps": 1e-18, "sigma_bar_sq": 10.0, "K1": 15.0, "K4": 300.0}


def _steps(horizon: float, h: float) -> int:
    n = horizon / h
    if abs(n - round(n)) > 1e-6 * max(n, 1.0) or round(n) < 1:
        raise ConfigInvalid(f"horizon {horizon:g} is not a whole number of steps {h:g}")
    return int(round(n))


def _blocks(n_paths: int, workers: int) -> list[tuple[int, ...]]:
    k = max(1, min(workers, n_paths))
    return [tuple(int(i) for i in b) for b in np.array_split(np.arange(n_paths), k)]


def _map_blocks(fn, payloads: list, workers: int) -> list:
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
        return list(pool.map(fn, payloads))


def _initial_state(spec, dim: int, what: str) -> np.ndarray:
    if spec is None or spec == "zero":
        return np.zeros(dim)
    v = np.asarray(spec, dtype=float)
    if v.shape != (dim,):
        raise ConfigInvalid(f"{what} must have {dim} components")
    return v


def _block_worker(payload: dict) -> dict:
    """Simulate one block of paths; returns plain arrays."""
    dp, h, horizon, kind = payload["dp"], payload["h"], payload["horizon"], payload["kind"]
    cfg = SchemeConfig(payload["scheme"], dt=h * payload["record_every"], substeps_fast=payload["record_every"],
                       record_every=1)
    dim = dp.dim
    t_grid = uniform_grid(horizon, _steps(horizon, h))
    ens = sample_ensemble(payload["seed"], payload["indices"], t_grid, dim)
    out: dict = {}
    x0 = payload["x0"]
    if payload.get("x0_spread"):
        c, w = payload["x0_spread"]
        x0 = c + w * ens.initial_normals(dim)
    if kind in ("full", "pair"):
        system = dimensionless_system(dp)
        full = simulate_full(system, x0, payload["y0"], ens, cfg)
        out.update(t=full.t_grid, full_slow=full.slow, full_fast=full.fast, aborted=full.aborted)
    if kind in ("reduced", "pair"):
        red = simulate_reduced(brownian_limit_sde(dp), x0, ens, cfg)
        out.update(t=red.t_grid, red_slow=red.slow)
    return out


def simulate_paths(setup: ModelSetup, cfg: dict, kind: str, h: float, horizon: float, record_every: int = 1,
                   x0_spread=None) -> dict:
    """Run ``kind`` in {'full', 'reduced', 'pair'} on ``cfg['paths']`` paths, split over workers."""
    dp = setup.dimensionless
    y0 = cfg.get("y0", "stationary")
    payload = {
        "dp": dp,
        "h": h,
        "horizon": horizon,
        "kind": kind,
        "scheme": cfg["scheme"],
        "record_every": record_every,
        "seed": cfg["seed"],
        "x0": _initial_state(cfg.get("x0"), setup.dim, "x0"),
        "y0": "stationary" if y0 == "stationary" else _initial_state(y0, setup.dim, "y0"),
        "x0_spread": x0_spread,
    }
    blocks = _blocks(cfg["paths"], cfg.get("workers", 1))
    parts = _map_blocks(_block_worker, [dict(payload, indices=b) for b in blocks], cfg.get("workers", 1))
    merged = {"t": parts[0]["t"], "indices": tuple(i for b in blocks for i in b)}
    for key in ("full_slow", "full_fast", "aborted", "red_slow"):
        if key in parts[0]:
            merged[key] = np.concatenate([p[key] for p in parts], axis=0)
    return merged


def _trajectories(sim: dict):
    full = red = None
    if "full_slow" in sim:
        full = Trajectory(sim["t"], sim["full_slow"], sim["full_fast"], sim["indices"], sim["aborted"])
    if "red_slow" in sim:
        red = Trajectory(sim["t"], sim["red_slow"], None, sim["indices"])
    return full, red


def _k1(setup: ModelSetup, cfg: dict) -> float | None:
    if setup.box is None and not setup.eta.is_constant:
        return None
    return moment_constant(setup.dimensionless, setup.box, max(cfg["grid_density"], 9))


def _finite(x):
    return x if math.isfinite(x) else str(x)


def run_preset(cfg: dict):
    setup = setup_from_config(cfg)
    dp = setup.dimensionless
    K1 = _k1(setup, cfg)
    res = {
        "dimensionless": dp.to_dict(),
        "K1": K1,
        "K4": None,
        "reference": REFERENCE,
    }
    if setup.physical is not None:
        res["physical"] = setup.physical.to_dict()
        res["D_bar"] = setup.physical.D_bar
    if setup.box is not None or setup.eta.is_constant:
        y = setup.box.grid(max(cfg["grid_density"], 9)) if setup.box is not None else np.zeros((1, setup.dim))
        res["K4"] = 3.0 * float(np.min(dp.sigma_sq(y) / dp.eta_field.value(y) ** 2))
    res["dimensionless_D_bar"] = 0.5 * dp.sigma_bar_sq
    return res, None


def _sample_points(setup: ModelSetup, cfg: dict) -> np.ndarray:
    """Listed points first, then ``random_points`` uniform draws in the box (20 if nothing is listed)."""
    spec = cfg.get("limit_coeffs", {})
    pts = np.zeros((0, setup.dim))
    if spec.get("points"):
        pts = np.asarray(spec["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != setup.dim:
            raise ConfigInvalid(f"limit_coeffs.points must be {setup.dim}-D")
    n = spec.get("random_points", 0 if len(pts) else 20)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(0xC0EF,)))
    if setup.box is not None:
        lo, hi = np.asarray(setup.box.lower), np.asarray(setup.box.upper)
    else:
        lo, hi = -np.ones(setup.dim), np.ones(setup.dim)
    return np.vstack([pts, lo + (hi - lo) * rng.random((n, setup.dim))])


def _rel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm((a - b).reshape(a.shape[0], -1), axis=1)
    nb = np.linalg.norm(b.reshape(b.shape[0], -1), axis=1)
    floor = max(1e-12 * float(np.max(nb)) if nb.size else 0.0, 1e-300)
    return na / np.maximum(nb, floor)


def run_limit_coeffs(cfg: dict):
    setup = setup_from_config(cfg)
    dp = setup.dimensionless
    mode = cfg.get("limit_coeffs", {}).get("gradient_mode", "analytic")
    pts = _sample_points(setup, cfg)
    general = reduce_system(dimensionless_system(dp), gradient_mode=mode)
    closed = brownian_limit_sde(dp)
    qg, qc = general.drift(pts), closed.drift(pts)
    cg, cc = general.diffusion(pts), closed.diffusion(pts)
    rq, rc = _rel(qg, qc), _rel(cg, cc)
    d = setup.dim
    m = cg.shape[-1]
    cols = ["index"] + [f"y{i}" for i in range(d)] + [f"q0_{i}" for i in range(d)] \
        + [f"C0_{i}{j}" for i in range(d) for j in range(m)] \
        + [f"q0_closed_{i}" for i in range(d)] + ["rel_err_drift", "rel_err_diffusion"]
    rows = [
        [k, *pts[k], *qg[k], *cg[k].ravel(), *qc[k], rq[k], rc[k]] for k in range(pts.shape[0])
    ]
    res = {
        "gradient_mode": mode,
        "n_points": int(pts.shape[0]),
        "max_rel_err_drift": float(np.max(rq)),
        "max_rel_err_diffusion": float(np.max(rc)),
    }
    if setup.physical is not None and setup.eta.has_derivatives and not setup.eta.is_constant:
        cc_ = shift_vector_crosscheck(setup.physical, pts * setup.physical.ell)
        res["shift_vector"] = {
            "ratio_median": _finite(cc_["ratio_median"]),
            "ratio_expected_36_pi2_r": cc_["ratio_expected"],
        }
    return res, (cols, rows)


def _scheme_h(cfg: dict) -> float:
    return cfg["dt"] / cfg["substeps_fast"]


def run_simulate(cfg: dict):
    setup = setup_from_config(cfg)
    h = _scheme_h(cfg)
    rec = cfg["substeps_fast"] * cfg["record_every"]
    sim = simulate_paths(setup, cfg, "pair", h, cfg["horizon_s"], rec)
    full, red = _trajectories(sim)
    ok = ~full.aborted
    x0 = _initial_state(cfg.get("x0"), setup.dim, "x0")
    cols = ["s", "msd_full", "msd_reduced", "strong_error", "std_error"]
    rows = []
    for k, s in enumerate(full.t_grid):
        df = full.slow[ok, k] - x0
        dr = red.slow[ok, k] - x0
        e = full.slow[ok, k] - red.slow[ok, k]
        err, se = mean_and_se(np.sum(e * e, axis=-1))
        rows.append([s, mean_and_se(np.sum(df * df, axis=-1))[0], mean_and_se(np.sum(dr * dr, axis=-1))[0], err, se])
    disp = full.slow[ok, -1] - x0
    sq = np.sum(disp * disp, axis=-1)
    msd, msd_se = mean_and_se(sq)
    res = {
        "eps": setup.dimensionless.eps,
        "mean_displacement_end": [mean_and_se(disp[:, i])[0] for i in range(setup.dim)],
        "msd_end": msd,
        "msd_std_error_end": msd_se,
        "displacement_variance_end": float(np.var(disp, axis=0, ddof=1).sum()) if disp.shape[0] > 1 else None,
        "n_paths": full.n_paths,
        "n_aborted": full.n_aborted,
        "h": h,
        "s_end": float(full.t_grid[-1]),
        "strong_error_end": rows[-1][3],
        "std_error_end": rows[-1][4],
    }
    return res, (cols, rows)


def run_moments(cfg: dict):
    setup = setup_from_config(cfg)
    dp = setup.dimensionless
    spec = cfg.get("moments", {})
    orders = spec.get("orders", [1, 2, 3])
    times = spec.get("times", [cfg["horizon_s"]])
    h = _scheme_h(cfg)
    rec = cfg["substeps_fast"] * cfg["record_every"]
    sim = simulate_paths(setup, cfg, "full", h, cfg["horizon_s"], rec)
    full, _ = _trajectories(sim)
    K1 = _k1(setup, cfg)
    cols = ["s", "n", "mc_value", "std_error", "bound_K1_pow_n", "gaussian_stationary", "flagged"]
    rows = []
    for s in times:
        for n in orders:
            bound = None if K1 is None else stationary_moment_bound(dp, n, setup.box, max(cfg["grid_density"], 9))
            rep = mc_moments(full, dp.eps, n, s, bound)
            gauss = None if K1 is None else gaussian_stationary_moment(dp, n, setup.box, max(cfg["grid_density"], 9))
            rows.append([s, n, rep.mc_value, rep.std_error, bound, gauss, int(rep.flagged)])
    res = {"eps": dp.eps, "K1": K1, "n_paths": full.n_paths, "n_aborted": full.n_aborted}
    if setup.eta.is_constant and K1 is not None:
        first = [r for r in rows if r[1] == 1]
        if first:
            # eps E|u|^2 / (3 sigma_bar^2 / 2) equals E[m|v|^2/2] / (3 kB T0 / 2) for eta = 1
            res["equipartition_ratio"] = first[-1][2] / K1
            res["equipartition_ratio_se"] = first[-1][3] / K1
    return res, (cols, rows)


def _fit_slope(x, y) -> float:
    lx, ly = np.log10(np.asarray(x, float)), np.log10(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def run_error_sweep(cfg: dict):
    spec = cfg.get("error_sweep", {})
    eps_list = spec.get("eps", [1e-2, 1e-3, 1e-4])
    s = spec.get("s", cfg["horizon_s"])
    ratio = spec.get("h_over_eps", 0.05)
    base = setup_from_config(cfg)
    constants = None
    if base.box is not None and base.eta.has_derivatives:
        constants = gronwall_constants(base.dimensionless, base.box, max(cfg["grid_density"], 8))
    cols = ["eps", "strong_error", "std_error", "n_paths", "error_bound"]
    rows = []
    for eps in eps_list:
        setup = setup_from_config(cfg, eps=eps)
        h = ratio * eps
        # record only at s; the path grid step equals h
        n_int = _steps(s, h)
        sim = simulate_paths(setup, cfg, "pair", h, s, n_int)
        full, red = _trajectories(sim)
        ok = ~full.aborted
        e = full.slow[ok, -1] - red.slow[ok, -1]
        err, se = mean_and_se(np.sum(e * e, axis=-1))
        bound = error_bound(eps, constants, s) if constants is not None and s < 1 else None
        rows.append([eps, err, se, int(np.count_nonzero(ok)), bound])
    res = {
        "s": s,
        "h_over_eps": ratio,
        "slope": _fit_slope([r[0] for r in rows], [r[1] for r in rows]),
        "constants": None if constants is None else constants.to_dict(),
    }
    return res, (cols, rows)


def run_validity_window(cfg: dict):
    setup = setup_from_config(cfg)
    dp = setup.dimensionless
    spec = cfg.get("validity", {})
    given = {k: spec[k] for k in ("K2_bar", "K3_bar", "K4") if k in spec}
    K1 = _k1(setup, cfg)
    if len(given) == 3:
        constants = given
    else:
        if setup.box is None:
            raise ConfigInvalid("validity-window needs a domain_box (or K2_bar, K3_bar and K4 in 'validity')")
        gc = gronwall_constants(dp, setup.box, max(cfg["grid_density"], 8))
        K1 = gc.K1
        constants = {"K2_bar": gc.K2_bar, "K3_bar": gc.K3_bar, "K4": gc.K4}
        constants.update(given)
    params = setup.physical if setup.physical is not None else dp
    delta_sq = spec.get("delta_sq")
    if delta_sq is None and setup.physical is None:
        raise ConfigInvalid("validity.delta_sq is required without physical parameters")
    win = validity_window(params, constants, delta_sq, spec.get("eps"), spec.get("m0"))
    res = {"K1": K1}
    res.update({k: _finite(v) if isinstance(v, float) else v for k, v in win.to_dict().items()})
    res["reference_K4"] = REFERENCE["K4"]
    res["reference_t_min"] = win.tau / REFERENCE["K4"]
    return res, None


def run_fick_check(cfg: dict):
    setup = setup_from_config(cfg)
    if setup.dim != 1:
        raise ConfigInvalid("fick-check runs on a 1-D line; use a 1-D eta field or dim: 1")
    dp = setup.dimensionless
    spec = cfg.get("fick", {})
    lower, upper = spec.get("lower", -6.0), spec.get("upper", 6.0)
    n_cells = spec.get("n_cells", 480)
    boundary = spec.get("boundary", "reflecting")
    t_end = cfg["horizon_s"]
    dt_pde = spec.get("dt_pde", 1e-3)
    c0, w0 = spec.get("init_center", 0.0), spec.get("init_width", 0.3)
    levels = spec.get("levels", 3)

    coarse = DensityGrid(lower, upper, max(8, n_cells // 2 ** (levels - 1)), boundary)
    eq = equivalence_orders(dp, coarse, levels)
    grid = DensityGrid(lower, upper, n_cells, boundary)
    rho0 = grid.with_rho(np.exp(-0.5 * ((grid.axis - c0) / w0) ** 2)).normalized()
    D = DiffusivityField.from_dimensionless(dp)
    sol = solve_fick(D, rho0, t_end, dt_pde, face_mean=spec.get("face_mean", "arithmetic"))

    h = _scheme_h(cfg)
    sim = simulate_paths(setup, cfg, "reduced", h, t_end, _steps(t_end, h), x0_spread=(c0, w0))
    _, red = _trajectories(sim)
    cmp = histogram_l1(red.slow[:, -1, 0], grid, sol.rho[-1], bins=spec.get("bins", 40))
    cols = ["x", "rho_solved", "rho_histogram", "abs_difference"]
    rows = [[x, a, b, d] for x, a, b, d in zip(cmp["centers"], cmp["solved"], cmp["hist"], cmp["abs_diff"])]
    res = {
        "mass_drift": sol.mass_drift,
        "L1_error": cmp["L1"],
        "equivalence_max_diff": eq["max_diff"][-1],
        "equivalence_orders": eq["orders"],
        "equivalence_h": eq["h"],
        "D_bar": setup.physical.D_bar if setup.physical is not None else None,
        "dimensionless_D_bar": 0.5 * dp.sigma_bar_sq,
        "min_unclipped": sol.min_unclipped,
        "n_paths": red.n_paths,
        "n_outside": cmp["n_outside"],
    }
    return res, (cols, rows)


RUNNERS = {
    "preset": run_preset,
    "limit-coeffs": run_limit_coeffs,
    "simulate": run_simulate,
    "moments": run_moments,
    "error-sweep": run_error_sweep,
    "validity-window": run_validity_window,
    "fick-check": run_fick_check,
}
