"""Run configuration: schema, loading, command-line overrides and diagnostics.

A run is described by one YAML or JSON mapping.  Unknown keys are rejected at
every level.  Keys that only affect *how* a run executes (``workers``,
``output``) are kept out of the resolved config that artifacts embed and hash,
so changing them never changes an artifact.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from .brownian import PRESETS, DimensionlessParams, PhysicalParams, nondimensionalize
from .errors import ConfigInvalid, FastSlowError
from .fields import Box, ScalarField, field_from_spec
from .integrators import SCHEMES

EXPERIMENTS = ("preset", "limit-coeffs", "simulate", "moments", "error-sweep", "validity-window", "fick-check")
OUTPUT_ENV = "FASTSLOW_OUTPUT_DIR"
EXECUTION_KEYS = ("workers", "output")

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_FIELD = {
    "oneOf": [
        _NUM,
        {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}},
    ]
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "seed": {"type": "integer", "minimum": 0},
        "paths": {"type": "integer", "minimum": 1},
        "workers": {"type": "integer", "minimum": 1},
        "preset": {"enum": sorted(PRESETS)},
        "physical": {
            "type": "object",
            "additionalProperties": False,
            "required": ["r", "rho_particle", "rho_medium", "nu", "T0"],
            "properties": {k: _POS for k in ("r", "rho_particle", "rho_medium", "nu", "T0", "kB", "ell", "tau")},
        },
        "dimensionless": {
            "type": "object",
            "additionalProperties": False,
            "required": ["eps", "sigma_bar_sq"],
            "properties": {"m0": _POS, "eps": _POS, "sigma_bar_sq": _POS, "ell": _POS, "tau": _POS},
        },
        "eta": _FIELD,
        "dim": {"type": "integer", "minimum": 1, "maximum": 3},
        "eps": _POS,
        "domain_box": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lower", "upper"],
            "properties": {"lower": _VEC, "upper": _VEC},
        },
        "grid_density": {"type": "integer", "minimum": 2},
        "scheme": {"enum": list(SCHEMES)},
        "dt": _POS,
        "substeps_fast": {"type": "integer", "minimum": 1},
        "record_every": {"type": "integer", "minimum": 1},
        "horizon_s": _POS,
        "x0": _VEC,
        "y0": {"oneOf": [_VEC, {"enum": ["stationary", "zero"]}]},
        "limit_coeffs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "points": {"type": "array", "items": _VEC},
                "random_points": {"type": "integer", "minimum": 0},
                "gradient_mode": {"enum": ["analytic", "fd"]},
            },
        },
        "moments": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "orders": {"type": "array", "items": {"enum": [1, 2, 3]}, "minItems": 1},
                "times": {"type": "array", "items": _NUM, "minItems": 1},
            },
        },
        "error_sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eps": {"type": "array", "items": _POS, "minItems": 2},
                "s": _POS,
                "h_over_eps": _POS,
            },
        },
        "validity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_sq": _POS,
                "K2_bar": _POS,
                "K3_bar": {"type": "number", "minimum": 0},
                "K4": _POS,
                "eps": _POS,
                "m0": _POS,
            },
        },
        "fick": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lower": _NUM,
                "upper": _NUM,
                "n_cells": {"type": "integer", "minimum": 4},
                "boundary": {"type": "string"},
                "face_mean": {"enum": ["arithmetic", "harmonic"]},
                "t_end": _POS,
                "dt_pde": _POS,
                "init_center": _NUM,
                "init_width": _POS,
                "bins": {"type": "integer", "minimum": 2},
                "levels": {"type": "integer", "minimum": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "prefix": {"type": "string"}},
        },
    },
}

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": 1000,
    "workers": 1,
    "grid_density": 9,
    "scheme": "joint-ou-brownian",
    "dt": 1e-3,
    "substeps_fast": 1,
    "record_every": 1,
    "horizon_s": 0.5,
    "y0": "stationary",
}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-3`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _yaml(text: str):
    return yaml.load(text, Loader=_Loader)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config_file(path: str | os.PathLike) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else _yaml(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"cannot parse config {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigInvalid("config file must hold a mapping at the top level")
    return data


def parse_assignment(text: str) -> dict:
    """``a.b.c=value`` (value parsed as YAML) to a nested mapping."""
    if "=" not in text:
        raise ConfigInvalid(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = _yaml(raw)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"cannot parse value in override {text!r}: {exc}") from None
    out: dict = {}
    cur = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def schema_errors(cfg: dict) -> list[str]:
    v = jsonschema.Draft202012Validator(SCHEMA)
    return [f"{'.'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
            for e in sorted(v.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))]


def build_config(raw: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file keys, then overrides; validated against the schema."""
    cfg = _deep_merge(DEFAULTS, raw or {})
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    errs = schema_errors(cfg)
    if errs:
        raise ConfigInvalid("; ".join(errs))
    sources = [k for k in ("preset", "physical", "dimensionless") if k in cfg]
    if len(sources) > 1:
        raise ConfigInvalid(f"give only one of preset / physical / dimensionless, got {sources}")
    if not sources:
        cfg["preset"] = "water"
    return cfg


def resolved_view(cfg: dict) -> dict:
    """The part of the config that determines results (execution keys removed)."""
    return {k: v for k, v in cfg.items() if k not in EXECUTION_KEYS}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(resolved_view(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def output_dir(cfg: dict) -> Path:
    d = cfg.get("output", {}).get("dir") or os.environ.get(OUTPUT_ENV) or "fastslow-out"
    return Path(d)


@dataclass(frozen=True)
class ModelSetup:
    """Parameters resolved from a config: physical (if known), dimensionless, box."""

    physical: PhysicalParams | None
    dimensionless: DimensionlessParams
    eta: ScalarField
    dim: int
    box: Box | None


def _box(cfg: dict, dim: int) -> Box | None:
    spec = cfg.get("domain_box")
    if spec is None:
        return None
    lo, hi = spec["lower"], spec["upper"]
    if len(lo) != len(hi):
        raise ConfigInvalid("domain_box lower and upper differ in length")
    if len(lo) != dim:
        raise ConfigInvalid(f"domain_box is {len(lo)}-D but the model is {dim}-D")
    try:
        return Box(tuple(lo), tuple(hi))
    except (ValueError, FastSlowError) as exc:
        raise ConfigInvalid(f"domain_box: {exc}") from None


def setup_from_config(cfg: dict, eps: float | None = None) -> ModelSetup:
    eta = field_from_spec(cfg.get("eta", 1.0))
    if eta.dim is not None and "dim" in cfg and cfg["dim"] != eta.dim:
        raise ConfigInvalid(f"dim={cfg['dim']} disagrees with the {eta.dim}-D eta field")
    dim = eta.dim if eta.dim is not None else int(cfg.get("dim", 3))
    box = _box(cfg, dim)
    phys = None
    try:
        if "dimensionless" in cfg:
            d = cfg["dimensionless"]
            dp = DimensionlessParams(d.get("m0", 1.0), d["eps"], d["sigma_bar_sq"], eta,
                                     d.get("ell", 1.0), d.get("tau", 1.0))
        else:
            if "physical" in cfg:
                phys = PhysicalParams(eta_field=eta, **cfg["physical"])
            else:
                phys = PRESETS[cfg["preset"]](eta)
            dp = nondimensionalize(phys)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None
    eps = eps if eps is not None else cfg.get("eps")
    if eps is not None:
        dp = DimensionlessParams(dp.m0, float(eps), dp.sigma_bar_sq, dp.eta_field, dp.ell, dp.tau)
    return ModelSetup(phys, dp, eta, dim, box)


def validate(cfg_raw: dict, overrides: dict | None = None) -> list[dict]:
    """Schema and physics diagnostics; never raises.  Levels: ``error``, ``warning``, ``info``."""
    diags: list[dict] = []

    def add(level, code, msg):
        diags.append({"level": level, "code": code, "message": msg})

    merged = _deep_merge(DEFAULTS, cfg_raw or {})
    if overrides:
        merged = _deep_merge(merged, overrides)
    for e in schema_errors(merged):
        add("error", "schema", e)
    if diags:
        return diags
    try:
        cfg = build_config(cfg_raw, overrides)
        setup = setup_from_config(cfg)
    except FastSlowError as exc:
        add("error", type(exc).__name__, str(exc))
        return diags
    dp, box = setup.dimensionless, setup.box
    exp = cfg.get("experiment")
    if box is None and not setup.eta.is_constant:
        if exp in ("validity-window", "moments", "error-sweep", "preset") or exp is None:
            needs = "validity" not in cfg or not {"K2_bar", "K3_bar", "K4"} <= set(cfg["validity"])
            if exp != "validity-window" or needs:
                add("error", "domain_box", "a domain_box is required for sup/inf constants of a non-constant eta")
    if box is not None:
        try:
            lo, hi = setup.eta.extrema(box, max(cfg["grid_density"], 9))
        except FastSlowError as exc:
            add("error", type(exc).__name__, str(exc))
            return diags
        if not lo > 0:
            add("error", "eta_positivity", f"eta has grid infimum {lo:g} <= 0 on the domain box")
        elif hi > 1.0 + 1e-12:
            add("error", "eta_bound", f"eta reaches {hi:g} > 1; the viscosity scale must be its supremum")
        else:
            from .brownian import dimensionless_system
            from .system import verify_stability

            try:
                gamma = verify_stability(dimensionless_system(dp), box, grid_density=min(cfg["grid_density"], 9))
                add("warning" if gamma < 1e-8 else "info", "stability", f"min eigenvalue of sym(A) on box: {gamma:g}")
            except FastSlowError as exc:
                add("error", type(exc).__name__, str(exc))
    elif setup.eta.is_constant:
        c = float(np.asarray(setup.eta.value(np.zeros(setup.dim))))
        if not c > 0:
            add("error", "eta_positivity", f"constant eta = {c:g} is not positive")
        elif c > 1.0 + 1e-12:
            add("error", "eta_bound", f"constant eta = {c:g} exceeds 1")
    h = cfg["dt"] / cfg["substeps_fast"]
    if cfg["scheme"] == "euler-maruyama":
        eta_max = 1.0
        limit = dp.eps / (2.0 * eta_max)
        if h >= limit:
            add("warning", "euler_stability",
                f"Euler step {h:g} is not below eps/(2 gamma_max) = {limit:g}; simulations will be rejected")
    if exp in ("simulate", "moments", "error-sweep", "fick-check") and cfg["horizon_s"] >= 1.0:
        add("warning", "error_bound_range", "the Gronwall error bound is only stated for s < 1")
    if exp == "fick-check" and setup.dim != 1:
        add("error", "fick_dim", "fick-check runs on a 1-D line; use a 1-D eta field or dim: 1")
    return diags
