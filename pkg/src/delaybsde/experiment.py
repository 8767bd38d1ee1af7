"""Experiment configs, the solve runner, and run comparison.

A config is a TOML file.  ``run`` writes a directory of CSV files plus a
JSON ``run.meta`` that echoes the full (defaulted) config, so any run can
be reproduced from its metadata alone.
"""

from __future__ import annotations

import copy
import csv
import importlib
import json
import logging
import math
import platform
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import scipy

from . import __version__
from .delay_core import make_grid, snap_measure
from .errors import InvalidArgument
from .estimates import AprioriResult, PNormSettings, check_apriori_pair, check_apriori_Z
from .model import (
    GeneratorSpec,
    MarketModel,
    TerminalCondition,
    make_problem,
    portfolio_insurance_problem,
)
from .solver import generator_values, picard_solve, truncation_ladder
from .stochastics import RegressionBasis, mean_stderr, simulate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SCENARIOS = ("zero-generator", "delayed-linear", "delayed-power", "heavy-tail-ladder",
             "portfolio-insurance", "custom")

DEFAULTS: Dict[str, Any] = {
    "grid": {"T": 1.0, "N": 50},
    "ensemble": {"M": 10_000, "d": 1},
    "delay": {"atoms": [[0.0, 1.0]]},
    "generator": {"kind": "zero", "coef_y": 0.0, "coef_z": 0.0, "intercept": 0.0,
                  "gamma": 0.0, "delta": 0.5},
    "terminal": {"kind": "brownian"},
    "basis": {"kind": "polynomial", "degree": 3, "ridge": 1e-10, "history": True},
    "picard": {"max_iters": 20, "tol": 1e-6, "beta": 1.0},
    "truncation": {"levels": [], "betas": [0.5, 0.9]},
    "estimates": {"p": [1.5, 3.0], "z": 3.0},
    "portfolio": {"guess_Y0": 1.0, "rate": 0.0, "volatility": 0.2, "premium": 0.0,
                  "initial_price": 1.0},
    "output": {"dir": "runs/out", "max_paths": 200},
}

SCENARIO_GENERATOR = {"zero-generator": "zero", "delayed-linear": "linear",
                      "delayed-power": "power", "heavy-tail-ladder": None,
                      "portfolio-insurance": "zero", "custom": "custom"}


class ConfigError(InvalidArgument):
    """Config file is malformed or violates a module precondition."""


@dataclass
class ExperimentConfig:
    scenario: str
    sections: Dict[str, Dict[str, Any]]
    source: Optional[str] = None

    def __getitem__(self, key):
        return self.sections[key]

    def echo(self) -> dict:
        out = {"scenario": self.scenario}
        out.update(copy.deepcopy(self.sections))
        return out


def builtin_scenarios() -> Dict[str, Path]:
    """Shipped scenario configs keyed by stem."""
    root = resources.files("delaybsde") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> ExperimentConfig:
    """Read a TOML config (or ``builtin:NAME``) and validate it."""
    text_path = str(path)
    if text_path.startswith("builtin:"):
        name = text_path.split(":", 1)[1]
        shipped = builtin_scenarios()
        if name not in shipped:
            raise ConfigError(f"no shipped scenario {name!r}; have {sorted(shipped)}")
        path = shipped[name]
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return parse_config(raw, source=str(path))


def parse_config(raw: dict, source: Optional[str] = None) -> ExperimentConfig:
    raw = dict(raw)
    scenario = raw.pop("scenario", None)
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    sections = _merge(DEFAULTS, raw)
    forced = SCENARIO_GENERATOR[scenario]
    if forced is not None and "kind" not in raw.get("generator", {}):
        sections["generator"]["kind"] = forced
    cfg = ExperimentConfig(scenario, sections, source)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    ens = cfg["ensemble"]
    for key in ("seed", "chunk_size"):
        if key not in ens:
            raise ConfigError(f"[ensemble] {key} is required for reproducibility")
    for key in ("M", "d", "chunk_size"):
        if not isinstance(ens[key], int) or ens[key] < 1:
            raise ConfigError(f"[ensemble] {key} must be a positive integer")
    if not isinstance(ens["seed"], int) or ens["seed"] < 0:
        raise ConfigError("[ensemble] seed must be a nonnegative integer")
    grid = cfg["grid"]
    if not grid["T"] > 0 or not isinstance(grid["N"], int) or grid["N"] < 1:
        raise ConfigError("[grid] needs T > 0 and a positive integer N")
    gen = cfg["generator"]
    if not 0 < gen["delta"] < 1:
        raise ConfigError(
            f"[generator] delta = {gen['delta']} violates the sublinear growth condition: "
            "delta must lie in (0, 1)")
    if gen["gamma"] < 0:
        raise ConfigError("[generator] gamma must be nonnegative")
    if gen["kind"] not in ("zero", "linear", "power", "custom"):
        raise ConfigError(f"[generator] unknown kind {gen['kind']!r}")
    if gen["kind"] == "custom" and ("callable" not in gen or "K" not in gen):
        raise ConfigError("[generator] custom kind needs 'callable' (module:function) and 'K'")
    if cfg.scenario == "heavy-tail-ladder" and not cfg["truncation"]["levels"]:
        raise ConfigError("heavy-tail-ladder scenario needs [truncation] levels")
    levels = cfg["truncation"]["levels"]
    if any(v <= 0 for v in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("[truncation] levels must be positive and increasing")
    if any(not 0 < b < 1 for b in cfg["truncation"]["betas"]):
        raise ConfigError("[truncation] betas must lie in (0, 1)")
    for p in cfg["estimates"]["p"]:
        if not p > 1 or p == 2:
            raise ConfigError(f"[estimates] p = {p} must lie in (1, 2) or (2, inf)")
    if cfg["picard"]["max_iters"] < 1 or not cfg["picard"]["tol"] > 0:
        raise ConfigError("[picard] needs max_iters >= 1 and tol > 0")
    T = grid["T"]
    for atom in cfg["delay"]["atoms"]:
        if len(atom) != 2 or not -T - 1e-12 <= atom[0] <= 1e-12 or not atom[1] > 0:
            raise ConfigError(f"[delay] atom {atom} needs a lag in [-T, 0] and a positive weight")
    try:
        build_terminal(cfg["terminal"])
    except (InvalidArgument, KeyError, TypeError) as exc:
        raise ConfigError(f"[terminal] {exc}") from exc


def build_terminal(spec: dict) -> TerminalCondition:
    kind = spec.get("kind", "brownian")
    scale = float(spec.get("scale", 1.0))
    if kind == "brownian":
        return TerminalCondition.brownian(scale)
    if kind == "abs_brownian":
        return TerminalCondition.abs_brownian().scaled(scale)
    if kind == "constant":
        return TerminalCondition.constant(spec["value"]).scaled(scale)
    if kind == "uniform":
        return TerminalCondition.uniform(spec.get("low", 0.0), spec.get("high", 1.0)).scaled(scale)
    if kind == "pareto":
        return TerminalCondition.pareto(spec["tail_index"], spec.get("scale_param", 1.0)).scaled(scale)
    raise InvalidArgument(f"unknown terminal kind {kind!r}")


def _load_callable(ref: str):
    module, _, name = ref.partition(":")
    try:
        return getattr(importlib.import_module(module), name)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import generator callable {ref!r}: {exc}") from exc


def build_generator(spec: dict) -> GeneratorSpec:
    kind = spec["kind"]
    if kind == "zero":
        return GeneratorSpec.zero()
    if kind == "linear":
        return GeneratorSpec.linear(spec["coef_y"], spec["coef_z"], spec["intercept"])
    if kind == "power":
        return GeneratorSpec.power(spec["gamma"], spec["delta"])
    return GeneratorSpec.custom(_load_callable(spec["callable"]))


def build_problem(cfg: ExperimentConfig):
    """Grid, problem and (for the insurance scenario) the insurance wrapper."""
    grid = make_grid(cfg["grid"]["T"], cfg["grid"]["N"])
    d = cfg["ensemble"]["d"]
    if cfg.scenario == "portfolio-insurance":
        pf = cfg["portfolio"]
        market = MarketModel.constant(grid, pf["rate"], pf["volatility"], pf["premium"],
                                      pf["guess_Y0"], pf["initial_price"])
        insurance = portfolio_insurance_problem(market, build_terminal(cfg["terminal"]),
                                                pf["guess_Y0"])
        return grid, insurance.problem, insurance
    gen_spec = cfg["generator"]
    generator = build_generator(gen_spec)
    kwargs = {}
    if gen_spec["kind"] == "custom":
        kwargs["lipschitz_K"] = gen_spec["K"]
    if gen_spec["kind"] in ("power", "custom"):
        kwargs["growth_gamma"] = gen_spec["gamma"]
        kwargs["growth_delta"] = gen_spec["delta"]
    problem = make_problem(grid, build_terminal(cfg["terminal"]), generator,
                           snap_measure(cfg["delay"]["atoms"], grid), k=1, d=d, **kwargs)
    return grid, problem, None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return f"{v:.17g}"


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_solution_csv(path: Path, sol, grid, max_paths: Optional[int] = None) -> None:
    N, M, k = sol.Y.shape
    N -= 1
    d = sol.Z.shape[-1]
    m = M if max_paths is None else min(M, max_paths)
    header = ["path_id", "time_index", "time"] + [f"Y_{a + 1}" for a in range(k)] \
        + [f"Z_{a + 1}_{b + 1}" for a in range(k) for b in range(d)]
    rows = []
    for p in range(m):
        for i in range(N + 1):
            z = sol.Z[i, p].ravel() if i < N else [None] * (k * d)
            rows.append([p, i, grid.times[i], *sol.Y[i, p], *z])
    _write_csv(path, header, rows)


def write_iterations_csv(path: Path, sol) -> None:
    _write_csv(path, ["iteration", "dY_sup_norm", "dZ_h_norm", "contraction_ratio", "dY_class_d"],
               [[h.iteration, h.dY_sup_norm, h.dZ_h_norm, h.contraction_ratio, h.dY_class_d]
                for h in sol.history])


def write_ladder_csv(path: Path, report) -> None:
    header = ["level", "gap_to_next_sup", "gap_to_next_sup_se", "gap_to_next_L1",
              "gap_to_next_L1_se"]
    for b in report.betas:
        header += [f"e3_lhs_{b:g}", f"e3_lhs_se_{b:g}", f"e3_rhs_{b:g}", f"e3_rhs_se_{b:g}",
                   f"e3_rhs_literal_{b:g}"]
    header.append("converged")
    rows = [[row.get(h, math.nan) for h in header] for row in report.rows]
    _write_csv(path, header, rows)


def write_estimates_csv(path: Path, results) -> None:
    header = ["check", "p", "lhs", "rhs", "margin", "stderr", "fitted_Cp", "multiplier", "skipped"]
    rows = [[name, r.p, r.lhs, r.rhs, r.margin, r.stderr, r.fitted_cp, r.multiplier,
             r.skipped or ""] for name, r in results]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Execute a config and write its artifacts; returns the metadata dict."""
    out = Path(out_dir if out_dir is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    grid, problem, insurance = build_problem(cfg)
    ens_cfg = cfg["ensemble"]
    ensemble = simulate(grid, ens_cfg["M"], ens_cfg["d"], ens_cfg["seed"], ens_cfg["chunk_size"])
    b = cfg["basis"]
    basis = RegressionBasis(b["kind"], b["degree"], b["ridge"], b["history"])
    pc = cfg["picard"]

    ladder = None
    if cfg["truncation"]["levels"]:
        ladder = truncation_ladder(problem, cfg["truncation"]["levels"], ensemble, basis,
                                   pc["max_iters"], pc["tol"], tuple(cfg["truncation"]["betas"]))
        sol = ladder.solutions[-1]
    else:
        sol = picard_solve(problem, ensemble, basis, pc["max_iters"], pc["tol"], pc["beta"])

    write_solution_csv(out / "solution.csv", sol, grid, cfg["output"]["max_paths"])
    write_iterations_csv(out / "iterations.csv", sol)
    if ladder is not None:
        write_ladder_csv(out / "ladder.csv", ladder)

    results = []
    z = cfg["estimates"]["z"]
    for p in cfg["estimates"]["p"]:
        if math.isfinite(problem.lipschitz_K):
            settings = PNormSettings(p, problem.lipschitz_K, grid.horizon)
            results.append(("apriori_Z", check_apriori_Z(sol, problem, settings, ensemble, z=z)))
        else:
            results.append(("apriori_Z", AprioriResult.skipped_result(
                p, "generator has no finite Lipschitz constant, d_p undefined")))
            # the pair bound does not involve K
            settings = PNormSettings(p, 0.0, grid.horizon)
        results.append(("apriori_pair", check_apriori_pair(sol, problem, settings, ensemble, z=z)))
    write_estimates_csv(out / "estimates.csv", results)

    F = generator_values(problem, sol.Y, sol.Z)
    # pathwise estimator of Y(0); its spread gives the Monte Carlo error
    realized = sol.xi[:, 0] + F[:, :, 0].sum(axis=0) * grid.dt
    y0_mc, y0_se = mean_stderr(realized)
    metrics: Dict[str, Any] = {
        "y0": float(sol.Y[0, 0, 0]),
        "y0_stderr": y0_se,
        "y0_pathwise_mean": y0_mc,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "advisory": sol.advisory,
        "terminal_pinned": bool(np.array_equal(sol.Y[-1], sol.xi)),
    }
    if problem.generator.kind == "zero" and problem.terminal.kind == "brownian" \
            and problem.truncation is None and problem.terminal.scale == 1.0:
        metrics["rmse_vs_W"] = float(np.sqrt(np.mean((sol.Y[..., 0] - ensemble.W[..., 0]) ** 2)))
        metrics["mae_Z_vs_1"] = float(np.mean(np.abs(sol.Z[..., 0, 0] - 1.0)))
    if insurance is not None:
        excess, excess_se = insurance.excess_estimate(ensemble)
        metrics["portfolio"] = {
            "feasible": insurance.feasible,
            "guess_Y0": insurance.guess_Y0,
            "excess_mean": excess,
            "excess_stderr": excess_se,
            "solved_Y0": float(sol.Y[0, 0, 0]),
            "fixed_point_gap": abs(float(sol.Y[0, 0, 0]) - insurance.guess_Y0),
            "initial_wealth": float(insurance.market.wealth(sol.Y)[0, 0, 0]),
        }
    meta = {
        "config": cfg.echo(),
        "seed": ens_cfg["seed"],
        "chunk_size": ens_cfg["chunk_size"],
        "versions": {"delaybsde": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "metrics": metrics,
        "notes": ["estimate checks use the square-integral of |f(t,0,0)| although the data "
                  "hypothesis only requires time-integrability"],
    }
    with open(out / "run.meta", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


ARTIFACTS = ("solution.csv", "iterations.csv", "ladder.csv", "estimates.csv")


def _read_numeric_csv(path: Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]

    def num(s):
        try:
            return float(s) if s != "" else math.nan
        except ValueError:
            return math.nan
    return np.array([[num(c) for c in r] for r in rows], dtype=float).reshape(len(rows), -1)


def compare(dir_a, dir_b) -> dict:
    """Per-artifact differences between two run directories."""
    a, b = Path(dir_a), Path(dir_b)
    for d in (a, b):
        if not (d / "run.meta").exists() or not (d / "solution.csv").exists():
            raise ConfigError(f"{d} is not a complete run directory")
    meta_a = json.loads((a / "run.meta").read_text())
    meta_b = json.loads((b / "run.meta").read_text())
    same_stream = (meta_a["seed"], meta_a["chunk_size"]) == (meta_b["seed"], meta_b["chunk_size"])
    files = {}
    for name in ARTIFACTS:
        pa, pb = a / name, b / name
        if not pa.exists() and not pb.exists():
            continue
        if pa.exists() != pb.exists():
            files[name] = {"present": [pa.exists(), pb.exists()]}
            continue
        bit_equal = pa.read_bytes() == pb.read_bytes()
        xa, xb = _read_numeric_csv(pa), _read_numeric_csv(pb)
        entry = {"bit_equal": bit_equal, "shape_a": list(xa.shape), "shape_b": list(xb.shape),
                 "shape_match": xa.shape == xb.shape}
        if xa.shape == xb.shape:
            both = ~(np.isnan(xa) & np.isnan(xb))
            diff = np.abs(xa - xb)[both]
            entry["max_abs_diff"] = float(np.nanmax(diff)) if diff.size else 0.0
        entry["unexpected_difference"] = same_stream and not bit_equal \
            and meta_a["config"] == meta_b["config"]
        files[name] = entry
    ma, mb = meta_a["metrics"], meta_b["metrics"]
    y0_diff = abs(ma["y0"] - mb["y0"])
    se = math.hypot(ma["y0_stderr"], mb["y0_stderr"])
    return {
        "files": files,
        "bit_equal": all(f.get("bit_equal", False) for f in files.values()),
        "same_seed_and_chunk": same_stream,
        "y0_diff": y0_diff,
        "y0_combined_stderr": se,
        "y0_within_5se": y0_diff <= 5 * se,
    }
