"""Scenario configuration: one TOML file per experiment.

Sections: [nonlinearity] (required), at most one of [perturbation] /
[noise], [run], and [output].  Parsed values are validated eagerly with
field-level diagnostics, defaults are filled in, and the effective
configuration can be re-emitted as deterministic TOML so a run is always
reproducible from its own artifacts.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import nonlinearity as nl
from . import ode_sim, sde_sim
from .errors import ConfigError

__all__ = ["Scenario", "RunParams", "OutputParams", "load_scenario", "scenario_from_dict", "emit_toml"]

_RUN_DEFAULTS = {
    "xi": 1.0,
    "horizon": 1.0e6,  # 1e4 when [noise] is present and horizon is omitted
    "rtol": 1.0e-9,
    "atol": 1.0e-12,
    "tol_lambda": 0.05,
    "drift_tol": 0.01,
    "c_bound": 10.0,
    "quad_abs_tol": 1.0e-10,
    "quad_rel_tol": 1.0e-10,
    "root_tol": 1.0e-9,
    "gamma_tol": 1.0e-9,
    "paths": 200,
    "sde_tol_lambda": 0.1,
    "sde_drift_tol": 0.1,
}


@dataclass(frozen=True)
class RunParams:
    xi: float
    horizon: float
    rtol: float
    atol: float
    tol_lambda: float
    drift_tol: float
    c_bound: float
    quad_abs_tol: float
    quad_rel_tol: float
    root_tol: float
    gamma_tol: float
    paths: int
    seed: int | None
    sde_tol_lambda: float
    sde_drift_tol: float


@dataclass(frozen=True)
class OutputParams:
    directory: str
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class Scenario:
    f: nl.NonlinearitySpec
    perturbation: ode_sim.PerturbationSpec | None
    noise: sde_sim.NoiseSpec | None
    run: RunParams
    output: OutputParams
    effective: dict = field(default_factory=dict)

    @property
    def mode(self) -> str:
        if self.noise is not None:
            return "sde"
        return "ode"


def _require(section: dict, key: str, where: str, kind=float):
    if key not in section:
        raise ConfigError(f"[{where}] missing required field '{key}'")
    try:
        return kind(section[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] field '{key}': {exc}") from exc


def _positive(value: float, name: str, where: str) -> float:
    if not value > 0.0:
        raise ConfigError(f"[{where}] field '{name}' must be strictly positive, got {value!r}")
    return float(value)


def _build_nonlinearity(section: dict, base_dir: Path) -> tuple[nl.NonlinearitySpec, dict]:
    kind = _require(section, "kind", "nonlinearity", str)
    eff = {"kind": kind}
    if kind == "power":
        beta = _require(section, "beta", "nonlinearity")
        if not beta > 1.0:
            raise ConfigError(f"[nonlinearity] beta must be > 1, got {beta}")
        eff["beta"] = beta
        return nl.power(beta), eff
    if kind == "linear":
        return nl.linear(), eff
    if kind == "flat_exponential":
        return nl.flat_exponential(), eff
    if kind == "custom":
        table = _require(section, "table", "nonlinearity", str)
        path = Path(table)
        if not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"[nonlinearity] table file not found: {path}")
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        if data.shape[1] != 2:
            raise ConfigError(f"[nonlinearity] table must have two columns (x, f(x)): {path}")
        eff["table"] = str(path)
        return nl.from_table(data[:, 0], data[:, 1], label=f"custom({path.name})"), eff
    raise ConfigError(f"[nonlinearity] unknown kind '{kind}'")


def _build_perturbation(section: dict, gamma_tol: float) -> tuple[ode_sim.PerturbationSpec, dict]:
    form = _require(section, "form", "perturbation", str)
    eff = {"form": form}
    if form == "power_tail":
        c = _require(section, "c", "perturbation")
        q = _require(section, "q", "perturbation")
        eff.update(c=c, q=q)
        return ode_sim.power_tail(c, q, gamma_tol=gamma_tol), eff
    if form == "oscillatory":
        c = _require(section, "c", "perturbation")
        q = _require(section, "q", "perturbation")
        omega = _require(section, "omega", "perturbation")
        eff.update(c=c, q=q, omega=omega)
        try:
            return ode_sim.oscillatory(c, q, omega, gamma_tol=gamma_tol), eff
        except Exception as exc:
            raise ConfigError(f"[perturbation] {exc}") from exc
    if form == "zero":
        return ode_sim.zero_perturbation(), eff
    raise ConfigError(f"[perturbation] unknown form '{form}' (custom forms are API-only)")


def _build_noise(section: dict) -> tuple[sde_sim.NoiseSpec, dict]:
    form = _require(section, "form", "noise", str)
    eff = {"form": form}
    if form == "power_tail":
        c = _require(section, "c", "noise")
        p = _require(section, "p", "noise")
        eff.update(c=c, p=p)
        return sde_sim.noise_power_tail(c, p), eff
    if form == "constant":
        c = _require(section, "c", "noise")
        eff.update(c=c)
        return sde_sim.noise_constant(c), eff
    raise ConfigError(f"[noise] unknown form '{form}' (custom forms are API-only)")


def scenario_from_dict(raw: dict, base_dir: Path | str = ".") -> Scenario:
    base_dir = Path(base_dir)
    known = {"nonlinearity", "perturbation", "noise", "run", "output"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown section [{key}]")
    if "nonlinearity" not in raw:
        raise ConfigError("missing required section [nonlinearity]")
    if "perturbation" in raw and "noise" in raw:
        raise ConfigError("sections [perturbation] and [noise] are mutually exclusive")

    run_raw = dict(raw.get("run", {}))
    eff_run = {}
    vals = {}
    horizon_given = "horizon" in run_raw
    for key, default in _RUN_DEFAULTS.items():
        v = run_raw.pop(key, default)
        try:
            v = type(default)(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[run] field '{key}': {exc}") from exc
        vals[key] = v
        eff_run[key] = v
    if "noise" in raw and not horizon_given:
        vals["horizon"] = 1.0e4
        eff_run["horizon"] = 1.0e4
    seed = run_raw.pop("seed", None)
    if seed is not None:
        try:
            seed = int(seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[run] field 'seed': {exc}") from exc
    if run_raw:
        raise ConfigError(f"[run] unknown fields: {sorted(run_raw)}")
    for name in ("rtol", "atol", "tol_lambda", "drift_tol", "c_bound", "quad_abs_tol",
                 "quad_rel_tol", "root_tol", "gamma_tol", "sde_tol_lambda", "sde_drift_tol"):
        _positive(vals[name], name, "run")
    if vals["horizon"] < 1.0:
        raise ConfigError(f"[run] horizon must be >= 1, got {vals['horizon']}")
    if vals["paths"] < 1:
        raise ConfigError(f"[run] paths must be >= 1, got {vals['paths']}")

    f, eff_f = _build_nonlinearity(raw["nonlinearity"], base_dir)
    perturbation = None
    noise = None
    eff: dict = {"nonlinearity": eff_f}
    if "perturbation" in raw:
        perturbation, eff_p = _build_perturbation(raw["perturbation"], vals["gamma_tol"])
        eff["perturbation"] = eff_p
    if "noise" in raw:
        noise, eff_n = _build_noise(raw["noise"])
        eff["noise"] = eff_n
        if seed is None:
            raise ConfigError("[run] field 'seed' is required whenever [noise] is present")

    out_raw = dict(raw.get("output", {}))
    directory = str(out_raw.pop("directory", os.environ.get("DECAYLAB_OUTPUT_DIR", "decaylab-out")))
    formats = out_raw.pop("formats", ["csv", "json"])
    if out_raw:
        raise ConfigError(f"[output] unknown fields: {sorted(out_raw)}")
    output = OutputParams(directory=directory, formats=tuple(formats))

    if seed is not None:
        eff_run["seed"] = seed
    eff["run"] = eff_run
    eff["output"] = {"directory": directory, "formats": list(formats)}
    run = RunParams(seed=seed, **vals)
    return Scenario(f=f, perturbation=perturbation, noise=noise, run=run, output=output, effective=eff)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"scenario file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return scenario_from_dict(raw, base_dir=path.parent)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def emit_toml(effective: dict) -> str:
    """Deterministic TOML for an effective configuration dict."""
    lines = []
    for section in ("nonlinearity", "perturbation", "noise", "run", "output"):
        if section not in effective:
            continue
        lines.append(f"[{section}]")
        for key in sorted(effective[section]):
            lines.append(f"{key} = {_toml_value(effective[section][key])}")
        lines.append("")
    return "\n".join(lines)
