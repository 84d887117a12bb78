"""Run configuration: strict JSON schema with defaults, preset binding, and a
canonical content hash for reproducibility manifests."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .kernel import Grid1D
from .cell import CellGrid
from .integrator import NoiseModel, SimConfig
from . import presets


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


DEFAULTS: dict = {
    "schema_version": 1,
    "alpha": 1.5,
    "grid": {"n": 256},
    "cell": {"m": 128, "m_tau": 16, "n_images": 8},
    "kernel_mode": "periodized",
    "theta_preset": {"name": "one", "params": {}},
    "v_preset": "cos2pi_y_times_cos2pi_tau",
    "g": {"kind": "bounded", "sigma": 0.5},
    "f_preset": "zero",
    "h_preset": "parabola",
    "T": 1.0,
    "dt_rule": {"kind": "eps_over", "factor": 8.0, "default_dt": 1.0 / 128.0},
    "theta_scheme": 0.5,
    "seed": 0,
}

# Keys whose dict values are replaced wholesale rather than merged: preset
# parameters are preset-specific, and dt_rule is a variant record whose keys
# depend on its kind (validated separately).
_FREE_FORM = {("theta_preset", "params"), ("dt_rule",)}


def _merge_strict(base: dict, user: dict, path: tuple = ()) -> dict:
    out = copy.deepcopy(base)
    for key, val in user.items():
        if key not in base:
            where = ".".join(path + (str(key),))
            raise ConfigError(f"unknown configuration key {where!r}")
        here = path + (key,)
        if isinstance(base[key], dict) and here not in _FREE_FORM:
            if not isinstance(val, dict):
                raise ConfigError(f"key {'.'.join(here)!r} must be an object")
            out[key] = _merge_strict(base[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    """Fully resolved configuration with bound presets and a stable hash."""

    data: dict

    @classmethod
    def from_dict(cls, user: dict) -> "RunConfig":
        if not isinstance(user, dict):
            raise ConfigError("configuration must be a JSON object")
        rc = cls(data=_merge_strict(DEFAULTS, user))
        rc.validate()
        return rc

    # --- typed accessors -------------------------------------------------
    @property
    def alpha(self) -> float:
        return float(self.data["alpha"])

    @property
    def n(self) -> int:
        return int(self.data["grid"]["n"])

    @property
    def kernel_mode(self) -> str:
        return self.data["kernel_mode"]

    @property
    def T(self) -> float:
        return float(self.data["T"])

    @property
    def theta_scheme(self) -> float:
        return float(self.data["theta_scheme"])

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def grid(self) -> Grid1D:
        return Grid1D.make(self.n)

    def cell_grid(self) -> CellGrid:
        c = self.data["cell"]
        return CellGrid(m=int(c["m"]), m_tau=int(c["m_tau"]), n_images=int(c["n_images"]))

    def theta_spec(self) -> presets.ThetaSpec:
        tp = self.data["theta_preset"]
        return presets.get_theta(tp["name"], **tp.get("params", {}))

    def v_spec(self) -> presets.VSpec:
        return presets.get_v(self.data["v_preset"])

    def f_spec(self) -> presets.FSpec:
        return presets.get_f(self.data["f_preset"])

    def h_spec(self) -> presets.HSpec:
        return presets.get_h(self.data["h_preset"])

    def noise(self) -> NoiseModel:
        g = self.data["g"]
        return NoiseModel(kind=g["kind"], sigma=float(g["sigma"]))

    def sim_config(self) -> SimConfig:
        return SimConfig(grid=self.grid(), alpha=self.alpha, T=self.T,
                         theta_scheme=self.theta_scheme, theta=self.theta_spec(),
                         v_spec=self.v_spec(), f_spec=self.f_spec(),
                         h_spec=self.h_spec(), noise=self.noise(),
                         kernel_mode=self.kernel_mode)

    # --- validation and hashing ------------------------------------------
    def validate(self) -> None:
        d = self.data
        if d["schema_version"] != 1:
            raise ConfigError(f"unsupported schema_version {d['schema_version']!r}")
        if not 1.0 < float(d["alpha"]) < 2.0:
            raise ConfigError(f"alpha must lie strictly in (1, 2), got {d['alpha']}")
        if int(d["grid"]["n"]) < 4:
            raise ConfigError("grid.n must be at least 4")
        cell = d["cell"]
        if int(cell["m"]) < 8 or int(cell["m_tau"]) < 1 or int(cell["n_images"]) < 1:
            raise ConfigError("cell grid requires m >= 8, m_tau >= 1, n_images >= 1")
        if d["kernel_mode"] not in ("periodized", "cell_truncated"):
            raise ConfigError(f"unknown kernel_mode {d['kernel_mode']!r}")
        if not 0.0 <= float(d["theta_scheme"]) <= 1.0:
            raise ConfigError("theta_scheme must lie in [0, 1]")
        if float(d["T"]) <= 0.0:
            raise ConfigError("horizon T must be positive")
        if not isinstance(d["seed"], int):
            raise ConfigError("seed must be an integer")

        try:
            theta = self.theta_spec()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"theta preset: {exc}") from exc
        if theta.lower <= 0.0:
            raise ConfigError("theta preset must have a positive lower bound")

        for getter, label in ((self.f_spec, "forcing"), (self.h_spec, "initial datum")):
            try:
                getter()
            except KeyError as exc:
                raise ConfigError(f"{label} preset: {exc}") from exc

        try:
            v = self.v_spec()
        except KeyError as exc:
            raise ConfigError(f"potential preset: {exc}") from exc
        if not v.is_zero:
            worst = v.max_y_mean()
            if worst > 1e-12:
                raise ConfigError(
                    f"potential preset {v.name!r} has nonzero spatial mean "
                    f"(max |mean over y| = {worst:.2e}); the oscillating potential "
                    "must average to zero over the fast spatial variable")

        g = d["g"]
        if g["kind"] not in ("zero", "linear", "bounded"):
            raise ConfigError(f"unknown noise kind {g['kind']!r}")
        if float(g["sigma"]) < 0.0:
            raise ConfigError("noise sigma must be nonnegative")

        rule = d["dt_rule"]
        if not isinstance(rule, dict) or "kind" not in rule:
            raise ConfigError("dt_rule must be an object with a 'kind'")
        if rule["kind"] == "fixed":
            allowed = {"kind", "dt"}
            if float(rule.get("dt", 0.0)) <= 0.0:
                raise ConfigError("fixed dt_rule requires positive 'dt'")
        elif rule["kind"] == "eps_over":
            allowed = {"kind", "factor", "default_dt"}
            if float(rule.get("factor", 0.0)) <= 0.0:
                raise ConfigError("eps_over dt_rule requires positive 'factor'")
            if float(rule.get("default_dt", 0.0)) <= 0.0:
                raise ConfigError("eps_over dt_rule requires positive 'default_dt'")
        else:
            raise ConfigError(f"unknown dt_rule kind {rule['kind']!r}")
        stray = set(rule) - allowed
        if stray:
            raise ConfigError(f"unknown dt_rule keys {sorted(stray)}")

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def resolve_dt(self, eps: float | None = None) -> tuple[float, int]:
        """Time step and step count: dt divides T exactly and respects the rule
        bound (dt <= eps / factor resolves the tau = t / eps oscillation)."""
        rule = self.data["dt_rule"]
        if rule["kind"] == "fixed":
            raw = float(rule["dt"])
        else:
            raw = float(rule["default_dt"]) if eps is None else eps / float(rule["factor"])
        n_steps = max(1, math.ceil(self.T / raw - 1e-12))
        return self.T / n_steps, n_steps


def load_config(path: str | Path | None) -> RunConfig:
    """Load and validate a JSON config file; None gives the defaults."""
    if path is None:
        return RunConfig.from_dict({})
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(user)
