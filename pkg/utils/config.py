import copy
import json
import math
import os
from dataclasses import dataclass, field, replace

from dotenv import load_dotenv

from platoon.core import GlobalParams, NewellParams, VehicleParams
from platoon.errors import ConfigError, OutOfDomain
from platoon.feasibility import platoon_delta1_floor
from platoon.harness import ExperimentSettings, HorizonSettings
from platoon.mpc import MpcWeights, TerminalSet

# Load environment variables from .env file
load_dotenv()

VEHICLE_DEFAULTS = {"a_min": -5.0, "a_max": 3.0, "eps": 0.01, "eta": 0.0, "length": 5.0}

DEFAULT_CONFIG = {
    "global": {
        "tau": 0.2,
        "v_min": 10.0,
        "v_max": 20.0,
        "delta1": "auto",
        "delta2": 0.5,
        "delta_margin": 2.0,
    },
    "vehicles": [dict(VEHICLE_DEFAULTS) for _ in range(3)],
    "weights": {"q_z": 1.0, "q_zp": 1.0, "omega1": 1.0},
    "terminal": {"enabled": True, "zeta_x": 0.5, "zeta_v": 0.2},
    "newell": {"shift_steps": 5, "shift_dist": 7.0},
    "sigma": None,
    "horizon": {"prediction": None, "lambda": 0.0, "max_horizon": 40},
    "experiment": {
        "seed": 0,
        "samples": 100,
        "rollout_steps": 50,
        "n_vehicles": 3,
        "v0_range": [10.0, 15.0],
        "gap_surplus_factor": 2.0,
        "heterogeneity": 0.0,
        "lambdas": [0.0, 0.5, 1.0],
        "tol_spacing": 1e-3,
        "tol_speed": 1e-3,
        "grid_points": 20,
        "workers": 1,
        "nominal_lemmas": True,
        "hdv_mode": "constant",
        "hdv_wave_amplitude": 0.0,
        "hdv_wave_period": 10.0,
    },
}

# Entries whose value is a list or matrix rather than a nested section.
_LEAF_KEYS = {"weights.q_z", "weights.q_zp", "experiment.v0_range", "experiment.lambdas"}


class Config:
    CONFIG_PATH = os.getenv("PLATOON_CONFIG")
    OUTPUT_DIR = os.getenv("PLATOON_OUTPUT_DIR", "output")

    @staticmethod
    def get_config():
        output_dir = Config.OUTPUT_DIR
        return {
            "retry_count": 4,
            "output_dir": output_dir,
            "trace_dir": os.path.join(output_dir, "traces"),
            "report_dir": os.path.join(output_dir, "reports"),
            "plot_dir": os.path.join(output_dir, "plots"),
            "config_path": Config.CONFIG_PATH,
        }

    @staticmethod
    def get_run_config(path=None, overrides=None):
        """Load the run configuration from ``path`` or ``PLATOON_CONFIG``."""
        return load_config(path or Config.CONFIG_PATH, overrides)


@dataclass(frozen=True)
class PlatoonConfig:
    """Typed run configuration.

    Attributes:
        gp (GlobalParams): Global constants; delta1 resolved for the
            configured vehicles when ``delta1_auto`` is set.
        vehicles (tuple[VehicleParams, ...]): Per-vehicle templates, cycled
            when a platoon is longer than the list.
        resolved (dict): The merged document that produced this config.
    """

    gp: GlobalParams
    vehicles: tuple
    delta1_auto: bool
    q_z: object
    q_zp: object
    omega1: float
    terminal: TerminalSet
    terminal_enabled: bool
    newell: NewellParams
    sigma: float
    horizon: HorizonSettings
    experiment: ExperimentSettings
    resolved: dict = field(default_factory=dict, repr=False)

    def vehicle_params(self, n):
        return tuple(self.vehicles[i % len(self.vehicles)] for i in range(n))

    def gp_for(self, vps):
        """Global params with delta1 re-resolved for ``vps`` when it is automatic."""
        if not self.delta1_auto:
            return self.gp
        return replace(self.gp, delta1=platoon_delta1_floor(vps, self.gp, uncertainty_aware=True))

    def weights(self, n):
        try:
            return MpcWeights.uniform(n, self.q_z, self.q_zp, self.omega1)
        except ValueError as exc:
            raise ConfigError("weights", str(exc)) from exc

    def to_dict(self):
        """Resolved document with delta1 and sigma filled in, for report echoes."""
        doc = copy.deepcopy(self.resolved)
        doc["global"]["delta1_resolved"] = self.gp.delta1
        doc["sigma_resolved"] = self.sigma
        return doc

    def with_overrides(self, overrides):
        return parse_config(_apply_overrides(copy.deepcopy(self.resolved), overrides))


def _check_keys(doc, template, path):
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected an object, got {type(doc).__name__}")
    for key, value in doc.items():
        dotted = f"{path}.{key}" if path else key
        if key not in template:
            raise ConfigError(dotted, "unknown key")
        if dotted in _LEAF_KEYS:
            continue
        if key == "vehicles" and not path:
            if not isinstance(value, list) or not value:
                raise ConfigError(dotted, "expected a non-empty list of vehicle objects")
            for i, entry in enumerate(value):
                _check_keys(entry, VEHICLE_DEFAULTS, f"{dotted}[{i}]")
        elif isinstance(template[key], dict):
            _check_keys(value, template[key], dotted)


def _merge(base, doc):
    merged = copy.deepcopy(base)
    for key, value in doc.items():
        if key == "vehicles":
            merged[key] = [{**VEHICLE_DEFAULTS, **entry} for entry in value]
        elif isinstance(merged.get(key), dict) and isinstance(value, dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _apply_overrides(doc, overrides):
    """Set dotted-path values, e.g. ``{"global.delta2": 0.3}``."""
    for dotted, value in (overrides or {}).items():
        *parents, leaf = dotted.split(".")
        node = doc
        for part in parents:
            if not isinstance(node.get(part), dict):
                raise ConfigError(dotted, "unknown key")
            node = node[part]
        if leaf not in node:
            raise ConfigError(dotted, "unknown key")
        node[leaf] = value
    return doc


def _number(section, key, path, allow_none=False):
    value = section[key]
    dotted = f"{path}.{key}" if path else key
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(dotted, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(dotted, f"expected a finite number, got {value!r}")
    return float(value)


def _integer(section, key, path, allow_none=False):
    value = section[key]
    dotted = f"{path}.{key}"
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(dotted, f"expected an integer, got {value!r}")
    return value


def _boolean(section, key, path):
    value = section[key]
    if not isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", f"expected true or false, got {value!r}")
    return value


def _numbers(section, key, path):
    value = section[key]
    dotted = f"{path}.{key}"
    if not isinstance(value, list):
        raise ConfigError(dotted, f"expected a list of numbers, got {value!r}")
    items = dict(enumerate(value))
    return tuple(_number(items, i, dotted) for i in items)


def _weight(section, key):
    value = section[key]
    if isinstance(value, list):
        if not all(isinstance(row, list) for row in value):
            raise ConfigError(f"weights.{key}", "expected a scalar or a nested N x N list")
        rows = dict(enumerate(value))
        return [list(_numbers(rows, i, f"weights.{key}")) for i in rows]
    return _number(section, key, "weights")


def _build(path, factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from exc


def parse_config(doc):
    """Turn a merged document into a ``PlatoonConfig``.

    Raises:
        ConfigError: A value has the wrong type or breaks an invariant; the
            error names the dotted path of the entry.
    """
    section = doc["global"]
    delta1 = section["delta1"]
    delta1_auto = delta1 == "auto"
    if not delta1_auto:
        delta1 = _number(section, "delta1", "global")
    gp = _build(
        "global",
        GlobalParams,
        tau=_number(section, "tau", "global"),
        v_min=_number(section, "v_min", "global"),
        v_max=_number(section, "v_max", "global"),
        delta1=1.0 if delta1_auto else delta1,
        delta2=_number(section, "delta2", "global"),
        delta_margin=_number(section, "delta_margin", "global"),
    )
    vehicles = tuple(
        _build(
            f"vehicles[{i}]",
            VehicleParams,
            **{key: _number(entry, key, f"vehicles[{i}]") for key in VEHICLE_DEFAULTS},
        )
        for i, entry in enumerate(doc["vehicles"])
    )
    if delta1_auto:
        try:
            gp = replace(gp, delta1=platoon_delta1_floor(vehicles, gp, uncertainty_aware=True))
        except OutOfDomain as exc:
            raise ConfigError("global.delta1", f"cannot resolve auto: {exc}") from exc

    weights = doc["weights"]
    q_z, q_zp = _weight(weights, "q_z"), _weight(weights, "q_zp")
    omega1 = _number(weights, "omega1", "weights")
    for key, value in (("q_z", q_z), ("q_zp", q_zp)):
        if isinstance(value, list):
            _build(f"weights.{key}", MpcWeights.uniform, n=len(value), q_z=value, q_zp=value, omega1=omega1)

    terminal = doc["terminal"]
    newell = doc["newell"]
    sigma = _number(doc, "sigma", "", allow_none=True)
    if sigma is None:
        sigma = gp.delta_margin
    horizon = doc["horizon"]
    exp = doc["experiment"]
    return PlatoonConfig(
        gp=gp,
        vehicles=vehicles,
        delta1_auto=delta1_auto,
        q_z=q_z,
        q_zp=q_zp,
        omega1=omega1,
        terminal=_build(
            "terminal",
            TerminalSet,
            zeta_x=_number(terminal, "zeta_x", "terminal"),
            zeta_v=_number(terminal, "zeta_v", "terminal"),
        ),
        terminal_enabled=_boolean(terminal, "enabled", "terminal"),
        newell=_build(
            "newell",
            NewellParams,
            shift_steps=_integer(newell, "shift_steps", "newell"),
            shift_dist=_number(newell, "shift_dist", "newell"),
        ),
        sigma=sigma,
        horizon=_build(
            "horizon",
            HorizonSettings,
            prediction=_integer(horizon, "prediction", "horizon", allow_none=True),
            lam=_number(horizon, "lambda", "horizon"),
            max_horizon=_integer(horizon, "max_horizon", "horizon"),
        ),
        experiment=_build(
            "experiment",
            ExperimentSettings,
            seed=_integer(exp, "seed", "experiment"),
            samples=_integer(exp, "samples", "experiment"),
            rollout_steps=_integer(exp, "rollout_steps", "experiment"),
            n_vehicles=_integer(exp, "n_vehicles", "experiment"),
            v0_range=_numbers(exp, "v0_range", "experiment"),
            gap_surplus_factor=_number(exp, "gap_surplus_factor", "experiment"),
            heterogeneity=_number(exp, "heterogeneity", "experiment"),
            lambdas=_numbers(exp, "lambdas", "experiment"),
            tol_spacing=_number(exp, "tol_spacing", "experiment"),
            tol_speed=_number(exp, "tol_speed", "experiment"),
            grid_points=_integer(exp, "grid_points", "experiment"),
            workers=_integer(exp, "workers", "experiment"),
            nominal_lemmas=_boolean(exp, "nominal_lemmas", "experiment"),
            hdv_mode=exp["hdv_mode"],
            hdv_wave_amplitude=_number(exp, "hdv_wave_amplitude", "experiment"),
            hdv_wave_period=_number(exp, "hdv_wave_period", "experiment"),
        ),
        resolved=doc,
    )


def load_config(path=None, overrides=None):
    """Read a JSON run configuration and merge it over the defaults.

    Args:
        path (str|None): JSON file; None gives the shipped defaults.
        overrides (dict|None): Dotted-path values applied after the merge.

    Returns:
        PlatoonConfig: The validated configuration.

    Raises:
        ConfigError: Unreadable file, unknown key or invalid value.
    """
    doc = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    _check_keys(doc, DEFAULT_CONFIG, "")
    merged = _apply_overrides(_merge(DEFAULT_CONFIG, doc), overrides)
    return parse_config(merged)
