"""Run configuration: YAML loading, defaults, hashing, and object builders.

A config file is a single YAML document with up to six blocks (``system``,
``constraints``, ``mpc``, ``risk``, ``experiment``, ``output``); omitted keys
fall back to the built-in default scenario, a two-state plant with one input,
identity disturbance map, isotropic noise of variance 0.08, horizon 11, input
bounds of 0.2, and the single state constraint ``x1 <= 2.8``. Matrices are
nested row-major lists.

The risk block accepts either ``p`` (required satisfaction probability) or
``p_tilde`` (allowed risk, converted to ``p = 1 - p_tilde`` on load), never
both.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .chance import TighteningLaw
from .controller import ControllerMode, MpcController
from .errors import ConfigurationError
from .model import ConstraintSet, LinearStochasticSystem

_BLOCKS = ("system", "constraints", "mpc", "risk", "experiment", "output")


def default_scenario() -> dict:
    """The built-in scenario as a plain nested dictionary."""
    return {
        "system": {
            "A": [[1.0, 0.0075], [-0.143, 0.996]],
            "B": [[4.798], [0.115]],
            "D": [[1.0, 0.0], [0.0, 1.0]],
            "sigma_w": [[0.08, 0.0], [0.0, 0.08]],
            "mean_w": [0.0, 0.0],
        },
        "constraints": {
            "u_min": [-0.2],
            "u_max": [0.2],
            "state_halfspaces": [{"g": [1.0, 0.0], "h": 2.8}],
        },
        "mpc": {
            "horizon": 11,
            "dt": 0.1,
            "Q": [[1.0, 0.0], [0.0, 10.0]],
            "R": [[1.0]],
            "steps": 100,
            "x0": [2.5, 4.8],
        },
        "risk": {
            "p": 0.8,
            "law": "gaussian",
        },
        "experiment": {
            "trials": 1000,
            "base_seed": 1,
        },
        "output": {
            "directory": "out",
            "prefix": "stochmpc",
        },
    }


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully resolved run configuration."""

    data: dict

    @property
    def horizon(self) -> int:
        return int(self.data["mpc"]["horizon"])

    @property
    def dt(self) -> float:
        return float(self.data["mpc"]["dt"])

    @property
    def steps(self) -> int:
        return int(self.data["mpc"]["steps"])

    @property
    def x0(self) -> np.ndarray:
        return np.asarray(self.data["mpc"]["x0"], dtype=float)

    @property
    def p(self) -> float:
        return float(self.data["risk"]["p"])

    @property
    def law(self) -> TighteningLaw:
        return TighteningLaw(self.data["risk"]["law"])

    @property
    def trials(self) -> int:
        return int(self.data["experiment"]["trials"])

    @property
    def base_seed(self) -> int:
        return int(self.data["experiment"]["base_seed"])

    @property
    def output_directory(self) -> str:
        return str(self.data["output"]["directory"])

    @property
    def output_prefix(self) -> str:
        return str(self.data["output"]["prefix"])

    def build_system(self) -> LinearStochasticSystem:
        block = self.data["system"]
        return LinearStochasticSystem(
            A=block["A"], B=block["B"], D=block["D"],
            sigma_w=block["sigma_w"], mean_w=block.get("mean_w"),
        )

    def build_constraints(self) -> ConstraintSet:
        block = self.data["constraints"]
        halfspaces = tuple(
            (np.asarray(hs["g"], dtype=float), float(hs["h"]))
            for hs in block["state_halfspaces"]
        )
        return ConstraintSet(
            u_min=block["u_min"], u_max=block["u_max"],
            state_halfspaces=halfspaces,
        )

    def build_controller(self, mode: ControllerMode | str) -> MpcController:
        """A fitted controller for this configuration."""
        mpc = self.data["mpc"]
        controller = MpcController(
            system=self.build_system(),
            constraints=self.build_constraints(),
            mode=ControllerMode(mode),
            horizon=self.horizon,
            state_weight=np.asarray(mpc["Q"], dtype=float),
            input_weight=np.asarray(mpc["R"], dtype=float),
            risk=self.p,
        )
        return controller.fit()

    def default_mode(self) -> ControllerMode:
        """The stochastic mode matching the configured tightening law."""
        if self.law is TighteningLaw.CANTELLI:
            return ControllerMode.SMPC_CANTELLI
        return ControllerMode.SMPC_GAUSSIAN


def load_config(path: str | None = None) -> RunConfig:
    """Read a YAML config, merge it over the defaults, and validate it."""
    merged = default_scenario()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = yaml.safe_load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config file is not valid YAML: {exc}") from None
        if user is None:
            user = {}
        if not isinstance(user, dict):
            raise ConfigurationError("config root must be a mapping of blocks")
        unknown = set(user) - set(_BLOCKS)
        if unknown:
            raise ConfigurationError(f"unknown config blocks: {sorted(unknown)}")
        for block, values in user.items():
            if not isinstance(values, dict):
                raise ConfigurationError(f"config block '{block}' must be a mapping")
            merged[block] = {**merged[block], **copy.deepcopy(values)}
    _resolve_risk(merged["risk"])
    config = RunConfig(data=merged)
    # Construction validates dimensions, PSD-ness, and bound ordering.
    config.build_system()
    config.build_constraints()
    TighteningLaw(merged["risk"]["law"])
    if config.horizon < 1:
        raise ConfigurationError(f"mpc.horizon must be >= 1, got {config.horizon}")
    if config.steps < 1:
        raise ConfigurationError(f"mpc.steps must be >= 1, got {config.steps}")
    if config.x0.size != config.build_system().n_states:
        raise ConfigurationError("mpc.x0 has the wrong dimension")
    np.asarray(merged["mpc"]["Q"], dtype=float)
    np.asarray(merged["mpc"]["R"], dtype=float)
    if not 0.0 <= config.p < 1.0:
        raise ConfigurationError(f"risk.p must lie in [0, 1), got {config.p}")
    if config.trials < 1:
        raise ConfigurationError(f"experiment.trials must be >= 1, got {config.trials}")
    return config


def _resolve_risk(risk: dict) -> None:
    if "p" in risk and "p_tilde" in risk:
        raise ConfigurationError("risk block must contain either p or p_tilde, not both")
    if "p_tilde" in risk:
        p_tilde = float(risk.pop("p_tilde"))
        if not 0.0 < p_tilde <= 1.0:
            raise ConfigurationError(f"risk.p_tilde must lie in (0, 1], got {p_tilde}")
        risk["p"] = 1.0 - p_tilde


def dump_config(config: RunConfig) -> str:
    """Serialize back to YAML; loading the dump reproduces the same values."""
    return yaml.safe_dump(config.data, sort_keys=True, default_flow_style=None)


def config_hash(config: RunConfig) -> str:
    """SHA-256 over the canonical JSON form of the resolved configuration."""
    canonical = json.dumps(config.data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
