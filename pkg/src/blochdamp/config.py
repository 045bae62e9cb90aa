"""Experiment configuration: one YAML file per experiment.

Precedence, lowest first: built-in defaults, the config file (or preset),
then ``--set section.key=value`` overrides on the command line.  The thread
count is the only setting taken from the environment
(``BLOCHDAMP_THREADS``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import copy
import hashlib
import json
import math

import yaml

from . import __version__
from .continuum import ContinuumParams, ground_band_width
from .stochastic import SdeConfig
from .tight_binding import HBAR
from .tight_binding import TBParams

__all__ = ["MODELS", "ConfigError", "ExperimentConfig", "load_config", "apply_overrides"]

MODELS = ("tight-binding", "lindblad", "continuum", "classical", "bands")

_PI = math.pi


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    """Declarative description of one run.

    Parameters
    ----------
    name : str
        Label used for output file names.
    model : str
        One of :data:`MODELS`.
    params : dict
        Physical parameters: ``TBParams`` fields for the lattice models,
        ``ContinuumParams`` fields for the continuum, ``{"U": [...],
        "n_bands", "n_kappa", "n_planewaves"}`` for band spectra.
    run : dict
        Time stepping: ``SdeConfig`` fields (``dt``, ``t_total``, ``n_traj``,
        ``seed`` ...); ``edge_sites`` for the lattice edge monitor and
        ``record_every`` for deterministic runs.
    initial : dict
        Initial state: ``width2`` (lattice Gaussian ``exp(-l^2/width2)``),
        ``sigma`` (continuum envelope) or ``p_std`` (classical).
    analysis : dict
        Fit windows and switches, e.g. ``{"decay": true, "diffusion":
        [60, 160], "depletion": true}``.
    output : dict
        ``dir`` plus optional dump requests (``rho_times``, ``snapshot_every``).
    """

    name: str
    model: str
    params: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {MODELS}")

    # -- serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        if "name" not in data or "model" not in data:
            raise ConfigError("config needs 'name' and 'model'")
        return cls(**copy.deepcopy(data))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        data = yaml.safe_load(text)
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.run.get("seed", 0))

    def metadata(self) -> dict:
        return {"config_sha256": self.sha256(), "seed": self.seed, "version": __version__}

    # -- validation -----------------------------------------------------------

    def tb_params(self) -> TBParams:
        p = dict(self.params)
        if "extra_hoppings" in p:
            p["extra_hoppings"] = tuple(p["extra_hoppings"])
        return TBParams(**p)

    def continuum_params(self) -> ContinuumParams:
        p = dict(self.params)
        for key in ("z_min", "z_max", "mask_width", "window"):
            if isinstance(p.get(key), str):
                p[key] = _parse_length(p[key])
        return ContinuumParams(**p)

    def sde_config(self) -> SdeConfig:
        keys = {f.name for f in fields(SdeConfig)}
        return SdeConfig(**{k: v for k, v in self.run.items() if k in keys})

    def validate(self) -> None:
        """Build every parameter object so preconditions fail before compute."""
        try:
            rate = None
            if self.model in ("tight-binding", "lindblad", "classical"):
                p = self.tb_params()
                rate = max(abs(p.bloch_frequency), p.gamma, p.bandwidth / HBAR)
            elif self.model == "continuum":
                p = self.continuum_params()
                rate = max(abs(p.bloch_frequency), p.gamma, ground_band_width(p.U))
            if self.model in ("tight-binding", "continuum", "lindblad", "classical"):
                cfg = self.sde_config()
                cfg.n_steps
                if self.model != "classical":
                    cfg.check_guard(rate)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.name}: {exc}") from exc


def _parse_length(text: str) -> float:
    """Accept ``"-64pi"``, ``"8*pi"`` or plain numbers for grid lengths."""
    t = text.replace(" ", "").lower()
    for token in ("*pi", "pi"):
        if t.endswith(token):
            head = t[: -len(token)]
            if head in ("", "+"):
                return _PI
            if head == "-":
                return -_PI
            return float(head) * _PI
    return float(t)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            return ExperimentConfig.from_yaml(fh.read())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def apply_overrides(config: ExperimentConfig, overrides) -> ExperimentConfig:
    """Return a copy with ``section.key=value`` overrides applied.

    Values are parsed as YAML scalars, so ``run.n_traj=500`` sets an int and
    ``params.force=-0.1`` a float.
    """
    data = config.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        path = key.strip().split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        node = data
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
    return ExperimentConfig.from_dict(data)
