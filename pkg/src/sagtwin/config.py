"""Run configuration: JSON file, ``SAGTWIN_*`` environment overrides, flags.

Precedence is defaults < config file < environment < command-line flags.
Recognised environment variables:

``SAGTWIN_SEED``, ``SAGTWIN_HORIZON`` (N), ``SAGTWIN_OUT_DIR``,
``SAGTWIN_MODEL_DIR``, ``SAGTWIN_RULEBASE``, ``SAGTWIN_SCENARIO`` and
``SAGTWIN_SUPERVISOR`` (``on`` or ``off``).
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .detection import DetectionConfig
from .errors import ArtifactError
from .pipeline import ValidityCriteria
from .regulatory import EstimationConfig
from .twin import HorizonConfig

FORMAT_VERSION = 1
ENV_PREFIX = "SAGTWIN_"


@dataclass(frozen=True)
class Paths:
    out_dir: str = "out"
    model_dir: str = "models"
    rulebase: str = None  # None: shipped default
    scenario: str = None


@dataclass(frozen=True)
class TrainingConfig:
    candidate_orders: tuple = (1, 2, 3, 4)
    order_threshold: float = 0.05
    candidate_lags: tuple = (4, 8, 12, 16)
    candidate_widths: tuple = (1, 2, 4, 8)
    structure_threshold: float = 0.05
    restarts: int = 5


@dataclass(frozen=True)
class SupervisorConfig:
    enabled: bool = False
    y1_grid: tuple = (1150.0, 1200.0, 1250.0, 1300.0)
    y2_grid: tuple = (11000.0,)
    y_box: tuple = ((500.0, 1400.0), (0.0, 14000.0))
    u_box: tuple = ((1000.0, 3200.0), (55.0, 85.0), (7.5, 11.5))


@dataclass(frozen=True)
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    validity: ValidityCriteria = field(default_factory=ValidityCriteria)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)
    y_lim: tuple = (1250.0, 11000.0)
    quality_bands: dict = field(default_factory=lambda: {"y1": 0.01, "y2": 0.05})
    quality_horizon: int = 5
    seed: int = 0

    def to_dict(self):
        d = asdict(self)
        d["format_version"] = FORMAT_VERSION
        return d


_SECTIONS = {
    "paths": Paths, "horizon": HorizonConfig, "detection": DetectionConfig,
    "estimation": EstimationConfig, "validity": ValidityCriteria,
    "training": TrainingConfig, "supervisor": SupervisorConfig,
}


def _tuples(v):
    return tuple(_tuples(x) for x in v) if isinstance(v, list) else v


def from_dict(d):
    d = dict(d)
    version = d.pop("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ArtifactError(f"config format_version {version} is not supported (expected {FORMAT_VERSION})")
    kwargs = {}
    for key, value in d.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            known = {f.name for f in fields(cls)}
            unknown = set(value) - known
            if unknown:
                raise ArtifactError(f"unknown keys in config section {key!r}: {sorted(unknown)}")
            kwargs[key] = cls(**{k: _tuples(v) for k, v in value.items()})
        elif key in {f.name for f in fields(RunConfig)}:
            kwargs[key] = _tuples(value) if key != "quality_bands" else dict(value)
        else:
            raise ArtifactError(f"unknown config key {key!r}")
    return RunConfig(**kwargs)


def load(path=None, environ=None):
    """Defaults, then the file at ``path`` (if any), then environment overrides."""
    cfg = RunConfig()
    if path is not None:
        try:
            with open(path) as fh:
                cfg = from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ArtifactError(f"cannot read config {path}: {exc}") from exc
    return apply_env(cfg, os.environ if environ is None else environ)


def _on_off(text):
    t = str(text).strip().lower()
    if t in ("on", "1", "true", "yes"):
        return True
    if t in ("off", "0", "false", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def apply_env(cfg, environ):
    get = lambda name: environ.get(ENV_PREFIX + name)  # noqa: E731
    if get("SEED") is not None:
        cfg = replace(cfg, seed=int(get("SEED")))
    if get("HORIZON") is not None:
        cfg = replace(cfg, horizon=replace(cfg.horizon, N=int(get("HORIZON"))))
    path_updates = {k: get(k.upper()) for k in ("out_dir", "model_dir", "rulebase", "scenario")
                    if get(k.upper()) is not None}
    if path_updates:
        cfg = replace(cfg, paths=replace(cfg.paths, **path_updates))
    if get("SUPERVISOR") is not None:
        cfg = replace(cfg, supervisor=replace(cfg.supervisor, enabled=_on_off(get("SUPERVISOR"))))
    return cfg


def save(cfg, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
