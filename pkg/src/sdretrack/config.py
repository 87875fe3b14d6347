"""YAML configuration loading.

A configuration file may contain the sections ``scenario``, ``filter``,
``montecarlo``, ``analysis`` and ``tracker``; every key is optional and
falls back to the library default. See ``configs/`` for annotated examples.
"""

from dataclasses import dataclass, field, fields, replace

import yaml

from .camera import CameraRig
from .pipeline import TrackerConfig
from .simlab import FilterConfig, Profile, Scenario

PROFILE_KEYS = ("cam_linear", "cam_angular", "obj_velocity")


@dataclass(frozen=True)
class MonteCarloConfig:
    runs: int = 100
    vc_range: tuple = (0.5, 1.5)
    workers: int = 1


@dataclass(frozen=True)
class AnalysisConfig:
    """Certificate settings.

    ``v_bound``/``w_bound`` of ``None`` are derived from the scenario: three
    standard deviations of the noise plus the largest one-step model residual
    along the true trajectory.
    """

    lambda0: float = 0.01
    window: int = 50
    samples: int = 10000
    seed: int = 0
    v_bound: float = None
    w_bound: float = None
    box: dict = field(default_factory=lambda: {
        "state": [[-1.0, 1.0], [-1.0, 1.0], [0.01, 1.0]],
        "input": [[-40.0, 40.0]] * 3 + [[-0.5, 0.5]] * 3,
    })


@dataclass
class Config:
    scenario: Scenario = field(default_factory=Scenario)
    filter: FilterConfig = field(default_factory=FilterConfig)
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)


def _check_keys(section, data, cls):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys in '{section}': {sorted(unknown)}")


def _tuples(data):
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}


def scenario_from_dict(data):
    data = dict(data or {})
    _check_keys("scenario", data, Scenario)
    for key in PROFILE_KEYS:
        if key in data:
            data[key] = Profile.from_dict(data[key])
    if data.get("quantize_rig") is not None:
        data["quantize_rig"] = CameraRig.from_dict(data["quantize_rig"])
    return Scenario(**_tuples(data))


def config_from_dict(data):
    data = dict(data or {})
    unknown = set(data) - {"scenario", "filter", "montecarlo", "analysis", "tracker"}
    if unknown:
        raise ValueError(f"unknown configuration sections: {sorted(unknown)}")
    cfg = Config()
    if "scenario" in data:
        cfg.scenario = scenario_from_dict(data["scenario"])
    for name, cls in (("filter", FilterConfig), ("montecarlo", MonteCarloConfig),
                      ("analysis", AnalysisConfig), ("tracker", TrackerConfig)):
        section = data.get(name)
        if section:
            _check_keys(name, section, cls)
            values = section if name == "analysis" else _tuples(section)
            setattr(cfg, name, cls(**values))
    return cfg


def load_config(path=None):
    """Load a configuration file; ``None`` returns the defaults."""
    if path is None:
        return Config()
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data)


def with_overrides(cfg, seed=None, vc_scale=None):
    sc = cfg.scenario
    if seed is not None:
        sc = replace(sc, seed=int(seed))
    if vc_scale is not None:
        sc = replace(sc, vc_scale=tuple(vc_scale))
    return replace(cfg, scenario=sc)
