# Run configuration: defaults, Python-module config files, validation

import importlib.util
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from srb_gradient.ensemble import default_workers
from srb_gradient.errors import ConfigValidationError
from srb_gradient.maps import MAP_REGISTRY, check_map_name

logger = logging.getLogger(__name__)

SYSTEM_CONFIG = "/etc/srb-gradient/config.py"
# Config-module dicts whose keys are merged into the top level
SECTION_NAMES = ("RUN", "HISTOGRAM", "MC", "HYPERBOLICITY", "APPENDIX", "LOGGING")
# Settings that change how a run executes but never what it outputs
EXECUTION_FIELDS = ("workers", "log_dir", "progress_every", "output_path")


@dataclass
class RunConfig:
    """Every setting a subcommand can read, with its default"""
    command: str = ""
    map: str = "baker2d"
    params: Optional[List[float]] = None
    x0: Union[str, List[float]] = "random"
    m: Union[str, int] = "auto"
    n_steps: int = 100_000
    burn_in: int = 200
    seed: int = 0
    seed2: int = 1
    bins: Optional[List[int]] = None
    output_path: str = "-"
    observable: str = "sin_exp_2d"
    gap_tol: float = 0.05
    le_steps: int = 10_000
    count_m: Optional[int] = None
    trajectories: int = 1
    seeds: int = 1
    sweep: List[int] = field(default_factory=list)
    rows: List[int] = field(default_factory=list)
    mu: Optional[int] = None
    window: int = 60
    k_bins: int = 2048
    reference_steps: int = 10_000_000
    probes: List[float] = field(default_factory=lambda: [0.4, 0.6])
    workers: int = field(default_factory=default_workers)
    log_dir: Optional[str] = None
    progress_every: int = 1_000_000

    def resolved(self) -> Dict[str, Any]:
        """Plain dict of every result-affecting field, echoed into output headers"""
        out = asdict(self)
        for name in EXECUTION_FIELDS:
            out.pop(name)
        return out


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _int_list(x, minimum: int) -> bool:
    return isinstance(x, (list, tuple)) and all(_is_int(v) and v >= minimum for v in x)


# field -> (expected kind, value check)
FIELD_VALIDATORS = {
    'map': ('str', lambda x: x in MAP_REGISTRY),
    'params': ('list', lambda x: x is None or all(_is_number(v) for v in x)),
    'x0': ('any', lambda x: x == "random" or (isinstance(x, (list, tuple))
                                             and all(_is_number(v) for v in x))),
    'm': ('any', lambda x: x == "auto" or (_is_int(x) and x >= 1)),
    'n_steps': ('int', lambda x: x >= 1),
    'burn_in': ('int', lambda x: x >= 0),
    'seed': ('int', lambda x: x >= 0),
    'seed2': ('int', lambda x: x >= 0),
    'bins': ('list', lambda x: x is None or _int_list(x, 2)),
    'gap_tol': ('float', lambda x: x > 0),
    'le_steps': ('int', lambda x: x >= 1),
    'count_m': ('any', lambda x: x is None or (_is_int(x) and x >= 1)),
    'trajectories': ('int', lambda x: x >= 1),
    'seeds': ('int', lambda x: x >= 1),
    'sweep': ('list', lambda x: _int_list(x, 1)),
    'rows': ('list', lambda x: _int_list(x, 0)),
    'mu': ('any', lambda x: x is None or (_is_int(x) and x >= 1)),
    'window': ('int', lambda x: x >= 1),
    'k_bins': ('int', lambda x: x >= 2),
    'reference_steps': ('int', lambda x: x >= 1),
    'probes': ('list', lambda x: all(_is_number(v) and 0.0 <= v <= 1.0 for v in x)),
    'workers': ('int', lambda x: x >= 1),
    'progress_every': ('int', lambda x: x >= 0),
}


def validate_config(config: RunConfig) -> RunConfig:
    """Check every field against FIELD_VALIDATORS and the map's arity"""
    check_map_name(config.map)
    for name, (expected_type, validator) in FIELD_VALIDATORS.items():
        value = getattr(config, name)
        if expected_type == 'int' and not _is_int(value):
            raise ConfigValidationError(f"Field {name} must be an integer, got {value!r}")
        if expected_type == 'float' and not _is_number(value):
            raise ConfigValidationError(f"Field {name} must be a number, got {value!r}")
        if expected_type == 'str' and not isinstance(value, str):
            raise ConfigValidationError(f"Field {name} must be a string, got {value!r}")
        if expected_type == 'list' and value is not None and not isinstance(value, (list, tuple)):
            raise ConfigValidationError(f"Field {name} must be a list, got {value!r}")
        if not validator(value):
            raise ConfigValidationError(f"Invalid value for {name}: {value!r}")

    arity = MAP_REGISTRY[config.map].arity
    if config.params is not None and len(config.params) != arity:
        raise ConfigValidationError(
            f"map '{config.map}' takes {arity} parameters, got {len(config.params)}"
        )
    return config


def load_config_module(config_path: str) -> Dict[str, Any]:
    """Execute a Python config file and collect its settings as lowercase keys"""
    spec = importlib.util.spec_from_file_location("srb_gradient_config", config_path)
    if spec is None or spec.loader is None:
        raise ConfigValidationError(f"Cannot load config from {config_path}")
    module = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(module)
    except FileNotFoundError:
        raise ConfigValidationError(f"Config file not found: {config_path}")
    except Exception as e:
        raise ConfigValidationError(f"Error loading config from {config_path}: {e}")

    known = {f.name for f in fields(RunConfig)}
    values: Dict[str, Any] = {}
    for name in dir(module):
        if not name.isupper():
            continue
        value = getattr(module, name)
        if name in SECTION_NAMES:
            if not isinstance(value, dict):
                raise ConfigValidationError(f"Section {name} must be a dictionary")
            for key, item in value.items():
                values[key.lower()] = item
        else:
            values[name.lower()] = value
    values = _normalise(values)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigValidationError(f"Unknown config keys in {config_path}: {', '.join(unknown)}")
    return values


def _normalise(values: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(values)
    if "output" in out and "output_path" not in out:
        out["output_path"] = out.pop("output")
    for key in ("params", "x0", "bins", "sweep", "rows", "probes"):
        if isinstance(out.get(key), tuple):
            out[key] = list(out[key])
    return out


def load_config(config_path: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults, then the config file (explicit path, else the system file), then overrides"""
    values: Dict[str, Any] = {}
    if config_path is not None:
        values = load_config_module(config_path)
        logger.info(f"Loaded config from {config_path}")
    elif Path(SYSTEM_CONFIG).exists() and os.access(SYSTEM_CONFIG, os.R_OK):
        values = load_config_module(SYSTEM_CONFIG)
        logger.info(f"Loaded config from {SYSTEM_CONFIG}")

    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    config = RunConfig(**values)
    check_map_name(config.map)
    if config.params is None:
        config.params = list(MAP_REGISTRY[config.map].defaults)
    return validate_config(config)
