"""levyid - Lévy SDE drift identification : Application settings handling."""

import configparser
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from .drift import SymmetrySpec
from .errors import LevyIdError

_config_file = Path(str(Path.home())) / ".levyid.cfg"

# Defaults reproduce the one-dimensional sine experiment.
DEFAULTS: Dict[str, Dict[str, Any]] = {
    "simulate": {
        "drift": "sine1d",
        "coefficients": "",
        "alpha": 1.0,
        "g": (0.25,),
        "fine_step": 1e-3,
        "total_steps": 4000,
        "save_stride": 100,
        "n_trajectories": 100,
        "seed": 1,
        "init": "point",
        "init_point": (0.0,),
        "init_std": 1.0 / 3.0,
        "grid_lo": -1.0,
        "grid_hi": 1.0,
        "grid_per_axis": 10,
        "box_lo": (),
        "box_hi": (),
        "workers": 1,
    },
    "grid": {"L": 2, "M": 1028, "n_L": 8},
    "model": {"J": 4, "symmetry": "none"},
    "propagator": {
        "nu": 100,
        "decay": "componentwise",
        "checkpoint_every": 1,
        "instability_threshold": 1e3,
    },
    "loss": {
        "mode": "averaged_ecf",
        "mu": 0.0,
        "gaussian_reg": 0.0,
        # -1 picks the pad from M, dt and J
        "pad": -1,
        "batch_size": 8,
        "workers": 1,
    },
    "train": {
        "gtol": 1e-9,
        "xtol": 1e-9,
        "max_iter": 200,
        "initial_radius": 1.0,
        "patience": 10,
        "memory": 10,
        "seed": 0,
    },
    "eval": {
        "n_test": 1000,
        "seed": 12345,
        "resolution": 41,
        "bounds": (-3.0, 3.0, -3.0, 3.0),
        "error_box": (-1.5, 1.5),
        "scan_start": 0.0,
        "scan_stop": 1.0,
        "scan_step": 0.01,
    },
}

KNOWN_DRIFTS = (
    "sine1d",
    "doublewell1d",
    "ou",
    "trig_singlewell2d",
    "trig_doublewell2d",
    "poly_doublewell2d",
    "maier_stein",
    "fourier",
)
KNOWN_INITS = ("point", "gaussian", "grid")
KNOWN_MODES = ("averaged_ecf", "per_trajectory")
KNOWN_DECAYS = ("componentwise", "projected", "printed")
KNOWN_SYMMETRIES = ("none", "maier_stein")


class ConfigError(LevyIdError, ValueError):
    """Error class for invalid configuration values."""

    def __init__(self, key: str, message: str) -> None:
        """Keep the offending section.key next to the message."""
        super().__init__(f"{key}: {message}")
        self.key = key


def _parse_list(key: str, text: str) -> Tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as err:
        raise ConfigError(
            key, f"expected comma separated numbers ({text})"
        ) from err


def _coerce(key: str, default: Any, value: Any) -> Any:
    """Convert value to the type of the default."""
    if isinstance(default, tuple):
        if isinstance(value, str):
            return _parse_list(key, value)
        return tuple(float(v) for v in value)
    try:
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as err:
        raise ConfigError(
            key, f"expected {type(default).__name__} (got {value!r})"
        ) from err
    return str(value)


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def config_path(path: Optional[Union[str, Path]] = None) -> Path:
    """Return the config file in use."""
    return Path(path) if path else _config_file


def get_settings(
    path: Optional[Union[str, Path]] = None,
) -> Dict[str, Dict[str, Any]]:
    """Get settings from config file or default values."""
    config = configparser.RawConfigParser()
    config.optionxform = str  # type: ignore

    file_path = config_path(path)
    if file_path.exists():
        config.read(file_path)

    settings: Dict[str, Dict[str, Any]] = {}
    for section, keys in DEFAULTS.items():
        settings[section] = {}
        for key, default in keys.items():
            name = f"{section}.{key}"
            try:
                if isinstance(default, tuple):
                    value: Any = _parse_list(
                        name,
                        config.get(section, key, fallback=_format(default)),
                    )
                elif isinstance(default, int):
                    value = config.getint(section, key, fallback=default)
                elif isinstance(default, float):
                    value = config.getfloat(section, key, fallback=default)
                else:
                    value = config.get(section, key, fallback=default)
            except ValueError as err:
                raise ConfigError(name, str(err)) from err
            settings[section][key] = value

    for section in config.sections():
        for key in config.options(section):
            if section not in DEFAULTS or key not in DEFAULTS[section]:
                raise ConfigError(f"{section}.{key}", "unknown setting")

    return settings


def apply_overrides(
    settings: Dict[str, Dict[str, Any]], overrides: Iterable[str]
) -> Dict[str, Dict[str, Any]]:
    """Apply section.key=value overrides from the command line."""
    for item in overrides:
        name, sep, value = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(name, "expected section.key=value")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(name.strip(), "unknown setting")
        settings[section][key] = _coerce(
            name.strip(), DEFAULTS[section][key], value.strip()
        )
    return settings


def validate(settings: Dict[str, Dict[str, Any]]) -> None:
    """Check ranges and choices, naming the first offending key."""
    sim = settings["simulate"]
    if not 1.0 <= sim["alpha"] <= 2.0:
        raise ConfigError("simulate.alpha", "must lie in [1, 2]")
    if sim["drift"] not in KNOWN_DRIFTS:
        raise ConfigError("simulate.drift", f"unknown drift '{sim['drift']}'")
    if sim["drift"] == "fourier" and not sim["coefficients"]:
        raise ConfigError(
            "simulate.coefficients", "required for the fourier drift"
        )
    if sim["init"] not in KNOWN_INITS:
        raise ConfigError("simulate.init", f"unknown init '{sim['init']}'")
    if not sim["g"] or any(v < 0.0 for v in sim["g"]):
        raise ConfigError("simulate.g", "must be non-negative values")
    if len(sim["box_lo"]) != len(sim["box_hi"]):
        raise ConfigError("simulate.box_hi", "must match simulate.box_lo")
    _positive(settings, "simulate", "fine_step", "total_steps")
    _positive(settings, "simulate", "save_stride", "n_trajectories")
    _positive(settings, "simulate", "init_std", "grid_per_axis", "workers")
    if sim["save_stride"] > sim["total_steps"]:
        raise ConfigError(
            "simulate.save_stride", "must not exceed simulate.total_steps"
        )

    _positive(settings, "grid", "L", "M", "n_L")
    _positive(settings, "model", "J")
    symmetry = settings["model"]["symmetry"]
    if symmetry not in KNOWN_SYMMETRIES:
        try:
            SymmetrySpec.parse(symmetry, 1)
        except ValueError as err:
            raise ConfigError("model.symmetry", str(err)) from err

    prop = settings["propagator"]
    _positive(settings, "propagator", "nu", "checkpoint_every")
    _positive(settings, "propagator", "instability_threshold")
    if prop["decay"] not in KNOWN_DECAYS:
        raise ConfigError(
            "propagator.decay", f"unknown decay '{prop['decay']}'"
        )

    loss = settings["loss"]
    if loss["mode"] not in KNOWN_MODES:
        raise ConfigError("loss.mode", f"unknown mode '{loss['mode']}'")
    for key in ("mu", "gaussian_reg"):
        if loss[key] < 0.0:
            raise ConfigError(f"loss.{key}", "must be non-negative")
    if loss["pad"] < -1:
        raise ConfigError("loss.pad", "must be -1 (automatic) or >= 0")
    _positive(settings, "loss", "batch_size", "workers")

    _positive(settings, "train", "gtol", "xtol", "max_iter")
    _positive(settings, "train", "initial_radius", "patience", "memory")

    _positive(settings, "eval", "n_test", "resolution", "scan_step")
    if len(settings["eval"]["bounds"]) != 4:
        raise ConfigError("eval.bounds", "expected x1_lo,x1_hi,x2_lo,x2_hi")
    if len(settings["eval"]["error_box"]) != 2:
        raise ConfigError("eval.error_box", "expected lo,hi")


def _positive(
    settings: Dict[str, Dict[str, Any]], section: str, *keys: str
) -> None:
    for key in keys:
        if not settings[section][key] > 0:
            raise ConfigError(f"{section}.{key}", "must be positive")


def write_settings(
    settings: Dict[str, Dict[str, Any]],
    path: Optional[Union[str, Path]] = None,
    update: bool = True,
) -> Path:
    """Write settings to config file, either updating or creating a new one.

    Only values that differ from the defaults are written.
    """
    config = configparser.RawConfigParser()
    config.optionxform = str  # type: ignore

    file_path = config_path(path)
    if update and file_path.exists():
        config.read(file_path)

    for section, keys in DEFAULTS.items():
        config = section_config(section, settings[section], keys, config)

    with open(file_path, "w") as file_handle:
        config.write(file_handle)
    return file_path


def section_config(
    section: str,
    values: Dict[str, Any],
    default: Dict[str, Any],
    config: configparser.RawConfigParser,
) -> configparser.RawConfigParser:
    """Add the values of one section that differ from the defaults."""
    diff: List[Tuple[str, Any]] = [
        (k, v) for k, v in values.items() if default.get(k) != v
    ]
    if diff:
        if section not in config.sections():
            config.add_section(section)
        for diff_key, diff_value in diff:
            config.set(section, diff_key, _format(diff_value))

    return config
