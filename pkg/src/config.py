import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields

from auto_ar import DEFAULT_LOOKBACK_GRID, AutoArConfig
from dataset_presets import SEVEN_DATASETS, SIX_DATASETS, dataset_presets
from errors import ConfigError
from evaluation import AUTO_AR, CONTEXT_LEN, METHODS, UNTUNED_AR

logger = logging.getLogger(__name__)

CONFIG_ECHO = "config.echo"
DATASET_SETTINGS = {
    "seven": SEVEN_DATASETS,
    "six": SIX_DATASETS,
    "all": None,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; the JSON config file and the command-line flags both map onto it."""
    datasets: tuple = ()
    horizons: tuple = None
    context_len: int = CONTEXT_LEN
    train_fraction: float = 1.0
    auto_ar: AutoArConfig = field(default_factory=AutoArConfig)
    methods: tuple = (AUTO_AR, UNTUNED_AR)
    baseline: str = "Auto-ARIMA"
    baseline_ref: tuple = ()
    metric: str = "rmse"
    rank_ties: str = "average"
    aggregate_datasets: str = "seven"
    data_dir: str = "dataset"
    out_dir: str = "results"
    n_jobs: int = 1
    stride: int = 1

    def __post_init__(self):
        for name in ("datasets", "methods", "baseline_ref"):
            value = getattr(self, name)
            object.__setattr__(self, name, (value,) if isinstance(value, str) else tuple(value))
        if self.horizons is not None:
            object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
            if any(h < 1 for h in self.horizons):
                raise ConfigError(f"Horizons must be positive, got {list(self.horizons)}")
        unknown = [method for method in self.methods if method not in METHODS]
        if unknown:
            raise ConfigError(f"Unknown methods {unknown}, expected some of {list(METHODS)}")
        if self.metric not in ("rmse", "mae"):
            raise ConfigError(f"Unknown aggregation metric {self.metric!r}, expected rmse or mae")
        if self.rank_ties not in ("average", "min", "max"):
            raise ConfigError(f"Unknown tie rule {self.rank_ties!r}, expected average, min or max")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"Training fraction must be in (0, 1], got {self.train_fraction}")
        if self.context_len < 1 or self.stride < 1:
            raise ConfigError("Context length and stride must be positive")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must be non-zero")
        aggregate_datasets(self.aggregate_datasets)


def aggregate_datasets(setting):
    """Datasets of an aggregation setting: 'seven', 'six', 'all' or a comma-separated list of presets."""
    if setting in DATASET_SETTINGS:
        return DATASET_SETTINGS[setting]
    names = tuple(name.strip() for name in str(setting).split(",") if name.strip())
    if not names:
        raise ConfigError(f"Empty dataset setting {setting!r}")
    unknown = [name for name in names if name not in dataset_presets()]
    if unknown:
        raise ConfigError(f"Unknown datasets {unknown} in the aggregation setting")
    return names


def load_config(path):
    """Read a JSON config file into a plain dict."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            values = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file {path} not found")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(values, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return values


def _build(cls, values, section):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"Unknown {section} config keys: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"Invalid {section} config: {e}")


def build_run_config(file_values=None, overrides=None, auto_ar_overrides=None):
    """
    Function to resolve the run configuration.
    Args:
        file_values (dict, optional): Contents of the JSON config; AutoArConfig keys sit under "auto_ar".
        overrides (dict, optional): RunConfig values from command-line flags; None means not given.
        auto_ar_overrides (dict, optional): AutoArConfig values from command-line flags.
    Returns:
        RunConfig: Flags win over the file, the file wins over the defaults.
    """
    values = dict(file_values or {})
    auto_ar_values = dict(values.pop("auto_ar", None) or {})
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    auto_ar_values.update({key: value for key, value in (auto_ar_overrides or {}).items() if value is not None})
    if "max_lookback" in auto_ar_values and "lookback_grid" not in auto_ar_values:
        auto_ar_values["lookback_grid"] = tuple(p for p in DEFAULT_LOOKBACK_GRID
                                                if p <= int(auto_ar_values["max_lookback"]))

    auto_ar = _build(AutoArConfig, auto_ar_values, "auto_ar")
    return _build(RunConfig, dict(values, auto_ar=auto_ar), "run")


def config_to_dict(config):
    return asdict(config)


def echo_config(config, out_dir):
    """Write the resolved configuration as sorted-key JSON into the output directory."""
    path = os.path.join(out_dir, CONFIG_ECHO)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(config), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
