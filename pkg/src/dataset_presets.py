LONG_HORIZONS = (96, 192, 336, 720)
ILI_HORIZONS = (24, 36, 48, 60)

# Datasets aggregated in the seven- and six-dataset settings.
SEVEN_DATASETS = ("ETTh1", "ETTh2", "ETTm1", "ETTm2", "Weather", "Electricity", "Traffic")
SIX_DATASETS = ("ETTh1", "ETTh2", "ETTm1", "ETTm2", "Weather", "Electricity")


def dataset_presets():
    """
    Function to define the benchmark datasets and how each one is split.
    Returns:
        dict: Maps the dataset name to its file name, channel count, split and horizons.
              Explicit splits are row counts; fractional splits are resolved against
              the row count of the file when it is loaded.
    """

    hourly_split = {"mode": "explicit", "counts": (12 * 30 * 24, 4 * 30 * 24, 4 * 30 * 24)}
    minute_split = {"mode": "explicit", "counts": (12 * 30 * 24 * 4, 4 * 30 * 24 * 4, 4 * 30 * 24 * 4)}
    fractional_split = {"mode": "fractional", "remainder": "val"}

    presets = {
        "ETTh1": {"file": "ETTh1.csv", "channels": 7, "split": hourly_split, "horizons": LONG_HORIZONS},
        "ETTh2": {"file": "ETTh2.csv", "channels": 7, "split": hourly_split, "horizons": LONG_HORIZONS},
        "ETTm1": {"file": "ETTm1.csv", "channels": 7, "split": minute_split, "horizons": LONG_HORIZONS},
        "ETTm2": {"file": "ETTm2.csv", "channels": 7, "split": minute_split, "horizons": LONG_HORIZONS},
        "Weather": {"file": "weather.csv", "channels": 21, "split": fractional_split,
                    "horizons": LONG_HORIZONS},
        "Electricity": {"file": "electricity.csv", "channels": 321, "split": fractional_split,
                        "horizons": LONG_HORIZONS},
        "Traffic": {"file": "traffic.csv", "channels": 862, "split": fractional_split,
                    "horizons": LONG_HORIZONS},
        "ILI": {"file": "national_illness.csv", "channels": 7, "split": fractional_split,
                "horizons": ILI_HORIZONS},
    }

    return presets


def find_preset(name):
    """Case-insensitive lookup of a preset; returns (canonical_name, preset) or None."""
    for preset_name, preset in dataset_presets().items():
        if preset_name.lower() == str(name).lower():
            return preset_name, preset
    return None
