import functools
import json
import logging
import os
import sys
from dataclasses import replace

import click
import numpy as np
import pandas as pd

from aggregation import format_report, load_records, write_records, write_report
from aggregation import main as aggregation
from ar_model import check_channels, forecast, load_model, save_model
from auto_ar import run_auto_ar
from config import aggregate_datasets, build_run_config, echo_config, load_config
from errors import AutoArError, ConfigError, DataError
from evaluation import AUTO_AR, ZERO_SHOT_AR, ForecastTask
from evaluation import main as evaluation
from process_data import apply_scaler, invert_scaler, load_csv, resolve_dataset, scaler_from_stats, split_spec_for
from process_data import main as process_data

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def handle_errors(func):
    """Report pipeline errors on stderr and exit with the code of their family."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except AutoArError as e:
            logger.debug("Command failed", exc_info=True)
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)
    return wrapper


def parse_int_list(value, name):
    """Comma-separated positive integers, e.g. '96,192'."""
    if value is None:
        return None
    try:
        numbers = tuple(int(item) for item in value.split(",") if item.strip())
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list of integers, got {value!r}")
    if not numbers:
        raise ConfigError(f"{name} is empty")
    return numbers


def run_options(func):
    """Options shared by the commands that load datasets and fit models."""
    options = [
        click.option("--preset", "presets", multiple=True, help="Benchmark dataset name, e.g. ETTh1."),
        click.option("--data", "data_paths", multiple=True, type=click.Path(dir_okay=False),
                     help="CSV file with a timestamp column and one column per channel."),
        click.option("--data-dir", default=None, help="Directory holding the preset CSV files."),
        click.option("--horizons", default=None, help="Comma-separated forecast horizons."),
        click.option("--context-len", type=int, default=None, help="Context length L."),
        click.option("--lookback-max", type=int, default=None, help="Largest lookback considered."),
        click.option("--grid", default=None, help="Comma-separated lookback grid."),
        click.option("--kpss-alpha", type=float, default=None, help="KPSS significance level."),
        click.option("--force-d", type=click.IntRange(0, 1), default=None, help="Skip KPSS and use this d."),
        click.option("--train-fraction", type=float, default=None, help="Share of the training split used."),
        click.option("--zero-shot-window", type=int, default=None, help="Rolling window W of the zero-shot fit."),
        click.option("--zero-shot-mode", type=click.Choice(["per_window", "per_dataset"]), default=None),
        click.option("--out", "out_dir", default=None, help="Output directory."),
        click.option("--jobs", type=int, default=None, help="Number of worker threads."),
        click.option("--stride", type=int, default=None, help="Distance between evaluated test windows."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def aggregate_options(func):
    options = [
        click.option("--baseline-ref", "baseline_refs", multiple=True, type=click.Path(dir_okay=False),
                     help="Reference results CSV (dataset,horizon,method,metric,value)."),
        click.option("--baseline", default=None, help="Method the improvements are measured against."),
        click.option("--metric", type=click.Choice(["rmse", "mae"]), default=None),
        click.option("--ties", "rank_ties", type=click.Choice(["average", "min", "max"]), default=None,
                     help="Rank given to tied methods."),
        click.option("--datasets", "aggregate_setting", default=None,
                     help="Aggregation setting: seven, six, all or a comma-separated list."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_config(ctx, options):
    """Merge the config file of the group with the flags given to the command."""
    file_values = load_config(ctx.obj["config_path"]) if ctx.obj.get("config_path") else {}
    datasets = tuple(options.get("presets", ())) + tuple(options.get("data_paths", ()))
    jobs = options.get("jobs")

    overrides = {
        "datasets": datasets or None,
        "horizons": parse_int_list(options.get("horizons"), "--horizons"),
        "context_len": options.get("context_len"),
        "train_fraction": options.get("train_fraction"),
        "methods": options.get("methods"),
        "baseline": options.get("baseline"),
        "baseline_ref": tuple(options.get("baseline_refs", ())) or None,
        "metric": options.get("metric"),
        "rank_ties": options.get("rank_ties"),
        "aggregate_datasets": options.get("aggregate_setting"),
        "data_dir": options.get("data_dir"),
        "out_dir": options.get("out_dir"),
        "n_jobs": jobs,
        "stride": options.get("stride"),
    }
    auto_ar_overrides = {
        "max_lookback": options.get("lookback_max"),
        "lookback_grid": parse_int_list(options.get("grid"), "--grid"),
        "kpss_significance": options.get("kpss_alpha"),
        "force_d": options.get("force_d"),
        "zero_shot_window": options.get("zero_shot_window"),
        "zero_shot_mode": options.get("zero_shot_mode"),
        "n_jobs": jobs,
    }
    return build_run_config(file_values, overrides, auto_ar_overrides)


def resolve_datasets(config):
    """Resolve every dataset of the run before anything is fitted."""
    if not config.datasets:
        raise ConfigError("No dataset given; use --preset or --data")
    resolved = []
    for dataset in config.datasets:
        info = resolve_dataset(dataset, config.data_dir)
        if not os.path.isfile(info["path"]):
            raise DataError(f"File {info['path']} for dataset {info['name']} not found")
        resolved.append(info)
    return resolved


def resolve_tasks(config, info):
    horizons = config.horizons or info["horizons"]
    if not horizons:
        raise ConfigError(f"Dataset {info['name']} has no default horizons; use --horizons")
    return [ForecastTask(info["name"], horizon, config.context_len, train_fraction=config.train_fraction)
            for horizon in horizons]


def prepare_dataset(config, info):
    series = load_csv(info["path"], info["channels"])
    spec = split_spec_for(info, series.shape[0])
    return process_data(series, spec, config.train_fraction)


def selection_to_dict(dataset, selection):
    return {
        "dataset": dataset,
        "chosen_p": selection.chosen_p,
        "d": selection.d,
        "bic_by_p": {str(p): bic for p, bic in selection.bic_by_p.items()},
        "per_channel_reject": list(selection.per_channel_reject),
        "skipped": list(selection.skipped),
    }


def prepare_out_dir(out_dir):
    os.makedirs(os.path.join(out_dir, "models"), exist_ok=True)
    return out_dir


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON config file; flags override its values.")
@click.option("--log-level", default="INFO", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"],
                                                                case_sensitive=False))
@click.pass_context
def cli(ctx, config_path, log_level):
    """Auto-AR forecasting and benchmark harness."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT)
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@cli.command()
@run_options
@click.pass_context
@handle_errors
def fit(ctx, **options):
    """Select d and p on the training split and save the fitted model."""
    config = resolve_config(ctx, options)
    datasets = resolve_datasets(config)

    fitted = []
    for info in datasets:
        data = prepare_dataset(config, info)
        model, selection = run_auto_ar(data["train"], config.auto_ar)
        model = replace(model, scaler_mean=data["scaler"].mean_, scaler_std=data["scaler"].scale_)
        logger.info("%s: chosen p=%d d=%d", info["name"], selection.chosen_p, selection.d)
        fitted.append((info["name"], model, selection))

    out_dir = prepare_out_dir(config.out_dir)
    echo_config(config, out_dir)
    for name, model, selection in fitted:
        save_model(model, os.path.join(out_dir, "models", f"{name}.model"))
        with open(os.path.join(out_dir, "models", f"{name}.selection.json"), "w", encoding="utf-8") as f:
            json.dump(selection_to_dict(name, selection), f, indent=2)
            f.write("\n")
    click.echo(f"Saved {len(fitted)} model(s) to {os.path.join(out_dir, 'models')}")


def run_benchmark(config):
    """Fit and evaluate every method on every task, then write records, models and aggregates."""
    datasets = resolve_datasets(config)
    tasks = {info["name"]: resolve_tasks(config, info) for info in datasets}
    setting = aggregate_datasets(config.aggregate_datasets)
    for path in config.baseline_ref:
        if not os.path.isfile(path):
            raise DataError(f"Reference file {path} not found")

    records = []
    models = []
    for info in datasets:
        data = prepare_dataset(config, info)
        for method in config.methods:
            for result in evaluation(data, tasks[info["name"]], method, config.auto_ar, config.stride,
                                     config.n_jobs):
                records.append(result["record"])
                if result["model"] is not None and method == AUTO_AR:
                    models.append((result["record"], result["model"]))

    report = None
    if config.baseline_ref:
        records, report = aggregation(records, config.baseline_ref, config.baseline, config.metric, setting,
                                      config.rank_ties)

    out_dir = prepare_out_dir(config.out_dir)
    echo_config(config, out_dir)
    write_records(records, os.path.join(out_dir, "records.csv"))
    for record, model in models:
        save_model(model, os.path.join(out_dir, "models", f"{record.dataset}_{record.horizon}.model"))
    if report is not None:
        write_report(report, os.path.join(out_dir, "aggregate.csv"), os.path.join(out_dir, "aggregate.txt"))
        click.echo(format_report(report), nl=False)
    return records, report


@cli.command()
@run_options
@aggregate_options
@click.option("--methods", default=None, help="Comma-separated methods, e.g. 'Auto-AR,AR (d=0)'.")
@click.pass_context
@handle_errors
def bench(ctx, methods, **options):
    """Run Auto-AR and the untuned AR baseline on every task and aggregate against the references."""
    if methods is not None:
        options["methods"] = tuple(method.strip() for method in methods.split(",") if method.strip())
    config = resolve_config(ctx, options)
    records, _ = run_benchmark(config)
    click.echo(f"Wrote {len(records)} record(s) to {config.out_dir}")


@cli.command()
@run_options
@aggregate_options
@click.pass_context
@handle_errors
def zeroshot(ctx, **options):
    """Evaluate Auto-AR fitted only on the context of each test window."""
    options["methods"] = (ZERO_SHOT_AR,)
    config = resolve_config(ctx, options)
    records, _ = run_benchmark(config)
    click.echo(f"Wrote {len(records)} record(s) to {config.out_dir}")


@cli.command("forecast")
@click.option("--model", "model_path", required=True, type=click.Path(dir_okay=False))
@click.option("--context", "context_path", required=True, type=click.Path(dir_okay=False))
@click.option("--horizon", required=True, type=click.IntRange(min=0))
@click.option("--out", "out_path", default="forecast.csv", type=click.Path(dir_okay=False))
@handle_errors
def forecast_cmd(model_path, context_path, horizon, out_path):
    """Forecast H steps after the last row of a context CSV with a saved model."""
    model = load_model(model_path)
    context = load_csv(context_path, len(model.channel_names) or None)
    check_channels(model, context.columns)
    timestamp_column = pd.read_csv(context_path, nrows=0).columns[0]

    scaler = None
    if model.scaler_mean is not None:
        scaler = scaler_from_stats(model.scaler_mean, model.scaler_std)
        context = apply_scaler(scaler, context)
    predictions = forecast(model, context.to_numpy(dtype=np.float64), horizon)
    if scaler is not None:
        predictions = invert_scaler(scaler, predictions)

    output = pd.DataFrame(predictions, columns=context.columns)
    output.insert(0, timestamp_column, np.arange(1, horizon + 1))
    output.to_csv(out_path, index=False, lineterminator="\n")
    logger.info("Wrote %d forecast row(s) to %s", horizon, out_path)


@cli.command("aggregate")
@aggregate_options
@click.option("--records", "record_paths", multiple=True, type=click.Path(dir_okay=False),
              help="records.csv written by bench or zeroshot.")
@click.option("--out", "out_dir", default=None, help="Output directory.")
@click.pass_context
@handle_errors
def aggregate_cmd(ctx, record_paths, **options):
    """Aggregate computed records and reference results against a baseline."""
    config = resolve_config(ctx, options)
    setting = aggregate_datasets(config.aggregate_datasets)
    if not config.baseline_ref and not record_paths:
        raise ConfigError("Nothing to aggregate; use --baseline-ref or --records")

    records = []
    for path in record_paths:
        records.extend(load_records(path))
    _, report = aggregation(records, config.baseline_ref, config.baseline, config.metric, setting,
                                config.rank_ties)

    out_dir = prepare_out_dir(config.out_dir)
    echo_config(config, out_dir)
    write_report(report, os.path.join(out_dir, "aggregate.csv"), os.path.join(out_dir, "aggregate.txt"))
    click.echo(format_report(report), nl=False)


if __name__ == "__main__":
    cli()
