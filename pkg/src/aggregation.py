import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from dataset_presets import SEVEN_DATASETS
from errors import ConfigError, DataError
from evaluation import EvalRecord

logger = logging.getLogger(__name__)

# Constants
REFERENCE_COLUMNS = ["dataset", "horizon", "method", "metric", "value"]
REFERENCE_METRICS = ("mse", "mae", "rmse")
SCORE_METRICS = ("rmse", "mae")
RANK_TIES = ("average", "min", "max")
DEFAULT_BASELINE = "Auto-ARIMA"
RECORD_COLUMNS = ["dataset", "horizon", "method", "mse", "mae", "rmse", "n_windows", "n_values",
                  "chosen_p", "d", "fit_seconds"]
REPORT_COLUMNS = ["average_score", "average_rank", "mean_pct_improvement", "median_pct_improvement",
                  "n_tasks"]


@dataclass(frozen=True)
class AggregateReport:
    """Per-method summary over the tasks of the selected datasets, plus the task x method score table."""
    table: pd.DataFrame
    scores: pd.DataFrame
    baseline_method: str
    metric: str

    def row(self, method):
        if method not in self.table.index:
            raise DataError(f"Method {method!r} is not part of the aggregate")
        return self.table.loc[method].to_dict()


def load_reference_results(path):
    """
    Function to read published per-task results.
    Args:
        path (str): CSV with header dataset,horizon,method,metric,value; metric is mse, mae or rmse.
    Returns:
        list: EvalRecord per (dataset, horizon, method), in first-appearance order.
    """
    try:
        reference = pd.read_csv(path, sep=",", encoding="utf-8", dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise DataError(f"Reference file {path} not found")
    except pd.errors.EmptyDataError:
        raise DataError(f"Reference file {path} is empty")
    except pd.errors.ParserError as e:
        raise DataError(f"Error parsing reference file {path}: {e}")

    if list(reference.columns) != REFERENCE_COLUMNS:
        raise DataError(f"Reference file {path} must have the header {','.join(REFERENCE_COLUMNS)}")

    grouped = {}
    for row_idx, row in enumerate(reference.itertuples(index=False)):
        line = row_idx + 2
        metric = row.metric.strip().lower()
        if metric not in REFERENCE_METRICS:
            raise DataError(f"Reference file {path}, line {line}: unknown metric {row.metric!r}")
        try:
            horizon = int(row.horizon)
            value = float(row.value)
        except ValueError:
            raise DataError(f"Reference file {path}, line {line}: malformed horizon or value")
        if horizon < 1 or not np.isfinite(value) or value < 0:
            raise DataError(f"Reference file {path}, line {line}: horizon must be positive and value "
                            f"a finite non-negative number")

        key = (row.dataset.strip(), horizon, row.method.strip())
        metrics = grouped.setdefault(key, {})
        if metric in metrics:
            raise DataError(f"Reference file {path}, line {line}: duplicate {metric} for {key}")
        metrics[metric] = value

    records = []
    for (dataset, horizon, method), metrics in grouped.items():
        if "mse" in metrics and "rmse" in metrics and not np.isclose(metrics["rmse"] ** 2, metrics["mse"]):
            raise DataError(f"Reference file {path}: inconsistent mse and rmse for {(dataset, horizon, method)}")
        records.append(EvalRecord(dataset, horizon, method, mse=metrics.get("mse"), mae=metrics.get("mae"),
                                  rmse=metrics.get("rmse")))
    return records


def merge_records(computed, reference):
    """Union of the two record lists; a computed record replaces the reference record of the same task and method."""
    merged = {record.key: record for record in reference}
    for record in computed:
        if record.key in merged:
            logger.warning("Reference result for %s H=%d %s overridden by the computed one", *record.key)
        merged[record.key] = record
    return list(merged.values())


def _merge_metrics(first, second):
    """Join two reference records of the same task and method that carry different metrics."""
    metrics = {}
    for name in ("mse", "mae"):
        values = [value for value in (first.score(name), second.score(name)) if value is not None]
        if len(values) == 2 and not np.isclose(values[0], values[1]):
            raise DataError(f"Conflicting reference {name} values for {first.key}")
        metrics[name] = values[0] if values else None
    return EvalRecord(*first.key, mse=metrics["mse"], mae=metrics["mae"])


def score_table(records, metric="rmse", datasets=SEVEN_DATASETS):
    """Pivot the records into a (dataset, horizon) x method table of scores; missing cells are NaN."""
    if metric not in SCORE_METRICS:
        raise ConfigError(f"Unknown aggregation metric {metric!r}, expected one of {SCORE_METRICS}")
    if not records:
        raise DataError("Cannot aggregate an empty record set")

    rows = [(record.dataset, record.horizon, record.method, record.score(metric)) for record in records
            if (datasets is None or record.dataset in datasets) and record.score(metric) is not None]
    if not rows:
        raise DataError(f"No {metric} records for the datasets {list(datasets or [])}")

    frame = pd.DataFrame(rows, columns=["dataset", "horizon", "method", "score"])
    duplicated = frame.duplicated(["dataset", "horizon", "method"])
    if duplicated.any():
        dataset, horizon, method = frame.loc[duplicated.idxmax(), ["dataset", "horizon", "method"]]
        raise DataError(f"Duplicate records for {dataset} H={horizon} {method}")

    return frame.pivot(index=["dataset", "horizon"], columns="method", values="score")


def aggregate(records, baseline=DEFAULT_BASELINE, metric="rmse", datasets=SEVEN_DATASETS, ties="average"):
    """
    Function to summarize the methods over all tasks against a baseline method.
    Args:
        records (list): EvalRecords, computed and reference ones alike.
        baseline (str): Method the percentage improvements are measured against.
        metric (str): 'rmse' (default) or 'mae'; lower is better.
        datasets (tuple, optional): Datasets kept in the aggregate; None keeps every dataset.
        ties (str): Rank given to tied methods; "average" splits the ranks, "max" gives all of them
            the worst one.
    Returns:
        AggregateReport: average score, average rank, mean and median % improvement per method.
            Methods without a value on a task are left out of that task's ranking.
    """
    if ties not in RANK_TIES:
        raise ConfigError(f"Unknown tie rule {ties!r}, expected one of {RANK_TIES}")
    scores = score_table(records, metric, datasets)

    if baseline not in scores.columns:
        raise DataError(f"Baseline {baseline!r} has no records")
    base = scores[baseline]
    missing = base.index[base.isna()]
    if len(missing):
        tasks = ", ".join(f"{dataset} H={horizon}" for dataset, horizon in missing)
        raise DataError(f"Baseline {baseline!r} is missing tasks: {tasks}")
    if (base <= 0).any():
        raise DataError(f"Baseline {baseline!r} has a zero score; percentage improvement is undefined")

    improvement = scores.rsub(base, axis=0).div(base, axis=0) * 100.0
    ranks = scores.rank(axis=1, method=ties)

    table = pd.DataFrame({
        "average_score": scores.mean(),
        "average_rank": ranks.mean(),
        "mean_pct_improvement": improvement.mean(),
        "median_pct_improvement": improvement.median(),
        "n_tasks": scores.count(),
    }, columns=REPORT_COLUMNS)
    table.index.name = "method"
    table = table.sort_values(["average_rank", "average_score"], kind="mergesort")

    return AggregateReport(table, scores, baseline, metric)


def records_frame(records):
    rows = [{column: asdict(record)[column] for column in RECORD_COLUMNS} for record in records]
    frame = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    frame = frame.sort_values(["dataset", "horizon", "method"], kind="mergesort")
    return frame.astype({"chosen_p": "Int64", "d": "Int64"})


def write_records(records, path):
    """Write the per-task records as CSV; columns RECORD_COLUMNS, sorted by dataset, horizon and method."""
    records_frame(records).drop(columns="fit_seconds").to_csv(path, index=False, lineterminator="\n")


def load_records(path):
    """Read a records file written by write_records back into EvalRecords."""
    try:
        frame = pd.read_csv(path, sep=",", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"Records file {path} not found")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise DataError(f"Error parsing records file {path}: {e}")

    required = ["dataset", "horizon", "method", "mse", "mae"]
    missing = [column for column in required if column not in frame.columns]
    if missing:
        raise DataError(f"Records file {path} lacks the columns {missing}")

    def optional(value, cast):
        return None if pd.isna(value) else cast(value)

    records = []
    for row in frame.to_dict("records"):
        records.append(EvalRecord(str(row["dataset"]), int(row["horizon"]), str(row["method"]),
                                  mse=optional(row["mse"], float), mae=optional(row["mae"], float),
                                  n_windows=optional(row.get("n_windows"), int) or 0,
                                  n_values=optional(row.get("n_values"), int) or 0,
                                  chosen_p=optional(row.get("chosen_p"), int), d=optional(row.get("d"), int)))
    return records


def format_report(report):
    header = (f"Aggregate over {len(report.scores)} tasks, metric {report.metric.upper()}, "
              f"baseline {report.baseline_method}")
    body = report.table.to_string(float_format=lambda value: f"{value:.4f}")
    return f"{header}\n{body}\n"


def write_report(report, csv_path, txt_path=None):
    """Machine-readable aggregate as CSV; the human-readable table goes to txt_path."""
    report.table.to_csv(csv_path, float_format="%.6f", lineterminator="\n")
    if txt_path is not None:
        with open(txt_path, "w", encoding="utf-8") as f:
            f.write(format_report(report))


def main(records, reference_paths=(), baseline=DEFAULT_BASELINE, metric="rmse", datasets=SEVEN_DATASETS,
         ties="average"):
    """
    Main function to merge computed records with reference results and aggregate them.
    Returns:
        tuple: (merged records, AggregateReport).
    """
    reference = {}
    for path in reference_paths:
        for record in load_reference_results(path):
            if record.key in reference:
                record = _merge_metrics(reference[record.key], record)
            reference[record.key] = record
    merged = merge_records(records, list(reference.values()))

    report = aggregate(merged, baseline, metric, datasets, ties)
    logger.info("Aggregated %d methods over %d tasks against %s", len(report.table), len(report.scores), baseline)
    return merged, report
