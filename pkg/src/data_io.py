"""CSV ingestion of survival data and writers for reports, summaries and manifests."""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import DataValidationError
from src.model_likelihood import Dataset

logger = logging.getLogger(__name__)

TRANSFORMS = ('log10', 'ln', 'identity')
# Enough digits to read every double back unchanged.
FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True, eq=False)
class InputTable:
    """A survival dataset read from CSV, with the time transform that produced `dataset.y`."""

    path: str
    transform: str
    dataset: Dataset

    @property
    def covariate_names(self) -> Tuple[str, ...]:
        return self.dataset.names


def _transform_times(times: np.ndarray, transform: str, column: str) -> np.ndarray:
    if transform == 'identity':
        return times
    bad = np.flatnonzero(times <= 0)
    if bad.size:
        raise DataValidationError(
            f'time must be positive for the {transform} transform, got {times[bad[0]]!r}',
            row=int(bad[0]), column=column,
        )
    return np.log10(times) if transform == 'log10' else np.log(times)


def read_input_table(
    file_path: str,
    transform: str = 'log10',
    time_column: str = 'time',
    status_column: str = 'status',
    covariates: Optional[Sequence[str]] = None,
) -> InputTable:
    """
    Read a survival dataset from a CSV file with a header row.

    Args:
        file_path: Path to the CSV file.
        transform: 'log10', 'ln' or 'identity' applied to the time column.
        time_column: Name of the follow-up time column.
        status_column: Name of the event indicator column (0 = censored, 1 = event).
        covariates: Covariate columns; all remaining columns when omitted.

    Returns:
        InputTable whose dataset holds the transformed times.

    Raises:
        DataValidationError: naming the row (0-based, header excluded) and column of
            the first offending value.
    """
    if transform not in TRANSFORMS:
        raise DataValidationError(f'unknown transform {transform!r}; expected one of {TRANSFORMS}')
    if not os.path.exists(file_path):
        raise DataValidationError(f'input file not found: {file_path}')

    try:
        frame = pd.read_csv(file_path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataValidationError(f'malformed CSV: {exc}') from exc

    for column in (time_column, status_column):
        if column not in frame.columns:
            raise DataValidationError('required column is missing', column=column)
    if covariates is None:
        covariates = [c for c in frame.columns if c not in (time_column, status_column)]
    for column in covariates:
        if column not in frame.columns:
            raise DataValidationError('covariate column is missing', column=column)
    if not covariates:
        raise DataValidationError('at least one covariate column is required')

    columns = [time_column, status_column, *covariates]
    values = np.empty((len(frame), len(columns)))
    for j, column in enumerate(columns):
        raw = frame[column].fillna('').str.strip()
        missing = np.flatnonzero((raw == '').to_numpy())
        if missing.size:
            raise DataValidationError('missing value', row=int(missing[0]), column=column)
        try:
            # Python's float parser reads '%.17g' output back exactly.
            values[:, j] = raw.to_numpy(dtype=object).astype(float)
        except ValueError:
            unparsable = np.flatnonzero(pd.to_numeric(raw, errors='coerce').isna().to_numpy())
            row = int(unparsable[0]) if unparsable.size else None
            detail = raw.iloc[row] if row is not None else ''
            raise DataValidationError(f'not a number: {detail!r}', row=row, column=column) from None

    status = values[:, 1]
    invalid = np.flatnonzero((status != 0) & (status != 1))
    if invalid.size:
        row = int(invalid[0])
        raise DataValidationError(f'status must be 0 or 1, got {status[row]:g}', row=row, column=status_column)

    y = _transform_times(values[:, 0], transform, time_column)
    dataset = Dataset(y, status.astype(int), values[:, 2:], tuple(covariates))
    logger.info('Read %d rows (%d events, %d covariates) from %s',
                dataset.n, dataset.n_events, dataset.d, file_path)
    return InputTable(path=file_path, transform=transform, dataset=dataset)


def _plain(value):
    """Convert numpy containers and scalars into JSON-ready Python objects."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(file_path: str, payload: dict):
    with open(file_path, 'w', encoding='utf-8') as f:
        json.dump(_plain(payload), f, indent=2, sort_keys=True)
        f.write('\n')


def write_dataset_csv(file_path: str, dataset: Dataset):
    """Write time,status,<covariates> with round-trip float formatting."""
    frame = pd.DataFrame(dataset.x, columns=list(dataset.names))
    frame.insert(0, 'status', dataset.delta.astype(int))
    frame.insert(0, 'time', dataset.y)
    frame.to_csv(file_path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def write_table_csv(file_path: str, frame: pd.DataFrame):
    frame.to_csv(file_path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def coefficient_frame(report: dict) -> pd.DataFrame:
    """One row per covariate from a fit report payload."""
    return pd.DataFrame(report['coefficients'])


def hazard_frame(report: dict) -> pd.DataFrame:
    curve = report['hazard_curve']
    return pd.DataFrame({'t': curve['t'], 'log_hazard': curve['log_hazard'], 'hazard': curve['hazard']})


def write_fit_report(file_path: str, report: dict, fmt: str = 'json') -> Tuple[str, ...]:
    """
    Write a fit report.

    JSON puts everything in one file. CSV writes the coefficient table to `file_path`
    and the hazard curve next to it as `<stem>.hazard.csv`.

    Returns:
        Paths written.
    """
    if fmt == 'json':
        write_json(file_path, report)
        return (file_path,)
    stem, _ = os.path.splitext(file_path)
    hazard_path = f'{stem}.hazard.csv'
    write_table_csv(file_path, coefficient_frame(report))
    write_table_csv(hazard_path, hazard_frame(report))
    return file_path, hazard_path


def summary_paths(file_path: str) -> Tuple[str, str]:
    stem, _ = os.path.splitext(file_path)
    return f'{stem}.csv', f'{stem}.json'


def write_summary(file_path: str, table: pd.DataFrame, payload: dict) -> Tuple[str, str]:
    """Write the summary table as CSV and the full summary as JSON under the same stem."""
    csv_path, json_path = summary_paths(file_path)
    write_table_csv(csv_path, table)
    write_json(json_path, payload)
    return csv_path, json_path


@dataclass
class RunManifest:
    """Provenance of one command-line run; written next to the outputs it describes."""

    command: str
    config: Dict[str, object]
    version: str
    seed: Optional[int] = None
    wall_time: float = 0.0
    diagnostics: Dict[str, object] = field(default_factory=dict)
    outputs: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return asdict(self)


def manifest_path(output_path: str) -> str:
    return f'{output_path}.manifest.json'


def write_manifest(output_path: str, manifest: RunManifest) -> str:
    path = manifest_path(output_path)
    write_json(path, manifest.to_dict())
    return path
