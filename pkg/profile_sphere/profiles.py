# profiles.py

"""
Daily load-profile matrices: ingestion, validation, standardization and
normalization.

A ProfileMatrix holds raw readings (rows = meters, columns = time steps of
one day). Standardizing every row to zero mean and unit population standard
deviation puts each row at Euclidean norm sqrt(D); dividing by sqrt(D) then
places the whole data set on the unit hypersphere.
"""

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from profile_sphere.errors import InsufficientDataError, ProfileSphereError, ShapeError

logger = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
VARIANCE_EPSILON = 1e-12
INVARIANT_TOLERANCE = 1e-9
MISSING_TOKENS = frozenset({'', 'nan', 'na', 'n/a', 'null', 'none'})


class ProfileFormatError(ProfileSphereError):
    """Base class for problems found while reading a profile file."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ProfileParseError(ProfileFormatError):
    """The file is not well-formed CSV or holds non-numeric readings."""
    pass


class StructuralError(ProfileFormatError):
    """The file is readable but its shape is wrong (header, column count)."""
    pass


class DegenerateRowError(ProfileSphereError, ValueError):
    """A profile is constant and cannot be standardized."""

    def __init__(self, meter_id: str, sigma: float):
        self.meter_id = meter_id
        self.sigma = sigma
        super().__init__(f"Profile '{meter_id}' is constant (sigma={sigma:.3g}); cannot standardize")


@dataclass(frozen=True)
class CsvFormat:
    """
    Layout of a profile CSV file.

    Attributes:
        meter_id_column: Name of the first header field
        resolution_minutes: Minutes per time step (None infers 1440 / D)
        encoding: Text encoding of the file
    """
    meter_id_column: str = 'meter_id'
    resolution_minutes: Optional[int] = None
    encoding: str = 'utf-8'


@dataclass(frozen=True)
class QuarantineEntry:
    """A meter excluded at ingestion, with the reason."""
    meter_id: str
    reason: str

    def to_dict(self) -> Dict[str, str]:
        return {'meter_id': self.meter_id, 'reason': self.reason}


def _frozen_matrix(values: Any) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.ndim != 2:
        raise ShapeError(f"Expected a 2-D matrix, got {array.ndim} dimension(s)")
    array.setflags(write=False)
    return array


def _check_ids(meter_ids: Sequence[str], rows: int) -> Tuple[str, ...]:
    ids = tuple(str(m) for m in meter_ids)
    if len(ids) != rows:
        raise ShapeError(f"{len(ids)} meter ids for {rows} rows")
    return ids


@dataclass(frozen=True)
class ProfileMatrix:
    """
    Raw daily readings (active power, kW).

    Attributes:
        values: M x D matrix, row = meter, column = time step
        meter_ids: One id per row
        resolution_minutes: Minutes per time step; resolution_minutes * D == 1440
        quarantine: Meters removed at ingestion and why
    """
    values: np.ndarray
    meter_ids: Tuple[str, ...]
    resolution_minutes: int
    quarantine: Tuple[QuarantineEntry, ...] = field(default=())

    def __post_init__(self):
        values = _frozen_matrix(self.values)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'meter_ids', _check_ids(self.meter_ids, values.shape[0]))
        object.__setattr__(self, 'quarantine', tuple(self.quarantine))
        rows, steps = values.shape
        if rows < 2 or steps < 2:
            raise InsufficientDataError(f"A profile matrix needs M >= 2 and D >= 2, got {rows}x{steps}")
        if not np.all(np.isfinite(values)):
            raise ShapeError("Profile matrix contains NaN or infinite readings")
        if self.resolution_minutes <= 0 or self.resolution_minutes * steps != MINUTES_PER_DAY:
            raise ShapeError(
                f"{steps} steps of {self.resolution_minutes} min do not cover a full day "
                f"({MINUTES_PER_DAY} min)"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    def select_rows(self, indices: Sequence[int]) -> 'ProfileMatrix':
        """Return a new matrix holding only the given rows, in the given order."""
        index = np.asarray(indices, dtype=int)
        return ProfileMatrix(
            values=self.values[index],
            meter_ids=tuple(self.meter_ids[i] for i in index),
            resolution_minutes=self.resolution_minutes,
            quarantine=self.quarantine,
        )

    def exclude(self, meter_ids: Sequence[str]) -> 'ProfileMatrix':
        """Return a new matrix without the given meters."""
        dropped = set(meter_ids)
        keep = [i for i, m in enumerate(self.meter_ids) if m not in dropped]
        return self.select_rows(keep)

    def fingerprint(self) -> Dict[str, Any]:
        """Row count, column count and a content hash identifying this corpus."""
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.values, dtype='<f8').tobytes())
        digest.update('\n'.join(self.meter_ids).encode('utf-8'))
        return {
            'rows': int(self.values.shape[0]),
            'columns': int(self.values.shape[1]),
            'sha256': digest.hexdigest(),
        }


@dataclass(frozen=True)
class StandardizedMatrix:
    """Row-standardized profiles; every row has mean 0 and norm sqrt(D)."""
    values: np.ndarray
    source_meter_ids: Tuple[str, ...]

    def __post_init__(self):
        values = _frozen_matrix(self.values)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'source_meter_ids', _check_ids(self.source_meter_ids, values.shape[0]))
        steps = values.shape[1]
        means = np.abs(values.mean(axis=1))
        norms = np.linalg.norm(values, axis=1)
        if np.any(means >= INVARIANT_TOLERANCE) or np.any(np.abs(norms - np.sqrt(steps)) >= INVARIANT_TOLERANCE):
            raise ShapeError("Rows are not standardized (mean 0, norm sqrt(D))")


@dataclass(frozen=True)
class NormalizedMatrix:
    """Profiles on the unit hypersphere; every row has Euclidean norm 1."""
    values: np.ndarray
    source_meter_ids: Tuple[str, ...]

    def __post_init__(self):
        values = _frozen_matrix(self.values)
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'source_meter_ids', _check_ids(self.source_meter_ids, values.shape[0]))
        norms = np.linalg.norm(values, axis=1)
        if np.any(np.abs(norms - 1.0) >= INVARIANT_TOLERANCE):
            raise ShapeError("Rows of a normalized matrix must have unit norm")

    @property
    def steps(self) -> int:
        return self.values.shape[1]


# ==================== INGESTION ====================

def _line_from_message(message: str) -> Optional[int]:
    match = re.search(r'line (\d+)', message)
    return int(match.group(1)) if match else None


def _read_frame(path: Path, fmt: CsvFormat) -> pd.DataFrame:
    try:
        return pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            skipinitialspace=True,
            encoding=fmt.encoding,
        )
    except pd.errors.EmptyDataError:
        raise ProfileParseError("file is empty", line_number=1)
    except pd.errors.ParserError as e:
        message = str(e)
        line_number = _line_from_message(message)
        if 'Expected' in message and 'fields' in message:
            raise StructuralError(f"inconsistent number of time steps ({message})", line_number)
        raise ProfileParseError(message, line_number)
    except UnicodeDecodeError as e:
        raise ProfileParseError(f"not valid {fmt.encoding} text: {e}")


def load_profiles(path: str, fmt: Optional[CsvFormat] = None) -> ProfileMatrix:
    """
    Read and validate a profile CSV file.

    The header is ``meter_id,t001,...,tD``. Rows with missing or non-finite
    readings are quarantined (not imputed) and listed on the result.

    Args:
        path: CSV file to read
        fmt: File layout (defaults to CsvFormat())

    Returns:
        ProfileMatrix: The clean rows plus the quarantine report

    Raises:
        ProfileParseError: Malformed CSV or a non-numeric reading
        StructuralError: Bad header or inconsistent number of time steps
        InsufficientDataError: Fewer than two clean rows
    """
    fmt = fmt or CsvFormat()
    file_path = Path(path)
    if not file_path.is_file():
        raise ProfileParseError(f"profile file not found: {file_path}")

    frame = _read_frame(file_path, fmt)
    columns = [str(c).strip() for c in frame.columns]
    if not columns or columns[0] != fmt.meter_id_column:
        raise StructuralError(f"first header field must be '{fmt.meter_id_column}'", line_number=1)
    time_columns = columns[1:]
    steps = len(time_columns)
    if steps < 2:
        raise StructuralError(f"need at least 2 time-step columns, found {steps}", line_number=1)
    frame.columns = columns

    short_rows = frame[time_columns].isna().any(axis=1).to_numpy()
    if short_rows.any():
        first = int(np.flatnonzero(short_rows)[0])
        raise StructuralError("row has fewer time steps than the header", line_number=first + 2)

    meter_ids = [str(m).strip() for m in frame[fmt.meter_id_column]]
    seen = set()
    for offset, meter_id in enumerate(meter_ids):
        if not meter_id:
            raise StructuralError("empty meter id", line_number=offset + 2)
        if meter_id in seen:
            raise StructuralError(f"duplicate meter id '{meter_id}'", line_number=offset + 2)
        seen.add(meter_id)

    raw = frame[time_columns].apply(lambda col: col.str.strip())
    numeric = raw.apply(pd.to_numeric, errors='coerce')
    missing = raw.apply(lambda col: col.str.lower().isin(MISSING_TOKENS))
    garbage = numeric.isna() & ~missing
    if garbage.to_numpy().any():
        row, col = np.argwhere(garbage.to_numpy())[0]
        raise ProfileParseError(
            f"non-numeric reading '{raw.iat[row, col]}' in column {time_columns[col]}",
            line_number=int(row) + 2,
        )

    values = numeric.to_numpy(dtype=np.float64)
    finite = np.isfinite(values)
    quarantine: List[QuarantineEntry] = []
    for row in np.flatnonzero(~finite.all(axis=1)):
        col = int(np.flatnonzero(~finite[row])[0])
        kind = 'missing' if raw.iat[row, col] == '' else 'non-finite'
        quarantine.append(QuarantineEntry(meter_ids[row], f"{kind} value in column {time_columns[col]}"))
        logger.warning("Quarantined meter %s: %s value in column %s", meter_ids[row], kind, time_columns[col])

    clean = finite.all(axis=1)
    if int(clean.sum()) < 2:
        raise InsufficientDataError(
            f"{path}: need at least 2 clean profiles, found {int(clean.sum())} "
            f"({len(quarantine)} quarantined)"
        )

    resolution = fmt.resolution_minutes
    if resolution is None:
        if MINUTES_PER_DAY % steps != 0:
            raise StructuralError(f"{steps} time steps do not divide a {MINUTES_PER_DAY}-minute day", 1)
        resolution = MINUTES_PER_DAY // steps
    elif resolution * steps != MINUTES_PER_DAY:
        raise StructuralError(f"{steps} steps of {resolution} min do not cover a full day", 1)

    logger.info("Loaded %d profiles x %d steps from %s (%d quarantined)",
                int(clean.sum()), steps, file_path, len(quarantine))
    return ProfileMatrix(
        values=values[clean],
        meter_ids=tuple(m for m, ok in zip(meter_ids, clean) if ok),
        resolution_minutes=resolution,
        quarantine=tuple(quarantine),
    )


def time_step_columns(steps: int) -> List[str]:
    """Header names t001..tD for the time-step columns."""
    width = max(3, len(str(steps)))
    return [f"t{j:0{width}d}" for j in range(1, steps + 1)]


def write_profiles(matrix: ProfileMatrix, path: str,
                   extra_columns: Optional[Dict[str, Sequence[Any]]] = None) -> None:
    """
    Write profiles in the ingestion CSV layout.

    Args:
        matrix: Profiles to write
        path: Output CSV file
        extra_columns: Optional trailing columns (e.g. source_s, cluster_label)
    """
    frame = pd.DataFrame(matrix.values, columns=time_step_columns(matrix.steps))
    frame.insert(0, 'meter_id', list(matrix.meter_ids))
    for name, column in (extra_columns or {}).items():
        frame[name] = list(column)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')


def quarantine_report(matrix: ProfileMatrix) -> List[Dict[str, str]]:
    """Quarantined meters as a JSON-ready list of {meter_id, reason}."""
    return [entry.to_dict() for entry in matrix.quarantine]


# ==================== TRANSFORMS ====================

def standardize(p: ProfileMatrix) -> StandardizedMatrix:
    """
    Standardize every row: (p_i - mean_i) / sigma_i with the population sigma.

    Args:
        p: Raw profiles

    Returns:
        StandardizedMatrix: Rows with mean 0 and norm sqrt(D)

    Raises:
        DegenerateRowError: If a row has sigma <= 1e-12
    """
    centered = p.values - p.values.mean(axis=1, keepdims=True)
    sigma = np.sqrt(np.mean(centered ** 2, axis=1))
    flat = np.flatnonzero(sigma <= VARIANCE_EPSILON)
    if flat.size:
        row = int(flat[0])
        raise DegenerateRowError(p.meter_ids[row], float(sigma[row]))
    return StandardizedMatrix(values=centered / sigma[:, None], source_meter_ids=p.meter_ids)


def normalize(s: StandardizedMatrix) -> NormalizedMatrix:
    """Scale standardized rows by 1/sqrt(D) onto the unit hypersphere."""
    steps = s.values.shape[1]
    return NormalizedMatrix(values=s.values / np.sqrt(steps), source_meter_ids=s.source_meter_ids)


def to_unit_sphere(p: ProfileMatrix) -> NormalizedMatrix:
    """Shortcut for normalize(standardize(p))."""
    return normalize(standardize(p))
