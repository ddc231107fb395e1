"""
Reading and writing univariate samples.

Two input formats are understood: whitespace separated numbers (any number
per line, '#' starts a comment) and CSV with a header row, from which one
column is taken by name or zero-based index.
"""
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import csv
import logging
import math

from nmsym.sample import DegenerateSampleError, Sample

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class DataFileError(ValueError):
    """Input file could not be turned into a sample"""


class DataFormat(Enum):
    WHITESPACE = "whitespace"
    CSV = "csv"


def _parse_token(token: str, path, line_number: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DataFileError(f"{path}:{line_number}: cannot parse '{token}' as a number") from None
    if not math.isfinite(value):
        raise DataFileError(f"{path}:{line_number}: non-finite value '{token}'")
    return value


def _read_whitespace(path: Path) -> List[float]:
    values = []
    with path.open("r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            content = line.split("#", 1)[0]
            for token in content.split():
                values.append(_parse_token(token, path, line_number))
    return values


def _column_index(header: List[str], column: Union[str, int, None], path: Path) -> int:
    if column is None:
        return 0
    if isinstance(column, int) or str(column).isdigit():
        index = int(column)
        if index >= len(header):
            raise DataFileError(f"{path}: column index {index} out of range, header has {len(header)} columns")
        return index
    names = [name.strip() for name in header]
    if column not in names:
        raise DataFileError(f"{path}: no column '{column}' in header {names}")
    return names.index(column)


def _read_csv(path: Path, column: Union[str, int, None]) -> List[float]:
    values = []
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return values
        index = _column_index(header, column, path)
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if index >= len(row):
                raise DataFileError(f"{path}:{reader.line_num}: row has no column {index}")
            cell = row[index].strip()
            if not cell:
                raise DataFileError(f"{path}:{reader.line_num}: empty cell in column {index}")
            values.append(_parse_token(cell, path, reader.line_num))
    return values


def parse_data_file(path: PathLike, fmt: Union[DataFormat, str] = DataFormat.WHITESPACE,
                    column: Optional[Union[str, int]] = None) -> Sample:
    """
    Read a sample from a text file.

    Args:
        path (str or Path): Input file, UTF-8.
        fmt (DataFormat or str, optional): 'whitespace' or 'csv'. Defaults to whitespace.
        column (str or int, optional): CSV column name or zero-based index. Defaults to the first.

    Returns:
        Sample: Values in file order.

    Raises:
        DataFileError: On an unparseable or non-finite token (with its line
            number), a missing column, an unreadable file or an empty input.
    """
    path = Path(path)
    fmt = DataFormat(fmt)
    try:
        if fmt is DataFormat.CSV:
            values = _read_csv(path, column)
        else:
            values = _read_whitespace(path)
    except OSError as e:
        raise DataFileError(f"Cannot read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataFileError(f"{path} is not valid UTF-8: {e}") from e

    if not values:
        raise DataFileError(f"{path}: no values found")
    logger.debug(f"Read {len(values)} values from {path}")
    try:
        return Sample.from_values(values)
    except DegenerateSampleError as e:
        raise DataFileError(f"{path}: {e}") from e


def write_sample(sample: Sample, path: PathLike):
    """Write one value per line with 17 significant digits, so reading back is exact."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for value in sample.values:
            f.write(f"{value:.17g}\n")
