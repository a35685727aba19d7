import json
import logging
import math
import os
import tempfile
from enum import Enum
from typing import Any, Dict

import numpy as np
import pandas as pd

from analysis.estimator import Sample
from analysis.inference import WQuantileTable
from errors import DataError, ParseError, TableError

logger = logging.getLogger(__name__)

TABLE_TITLE = "# sphericity W-quantile table"
TABLE_COLUMNS = "level\tquantile"
_TABLE_KEYS = ("version", "generator", "seed", "paths", "steps", "block_paths")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except (TypeError, ValueError):
        return False
    return True


def ingest_csv(path: str) -> Sample:
    """Read a numeric CSV (one observation per row) into a Sample

    A first row with any non-numeric cell is taken as a header. Row and column
    numbers in errors are 1-based and count data rows only.
    """
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ParseError(f"input file is empty: {path}")
    except pd.errors.ParserError as e:
        raise ParseError(f"input file is not a rectangular table: {e}")

    if len(raw) and not all(_is_number(cell) for cell in raw.iloc[0]):
        logger.info("treating first row of %s as a header", path)
        raw = raw.iloc[1:].reset_index(drop=True)
    if raw.empty:
        raise ParseError(f"input file has no data rows: {path}")

    values = raw.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce")).to_numpy(dtype=float)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        row, col = bad[0]
        cell = raw.iat[row, col]
        raise ParseError(f"invalid numeric value '{cell}'", row=int(row) + 1, column=int(col) + 1)

    sample = Sample(values)
    logger.info("loaded %d observations of dimension %d from %s", sample.n, sample.p, path)
    return sample


def ingest_upload(data: bytes, suffix: str = ".csv") -> Sample:
    """ingest_csv on in-memory bytes, staged in a temporary file that is removed afterwards"""
    with tempfile.NamedTemporaryFile(suffix=suffix) as handle:
        handle.write(data)
        handle.flush()
        return ingest_csv(handle.name)


def write_quantile_table(table: WQuantileTable, path: str) -> None:
    """Text table with a '# key: value' header; floats written with repr so they read back exactly"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    metadata = table.metadata()
    lines = [TABLE_TITLE]
    lines += [f"# {key}: {metadata[key]}" for key in _TABLE_KEYS]
    lines.append(TABLE_COLUMNS)
    lines += [f"{level!r}\t{quantile!r}" for level, quantile in zip(table.levels, table.quantiles)]
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info("wrote W quantile table with %d levels to %s", len(table.levels), path)


def read_quantile_table(path: str) -> WQuantileTable:
    if not os.path.exists(path):
        raise TableError(f"W quantile table not found: {path}")
    metadata: Dict[str, str] = {}
    levels, quantiles = [], []
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line == TABLE_TITLE or line == TABLE_COLUMNS:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                metadata[key.strip()] = value.strip()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(_is_number(part) for part in parts):
                raise TableError(f"malformed W table line {number} in {path}")
            levels.append(float(parts[0]))
            quantiles.append(float(parts[1]))

    missing = [key for key in _TABLE_KEYS if key not in metadata]
    if missing:
        raise TableError(f"W table {path} lacks header fields {missing}")
    return WQuantileTable(
        levels=tuple(levels),
        quantiles=tuple(quantiles),
        paths=int(metadata["paths"]),
        steps=int(metadata["steps"]),
        seed=int(metadata["seed"]),
        block_paths=int(metadata["block_paths"]),
        version=metadata["version"],
        generator=metadata["generator"],
    )


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def to_json(data: Dict) -> str:
    """Stable JSON (sorted keys, non-finite floats as null)"""
    def clean(value):
        if isinstance(value, float) and not math.isfinite(value):
            return None
        if isinstance(value, dict):
            return {str(k): clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        return value

    return json.dumps(clean(data), indent=2, sort_keys=True, default=_jsonable)
