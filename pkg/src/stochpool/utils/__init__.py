"""
Utility functions shared across stochpool.
"""

import csv
import logging
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

# Substream identifiers for SeedSequence spawn keys; every consumer draws
# from its own key.
STREAM_IDS = {
    "init": 1,
    "shuffle": 2,
    "pool": 3,
    "subsample": 4,
    "eval": 5,
    "visualize": 6,
}


def make_rng(master_seed: int, stream: str, *counters: int) -> np.random.Generator:
    """
    Derive an independent, counter-addressed random stream.

    Args:
        master_seed: Experiment master seed
        stream: Consumer name, one of STREAM_IDS
        *counters: Extra non-negative integers (epoch, step, layer, ...)

    Returns:
        A PCG64 generator fully determined by (master_seed, stream, counters)
    """
    if stream not in STREAM_IDS:
        raise KeyError(f"Unknown rng stream: {stream}")
    key = (STREAM_IDS[stream],) + tuple(int(c) for c in counters)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def format_number(value: Any) -> str:
    """
    Format a value for CSV output independent of the active locale.

    Floats use a period decimal and no grouping; integers and strings pass
    through unchanged.
    """
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6f}"
    return "" if value is None else str(value)


def write_csv(path: Union[str, Path], columns: Sequence[str],
              rows: Iterable[Mapping[str, Any]], append: bool = False) -> Path:
    """
    Write dict rows to a CSV file with a fixed column order.

    Args:
        path: Output file
        columns: Header, also the column order
        rows: Rows keyed by column name
        append: Append rows, writing the header only when the file is new

    Returns:
        The path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_header = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if write_header:
            writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(row.get(name)) for name in columns])
    logging.getLogger(__name__).debug(f"Wrote {path}")
    return path


def read_csv(path: Union[str, Path]) -> list:
    """Read a CSV file written by write_csv into a list of dicts of strings."""
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
