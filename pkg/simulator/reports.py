"""
CSV artifacts. Columns are always written in the declared order.
"""
import dataclasses
import logging
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import pandas as pd

logger = logging.getLogger(__name__)


def _as_dict(row: Any) -> dict:
    if dataclasses.is_dataclass(row):
        return dataclasses.asdict(row)
    return dict(row)


def rows_frame(rows: Iterable[Any], columns: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame([_as_dict(r) for r in rows], columns=list(columns))


def write_csv(rows: Iterable[Any], columns: Sequence[str], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = rows_frame(rows, columns)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)
