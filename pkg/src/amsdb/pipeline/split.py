"""Leave-one-year-out partitioning of a dataset index."""
from __future__ import annotations

from typing import Tuple

from ..errors import ParameterError
from .io import DatasetIndex


def leave_one_out_split(index: DatasetIndex, held_out_year) -> Tuple[DatasetIndex, DatasetIndex]:
    """``(train, test)`` where test holds exactly the records tagged ``held_out_year``."""
    year = str(held_out_year)
    if year not in index.years:
        raise ParameterError(f"year {year!r} has no images; known years: {', '.join(index.years) or 'none'}")
    test = [r for r in index if r.year == year]
    train = [r for r in index if r.year != year]
    return DatasetIndex(train), DatasetIndex(test)
