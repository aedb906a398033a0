"""
Tabular data ingestion and binarization into an ordered proposition set.

A Dataset holds typed feature columns plus a real target. Propositions are
the atomic threshold/equality tests rule antecedents are built from; their
extents (covered row indices) are computed once here and shared read-only by
every learner.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"

REGRESSION = "regression"
CLASSIFICATION = "classification"
TASKS = (REGRESSION, CLASSIFICATION)

DEFAULT_MAX_THRESHOLDS = 32


class DatasetError(ValueError):
    """Raised when a data file or table cannot be turned into a Dataset"""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    values: np.ndarray

    @property
    def is_numeric(self) -> bool:
        return self.kind == NUMERIC

    def categories(self) -> List[str]:
        if self.is_numeric:
            return []
        return sorted(set(self.values.tolist()))


@dataclass(frozen=True)
class Dataset:
    columns: Tuple[Column, ...]
    target: np.ndarray
    task: str = REGRESSION
    target_name: str = "y"

    def __post_init__(self):
        if self.task not in TASKS:
            raise DatasetError(f"Unknown task '{self.task}', expected one of {TASKS}")
        n = len(self.target)
        for col in self.columns:
            if len(col.values) != n:
                raise DatasetError(f"Column '{col.name}' has {len(col.values)} entries, target has {n}")
        if self.task == CLASSIFICATION and not np.isin(self.target, (-1.0, 1.0)).all():
            raise DatasetError("Classification targets must be encoded in {-1, +1}")

    @property
    def n(self) -> int:
        return len(self.target)

    @property
    def names(self) -> List[str]:
        return [col.name for col in self.columns]

    def column(self, name: str) -> Column:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        columns = tuple(Column(col.name, col.kind, col.values[rows]) for col in self.columns)
        return Dataset(columns, self.target[rows], self.task, self.target_name)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({col.name: col.values for col in self.columns})
        frame[self.target_name] = self.target
        return frame


def _parse_column(name: str, raw: pd.Series) -> Column:
    """Numeric when every entry parses as a real, categorical otherwise"""
    parsed = pd.to_numeric(raw, errors="coerce")
    if parsed.isna().any():
        return Column(name, CATEGORICAL, raw.to_numpy(dtype=object).astype(str))
    return Column(name, NUMERIC, parsed.to_numpy(dtype=np.float64))


def parse_columns(frame: pd.DataFrame) -> List[Column]:
    """Type every column of a string-valued frame"""
    return [_parse_column(name, frame[name].astype(str)) for name in frame.columns]


def _encode_target(raw: pd.Series, task: str, positive_label: Optional[str]) -> np.ndarray:
    if task == REGRESSION:
        parsed = pd.to_numeric(raw, errors="coerce")
        bad = parsed.isna().to_numpy().nonzero()[0]
        if len(bad):
            raise DatasetError(f"Non-numeric regression target '{raw.iloc[bad[0]]}' at row {bad[0] + 1}")
        return parsed.to_numpy(dtype=np.float64)

    labels = sorted(set(raw.tolist()))
    if len(labels) != 2:
        raise DatasetError(f"Classification target must have exactly 2 distinct values, found {len(labels)}: {labels[:5]}")
    if positive_label is None:
        positive_label = labels[-1]
    elif positive_label not in labels:
        raise DatasetError(f"Positive label '{positive_label}' not among target values {labels}")
    return np.where(raw.to_numpy() == positive_label, 1.0, -1.0)


def dataset_from_frame(frame: pd.DataFrame, target_name: str, task: str = REGRESSION,
                       positive_label: Optional[str] = None) -> Dataset:
    """Type the columns of a string-valued frame and encode its target"""
    if task not in TASKS:
        raise DatasetError(f"Unknown task '{task}', expected one of {TASKS}")
    if target_name not in frame.columns:
        raise DatasetError(f"target column not found: '{target_name}'")

    frame = frame.astype(str)
    for col_pos, name in enumerate(frame.columns):
        blank = (frame[name].str.strip() == "").to_numpy().nonzero()[0]
        if len(blank):
            # +2: header line plus one-based numbering
            raise DatasetError(f"Missing value in column '{name}' (column {col_pos + 1}) at line {blank[0] + 2}")

    columns = tuple(_parse_column(name, frame[name]) for name in frame.columns if name != target_name)
    target = _encode_target(frame[target_name], task, positive_label)
    return Dataset(columns, target, task, target_name)


def load_csv(path: Union[str, Path], target_name: str, task: str = REGRESSION,
             positive_label: Optional[str] = None) -> Dataset:
    """Load a headed, comma-separated UTF-8 file into a typed Dataset"""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Data file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[], encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"Could not parse {path}: {e}") from e

    ds = dataset_from_frame(frame, target_name, task, positive_label)
    logger.info(f"Loaded {path.name}: {ds.n} rows, {len(ds.columns)} features, task={task}")
    return ds


class Op(str, Enum):
    LEQ = "<="
    GT = ">"
    EQ = "=="
    NEQ = "!="

    def holds(self, values: np.ndarray, threshold) -> np.ndarray:
        if self is Op.LEQ:
            return values <= threshold
        if self is Op.GT:
            return values > threshold
        if self is Op.EQ:
            return values == threshold
        return values != threshold


@dataclass(frozen=True)
class Proposition:
    feature: int
    op: Op
    threshold: Union[float, str]
    extent: np.ndarray = field(repr=False, compare=False)
    feature_name: str = ""

    def holds(self, values: np.ndarray) -> np.ndarray:
        return self.op.holds(values, self.threshold)

    def describe(self) -> str:
        value = f"{self.threshold:g}" if isinstance(self.threshold, float) else self.threshold
        return f"{self.feature_name or f'x{self.feature}'}{self.op.value}{value}"


@dataclass(frozen=True)
class PropositionSet:
    props: Tuple[Proposition, ...]
    n: int

    def __len__(self) -> int:
        return len(self.props)

    def __getitem__(self, index: int) -> Proposition:
        return self.props[index]

    def __iter__(self):
        return iter(self.props)

    @cached_property
    def masks(self) -> np.ndarray:
        """Boolean coverage matrix, one row per proposition"""
        masks = np.zeros((len(self.props), self.n), dtype=bool)
        for idx, prop in enumerate(self.props):
            masks[idx, prop.extent] = True
        return masks


def _select_thresholds(values: np.ndarray, max_thresholds: Optional[int]) -> np.ndarray:
    unique = np.unique(values)
    if max_thresholds is None or len(unique) <= max_thresholds:
        return unique
    # inner quantile levels; inverted_cdf keeps every threshold an observed value
    levels = np.linspace(0.0, 1.0, max_thresholds + 2)[1:-1]
    return np.unique(np.quantile(values, levels, method="inverted_cdf"))


def build_propositions(ds: Dataset, max_thresholds: Optional[int] = DEFAULT_MAX_THRESHOLDS) -> PropositionSet:
    """
    Binarize every feature into propositions with precomputed extents.

    Order: features in column order; per numeric feature LEQ ascending then GT
    ascending; per categorical feature EQ then NEQ in category order. The order
    is fixed here and never changes afterwards.
    """
    if max_thresholds is not None and max_thresholds < 1:
        raise DatasetError(f"max_thresholds must be positive, got {max_thresholds}")

    props: List[Proposition] = []
    dropped = 0
    for feature, col in enumerate(ds.columns):
        if col.is_numeric:
            thresholds = [float(v) for v in _select_thresholds(col.values, max_thresholds)]
            candidates = [(Op.LEQ, v) for v in thresholds] + [(Op.GT, v) for v in thresholds]
        else:
            categories = col.categories()
            candidates = [(Op.EQ, c) for c in categories] + [(Op.NEQ, c) for c in categories]

        for op, threshold in candidates:
            extent = np.flatnonzero(op.holds(col.values, threshold)).astype(np.int64)
            if len(extent) == 0 or len(extent) == ds.n:
                dropped += 1
                continue
            props.append(Proposition(feature, op, threshold, extent, col.name))

    logger.info(f"Built {len(props)} propositions from {len(ds.columns)} features ({dropped} trivial dropped)")
    return PropositionSet(tuple(props), ds.n)


def intersect_extents(a: Sequence[int], b: Sequence[int]) -> np.ndarray:
    """Intersection of two strictly increasing index lists, strictly increasing"""
    return np.intersect1d(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64), assume_unique=True)
