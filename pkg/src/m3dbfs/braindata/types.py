from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import PreprocessingError, ShapeError

FUNCTIONAL = "functional"
STRUCTURAL = "structural"
SC = "SC"
FC = "FC"

_SYM_TOL = 1e-9


@dataclass(eq=False)
class TimeSeries:
    """Regional BOLD-like signals, one row per region (N x T)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"time series must be N x T, got shape {self.values.shape}")
        if self.values.shape[1] < 2:
            raise PreprocessingError("time series needs at least 2 timepoints")

    @property
    def region_count(self) -> int:
        return self.values.shape[0]

    @property
    def timepoint_count(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return isinstance(other, TimeSeries) and np.array_equal(self.values, other.values)


@dataclass(eq=False)
class ConnectivityMatrix:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"connectivity matrix must be square, got {v.shape}")
        if self.kind not in (FUNCTIONAL, STRUCTURAL):
            raise ValueError(f"unknown connectivity kind {self.kind!r}")
        if not np.all(np.isfinite(v)):
            raise PreprocessingError("connectivity matrix has non-finite entries")
        if np.max(np.abs(v - v.T), initial=0.0) > _SYM_TOL:
            raise PreprocessingError("connectivity matrix is not symmetric")
        if self.kind == FUNCTIONAL:
            if np.any(np.abs(np.diag(v) - 1.0) > _SYM_TOL) or np.any(np.abs(v) > 1.0 + _SYM_TOL):
                raise PreprocessingError(
                    "functional matrix needs unit diagonal and entries in [-1, 1]"
                )
        elif np.any(v < 0):
            raise PreprocessingError("structural matrix has negative entries")
        self.values = v

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, ConnectivityMatrix)
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )


@dataclass(eq=False)
class BrainGraph:
    """One modality of one subject: adjacency A (N x N) and node features X (N x d)."""

    modality: str
    adjacency: np.ndarray
    features: np.ndarray
    matrix: ConnectivityMatrix | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        x = np.asarray(self.features, dtype=np.float64)
        if self.modality not in (SC, FC):
            raise ValueError(f"unknown modality {self.modality!r}")
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"adjacency must be square, got {a.shape}")
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise ShapeError(f"features {x.shape} do not match adjacency {a.shape}")
        if np.any(a < 0) or np.max(np.abs(a - a.T), initial=0.0) > _SYM_TOL:
            raise ShapeError("adjacency must be symmetric and nonnegative")
        if np.any(np.diag(a) != 0):
            raise ShapeError("adjacency must have a zero diagonal")
        self.adjacency = a
        self.features = x

    @property
    def region_count(self) -> int:
        return self.adjacency.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, BrainGraph)
            and self.modality == other.modality
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.features, other.features)
        )


@dataclass(eq=False)
class Sample:
    id: str
    sc: BrainGraph
    fc: BrainGraph
    label: int
    timeseries: TimeSeries | None = None

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.sc.region_count != self.fc.region_count:
            raise ShapeError(
                f"sample {self.id}: SC has {self.sc.region_count} regions, "
                f"FC has {self.fc.region_count}"
            )
        self.label = int(self.label)

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and self.id == other.id
            and self.label == other.label
            and self.sc == other.sc
            and self.fc == other.fc
            and self.timeseries == other.timeseries
        )


@dataclass(eq=False)
class Dataset:
    samples: list[Sample]

    def __post_init__(self):
        self.samples = list(self.samples)
        if not self.samples:
            raise ValueError("dataset is empty")
        sizes = {s.sc.region_count for s in self.samples}
        if len(sizes) != 1:
            raise ShapeError(f"inconsistent region counts across samples: {sorted(sizes)}")

    @property
    def region_count(self) -> int:
        return self.samples[0].sc.region_count

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[int(i)] for i in indices])

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and len(self) == len(other)
            and all(a == b for a, b in zip(self.samples, other.samples))
        )
