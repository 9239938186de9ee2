"""Feature-vector data model, z-score normalization, session splits and file IO."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import EngageError

FEATURE_NAMES: tuple[str, ...] = (
    "VAL_F",
    "GZ_DR",
    "HD_AC",
    "AM_CR",
    "HD_TH",
    "DIST_LW",
    "DIST_RW",
    "YROT_LE",
    "YROT_RE",
    "FO_LW",
    "FO_RW",
    "XROT_LE",
    "XROT_RE",
    "SDX_HD",
    "SDXROT_HD",
    "TN_HD",
    "CONT_MOV",
    "EN_HA",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

# fraction-valued features, constrained to [0, 1]
RATIO_FEATURES: tuple[str, ...] = ("GZ_DR", "AM_CR", "HD_TH", "TN_HD")
RATIO_MASK = np.array([name in RATIO_FEATURES for name in FEATURE_NAMES])

LOW, HIGH = 0, 1
LABEL_NAMES = ("low", "high")

STD_EPS = 1e-8


def label_from_name(name: str) -> int:
    try:
        return LABEL_NAMES.index(name.strip().lower())
    except ValueError:
        raise EngageError("invalid-file", f"unknown label {name!r}; expected 'low' or 'high'") from None


def check_feature_vector(fv, what: str = "feature vector") -> np.ndarray:
    """Coerce ``fv`` to a float64 (18,) array, rejecting wrong length or non-finite entries."""
    arr = np.asarray(fv, dtype=np.float64)
    if arr.shape != (N_FEATURES,):
        raise EngageError("invalid-input", f"{what} must have {N_FEATURES} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EngageError("invalid-input", f"{what} contains NaN/Inf")
    return arr


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
            raise EngageError("invalid-input", "NormStats needs 18 means and 18 stds")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
            raise EngageError("invalid-input", "NormStats must be finite with positive std")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))

    @property
    def clamped(self) -> np.ndarray:
        """Mask of columns whose std hit the epsilon floor (constant in the fit data)."""
        return self.std <= STD_EPS

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        try:
            return cls(mean=np.array(d["mean"], dtype=np.float64), std=np.array(d["std"], dtype=np.float64))
        except (KeyError, TypeError) as exc:
            raise EngageError("invalid-file", f"malformed NormStats: {exc}") from None


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    label: int
    session_id: str
    window_index: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample table.

    ``X`` holds raw feature values unless ``norm_stats`` is set, in which case
    ``X`` is already z-scored with those statistics.
    """

    X: np.ndarray
    y: np.ndarray
    session_ids: tuple[str, ...]
    window_index: np.ndarray
    norm_stats: NormStats | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64).reshape(-1, N_FEATURES)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        widx = np.asarray(self.window_index, dtype=np.int64).reshape(-1)
        sids = tuple(str(s) for s in self.session_ids)
        n = X.shape[0]
        if not (len(y) == len(sids) == len(widx) == n):
            raise EngageError("invalid-input", "Dataset columns have mismatched lengths")
        if not np.all(np.isfinite(X)):
            raise EngageError("invalid-input", "Dataset features contain NaN/Inf")
        if n and not np.all((y == LOW) | (y == HIGH)):
            raise EngageError("invalid-input", "labels must be 0 (low) or 1 (high)")
        if n and np.any(widx < 0):
            raise EngageError("invalid-input", "window_index must be non-negative")
        if self.norm_stats is None and n:
            ratios = X[:, RATIO_MASK]
            if np.any(ratios < 0) or np.any(ratios > 1):
                raise EngageError("invalid-input", "ratio features must lie in [0, 1]")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "window_index", _frozen(widx))
        object.__setattr__(self, "session_ids", sids)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    @property
    def samples(self) -> list[LabeledSample]:
        return [
            LabeledSample(self.X[i], int(self.y[i]), self.session_ids[i], int(self.window_index[i]))
            for i in range(len(self))
        ]

    @property
    def sessions(self) -> list[str]:
        """Distinct session ids in first-appearance order."""
        return list(dict.fromkeys(self.session_ids))

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], norm_stats: NormStats | None = None) -> "Dataset":
        return cls(
            X=np.array([s.features for s in samples], dtype=np.float64).reshape(-1, N_FEATURES),
            y=np.array([s.label for s in samples], dtype=np.int64),
            session_ids=tuple(s.session_id for s in samples),
            window_index=np.array([s.window_index for s in samples], dtype=np.int64),
            norm_stats=norm_stats,
        )

    def subset(self, mask_or_index) -> "Dataset":
        idx = np.arange(len(self))[mask_or_index]
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            session_ids=tuple(self.session_ids[i] for i in idx),
            window_index=self.window_index[idx],
            norm_stats=self.norm_stats,
        )

    def with_class(self, label: int) -> "Dataset":
        return self.subset(self.y == label)

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact equality of every column and of the attached stats."""
        return (
            np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
            and self.session_ids == other.session_ids
            and np.array_equal(self.window_index, other.window_index)
            and self.norm_stats == other.norm_stats
        )


def fit_normalizer(dataset: Dataset) -> NormStats:
    """Per-feature mean and population std, std floored at ``STD_EPS``."""
    if len(dataset) == 0:
        raise EngageError("empty-dataset", "cannot fit normalizer on an empty dataset")
    mean = dataset.X.mean(axis=0)
    std = np.maximum(dataset.X.std(axis=0), STD_EPS)
    return NormStats(mean=mean, std=std)


def normalize(fv, stats: NormStats) -> np.ndarray:
    return (np.asarray(fv, dtype=np.float64) - stats.mean) / stats.std


def denormalize(fv, stats: NormStats) -> np.ndarray:
    return np.asarray(fv, dtype=np.float64) * stats.std + stats.mean


def to_native(z, stats: NormStats) -> np.ndarray:
    """Denormalize and clip ratio features back into [0, 1]."""
    x = denormalize(z, stats)
    x[..., RATIO_MASK] = np.clip(x[..., RATIO_MASK], 0.0, 1.0)
    return x


def normalize_dataset(dataset: Dataset, stats: NormStats) -> Dataset:
    if dataset.norm_stats is not None:
        raise EngageError("invalid-input", "dataset is already normalized")
    return Dataset(normalize(dataset.X, stats), dataset.y, dataset.session_ids, dataset.window_index,
                   norm_stats=stats)


def split_by_session(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random session-disjoint train/test partition.

    The number of training sessions is ``round(train_fraction * n_sessions)``
    clamped to ``[1, n_sessions - 1]``; session ids are sorted before the
    seeded shuffle so the result does not depend on row order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise EngageError("invalid-input", "train_fraction must be in (0, 1)")
    sessions = sorted(set(dataset.session_ids))
    if len(sessions) < 2:
        raise EngageError("insufficient-sessions", f"need at least 2 sessions, got {len(sessions)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sessions))
    n_train = min(max(int(round(train_fraction * len(sessions))), 1), len(sessions) - 1)
    train_sessions = {sessions[i] for i in order[:n_train]}
    in_train = np.array([s in train_sessions for s in dataset.session_ids], dtype=bool)
    return dataset.subset(in_train), dataset.subset(~in_train)


# -- persistence ---------------------------------------------------------------

CSV_HEADER = ("session_id", "window_index", "label") + FEATURE_NAMES


def dataset_to_csv(dataset: Dataset) -> str:
    if dataset.norm_stats is not None:
        raise EngageError("invalid-input", "only raw (unnormalized) datasets are written as CSV")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for i in range(len(dataset)):
        writer.writerow(
            [dataset.session_ids[i], int(dataset.window_index[i]), LABEL_NAMES[dataset.y[i]]]
            + [repr(float(v)) for v in dataset.X[i]]
        )
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EngageError("invalid-file", "empty CSV") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise EngageError("invalid-file", "CSV header does not match the expected feature layout")
    rows = [r for r in reader if r]
    try:
        X = np.array([[float(v) for v in r[3:]] for r in rows], dtype=np.float64).reshape(-1, N_FEATURES)
        y = np.array([label_from_name(r[2]) for r in rows], dtype=np.int64)
        widx = np.array([int(r[1]) for r in rows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise EngageError("invalid-file", f"malformed CSV row: {exc}") from None
    return Dataset(X=X, y=y, session_ids=tuple(r[0] for r in rows), window_index=widx)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8", newline="\n")


def load_dataset(path) -> Dataset:
    return dataset_from_csv(Path(path).read_text(encoding="utf-8"))


def save_norm_stats(stats: NormStats, path) -> None:
    Path(path).write_text(json.dumps(stats.to_dict()) + "\n", encoding="utf-8")


def load_norm_stats(path) -> NormStats:
    return NormStats.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
