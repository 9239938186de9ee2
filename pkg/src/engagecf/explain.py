"""LIME for tabular inputs: Gaussian perturbations, RBF proximity weights, weighted ridge surrogate."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import FEATURE_NAMES, N_FEATURES, check_feature_vector
from .errors import EngageError

DEFAULT_N_SAMPLES = 1000
DEFAULT_KERNEL_WIDTH = 0.75 * np.sqrt(N_FEATURES)
RIDGE = 1e-6


@dataclass(frozen=True)
class LimeConfig:
    n_samples: int = DEFAULT_N_SAMPLES
    kernel_width: float = float(DEFAULT_KERNEL_WIDTH)
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 100:
            raise EngageError("invalid-config", "LimeConfig.n_samples must be >= 100")
        if not self.kernel_width > 0:
            raise EngageError("invalid-config", "LimeConfig.kernel_width must be > 0")


@dataclass(frozen=True, eq=False)
class ImportanceScores:
    coefficients: np.ndarray
    target_class: int
    intercept: float
    n_samples: int
    kernel_width: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "scores": [{"feature_name": n, "coefficient": float(c)} for n, c in zip(FEATURE_NAMES, self.coefficients)],
            "metadata": {
                "target_class": self.target_class,
                "intercept": self.intercept,
                "n_samples": self.n_samples,
                "kernel_width": self.kernel_width,
                "seed": self.seed,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def lime_explain(
    clf,
    fv,
    n_samples: int = DEFAULT_N_SAMPLES,
    kernel_width: float = DEFAULT_KERNEL_WIDTH,
    seed: int = 0,
    target_class: int | None = None,
    scale=None,
) -> ImportanceScores:
    """Local linear importance of each feature for one normalized instance.

    Args:
        clf: anything with ``predict_proba(Z) -> (n, 2)`` on normalized inputs.
        fv: the normalized instance.
        target_class: class whose probability is explained; defaults to the
            class ``clf`` predicts for ``fv``.
        scale: per-feature perturbation std in normalized units (default 1,
            i.e. the training std).  Features with scale 0 are left out of the
            surrogate and get a coefficient of exactly 0.  If omitted and
            ``clf`` carries ``norm_stats``, columns that were constant in
            training get scale 0.
    """
    z = check_feature_vector(fv)
    if n_samples < 100:
        raise EngageError("invalid-input", "n_samples must be >= 100")
    if not kernel_width > 0:
        raise EngageError("invalid-input", "kernel_width must be > 0")
    if scale is None:
        stats = getattr(clf, "norm_stats", None)
        scale = np.where(stats.clamped, 0.0, 1.0) if stats is not None else np.ones(N_FEATURES)
    scale = np.asarray(scale, dtype=np.float64)

    if target_class is None:
        target_class = int(np.argmax(clf.predict_proba(z[None, :])[0]))

    rng = np.random.default_rng(seed)
    offsets = rng.standard_normal((n_samples, N_FEATURES)) * scale
    target = clf.predict_proba(z[None, :] + offsets)[:, target_class]
    d2 = np.sum(offsets * offsets, axis=1)
    w = np.exp(-d2 / kernel_width**2)

    active = scale > 0
    A = np.hstack([np.ones((n_samples, 1)), offsets[:, active]])
    AtW = A.T * w
    gram = AtW @ A
    gram[1:, 1:] += RIDGE * np.eye(int(active.sum()))
    if w.sum() <= 1e-300 or not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e12:
        raise EngageError("singular-surrogate", "degenerate surrogate weights; try more samples or a wider kernel")
    beta = np.linalg.solve(gram, AtW @ target)

    coef = np.zeros(N_FEATURES)
    coef[active] = beta[1:]
    return ImportanceScores(coefficients=coef, target_class=int(target_class), intercept=float(beta[0]),
                            n_samples=int(n_samples), kernel_width=float(kernel_width), seed=int(seed))
