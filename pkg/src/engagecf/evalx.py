"""Importance-vs-change correlation harness and report rendering."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cfgan import Direction
from .data import FEATURE_NAMES, N_FEATURES, Dataset
from .errors import EngageError
from .explain import LimeConfig, lime_explain

STRONG, MODERATE = 0.6, 0.4

# categories measured on real (non-synthetic) recordings; shown next to results for comparison only
REFERENCE_PATTERN = {
    "GZ_DR": "STRONG_POSITIVE", "AM_CR": "STRONG_POSITIVE", "HD_TH": "STRONG_POSITIVE",
    "DIST_RW": "STRONG_POSITIVE", "YROT_LE": "STRONG_POSITIVE", "SDX_HD": "STRONG_POSITIVE",
    "SDXROT_HD": "STRONG_POSITIVE",
    "HD_AC": "MODERATE_POSITIVE", "YROT_RE": "MODERATE_POSITIVE", "XROT_RE": "MODERATE_POSITIVE",
    "TN_HD": "MODERATE_POSITIVE", "CONT_MOV": "MODERATE_POSITIVE", "EN_HA": "MODERATE_POSITIVE",
    "DIST_LW": "WEAK_POSITIVE", "XROT_LE": "WEAK_POSITIVE",
    "FO_RW": "STRONG_NEGATIVE", "VAL_F": "MODERATE_NEGATIVE", "FO_LW": "WEAK_NEGATIVE",
}


def pearson(x, y) -> float:
    """Product-moment correlation; raises ``zero-variance`` if either input is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EngageError("invalid-input", "pearson needs two 1-D sequences of equal length")
    if len(x) < 2:
        raise EngageError("invalid-input", "pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise EngageError("zero-variance", "correlation undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def categorize(r: float | None) -> str:
    """STRONG |r| >= 0.6, MODERATE 0.4 <= |r| < 0.6, WEAK below; r == 0 counts as positive."""
    if r is None:
        return "UNDEFINED"
    a = abs(r)
    strength = "STRONG" if a >= STRONG else "MODERATE" if a >= MODERATE else "WEAK"
    return f"{strength}_{'NEGATIVE' if r < 0 else 'POSITIVE'}"


@dataclass
class FeatureCorrelation:
    feature: str
    r: float | None
    category: str
    n: int
    mean_importance: float
    mean_abs_change: float


@dataclass
class CorrelationReport:
    features: list[FeatureCorrelation]
    flip_rate: float | None = None
    dataset: str = ""
    n_samples: int = 0
    lime: dict = field(default_factory=dict)

    def r_values(self) -> np.ndarray:
        return np.array([np.nan if f.r is None else f.r for f in self.features])

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_samples": self.n_samples,
            "flip_rate": self.flip_rate,
            "lime": self.lime,
            "thresholds": {"strong": STRONG, "moderate": MODERATE},
            "features": [asdict(f) for f in self.features],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CorrelationReport":
        return cls(
            features=[FeatureCorrelation(**f) for f in d["features"]],
            flip_rate=d.get("flip_rate"),
            dataset=d.get("dataset", ""),
            n_samples=d.get("n_samples", 0),
            lime=d.get("lime", {}),
        )


def sample_effects(cf_model, clf, Z: np.ndarray, lime_cfg: LimeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample LIME coefficients and counterfactual deltas, both ``(n, 18)``.

    Each sample is translated towards the class opposite its prediction and
    explained with seed ``lime_cfg.seed + i``.
    """
    pred = clf.predict_class(Z)
    imp = np.empty_like(Z)
    delta = np.empty_like(Z)
    for i, z in enumerate(Z):
        cf = cf_model.transform(z[None, :], Direction.towards(1 - int(pred[i])))[0]
        delta[i] = cf - z
        imp[i] = lime_explain(clf, z, lime_cfg.n_samples, lime_cfg.kernel_width, seed=lime_cfg.seed + i).coefficients
    return imp, delta


def importance_change_correlation(cf_model, clf, eval_set: Dataset | np.ndarray, lime_cfg: LimeConfig = LimeConfig(),
                                  dataset_id: str = "", flip: float | None = None) -> CorrelationReport:
    """Per-feature Pearson r between |LIME importance| and |counterfactual change| across samples."""
    Z = eval_set.X if isinstance(eval_set, Dataset) else np.atleast_2d(np.asarray(eval_set, dtype=np.float64))
    if len(Z) < 2:
        raise EngageError("invalid-input", "correlation needs at least 2 samples")
    imp, delta = sample_effects(cf_model, clf, Z, lime_cfg)
    a_imp, a_delta = np.abs(imp), np.abs(delta)
    feats = []
    for j, name in enumerate(FEATURE_NAMES):
        try:
            r = pearson(a_imp[:, j], a_delta[:, j])
        except EngageError as exc:
            if exc.code != "zero-variance":
                raise
            r = None
        feats.append(FeatureCorrelation(name, r, categorize(r), len(Z), float(a_imp[:, j].mean()),
                                        float(a_delta[:, j].mean())))
    return CorrelationReport(features=feats, flip_rate=flip, dataset=dataset_id, n_samples=len(Z),
                             lime=asdict(lime_cfg))


def summary(report: CorrelationReport) -> dict:
    r = report.r_values()
    defined = r[~np.isnan(r)]
    return {
        "median_r": float(np.median(defined)) if len(defined) else float("nan"),
        "n_abs_ge_moderate": int(np.sum(np.abs(defined) >= MODERATE)),
        "n_strong": int(np.sum(np.abs(defined) >= STRONG)),
        "n_undefined": int(np.isnan(r).sum()),
    }


def render_table(report: CorrelationReport, width: int = 20, reference: bool = True) -> str:
    """Text bar chart of r per feature, sorted by r descending."""
    rows = sorted(report.features, key=lambda f: -np.inf if f.r is None else -f.r)
    lines = [f"{'feature':<10} {'r':>7}  {'-1':<{width}}0{'+1':>{width}}  category"]
    for f in rows:
        if f.r is None:
            bar = " " * (2 * width + 1)
            rtxt = "  n/a"
        else:
            k = int(round(abs(f.r) * width))
            left = " " * (width - k) + "#" * k if f.r < 0 else " " * width
            right = "#" * k + " " * (width - k) if f.r >= 0 else " " * width
            bar = left + "|" + right
            rtxt = f"{f.r:+.3f}"
        ref = f"  (ref {REFERENCE_PATTERN[f.feature].lower()})" if reference else ""
        lines.append(f"{f.feature:<10} {rtxt:>7}  {bar}  {f.category.lower()}{ref}")
    s = summary(report)
    tail = f"median r = {s['median_r']:+.3f}; |r| >= {MODERATE}: {s['n_abs_ge_moderate']}/{N_FEATURES}"
    if report.flip_rate is not None:
        tail += f"; flip rate = {report.flip_rate:.4f}"
    lines.append(tail)
    return "\n".join(lines)
