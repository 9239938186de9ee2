"""Ranked feature deltas and template-based textual recommendations.

A template file maps every feature to an ordered list of value bins.  Each bin
is a half-open interval ``[low, high)`` in native units (``None`` means
unbounded; the last bin also includes its finite upper edge), a direction
condition and a text line.  A delta is rendered with the first bin whose
interval contains the matched value (the original value by default) and whose
direction condition agrees with the sign of the change.

Template JSON schema::

    {
      "version": "templates-v1",
      "match_on": "original" | "counterfactual",
      "features": {
        "HD_AC": [{"low": null, "high": 0.3, "direction": "increase", "text": "..."}, ...],
        ...
      }
    }
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .data import FEATURE_NAMES, N_FEATURES, NormStats, check_feature_vector, normalize
from .errors import EngageError

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "templates-v1"
INCREASE, DECREASE, ANY = "increase", "decrease", "any"
DIRECTIONS = (INCREASE, DECREASE, ANY)
MATCH_MODES = ("original", "counterfactual")

# valid native range per feature (None = unbounded); template bins must cover it
_ANGLE = (-math.pi, math.pi)
FEATURE_RANGES: dict[str, tuple[float | None, float | None]] = {
    "VAL_F": (-1.0, 1.0),
    "GZ_DR": (0.0, 1.0),
    "HD_AC": (0.0, None),
    "AM_CR": (0.0, 1.0),
    "HD_TH": (0.0, 1.0),
    "DIST_LW": (0.0, None),
    "DIST_RW": (0.0, None),
    "YROT_LE": _ANGLE,
    "YROT_RE": _ANGLE,
    "FO_LW": (0.0, None),
    "FO_RW": (0.0, None),
    "XROT_LE": _ANGLE,
    "XROT_RE": _ANGLE,
    "SDX_HD": (0.0, None),
    "SDXROT_HD": (0.0, None),
    "TN_HD": (0.0, 1.0),
    "CONT_MOV": (0.0, None),
    "EN_HA": (0.0, None),
}


@dataclass(frozen=True)
class FeatureDelta:
    """One feature's change; ``rank_key`` is ``|change|`` in normalized units."""

    feature: str
    original: float
    counterfactual: float
    change: float
    rank_key: float

    @property
    def direction(self) -> str:
        return INCREASE if self.change > 0 else DECREASE if self.change < 0 else ANY

    def to_dict(self) -> dict:
        return asdict(self)


def top_k_changes(original, cf, k: int, stats: NormStats) -> list[FeatureDelta]:
    """The ``k`` features with the largest normalized change from ``original`` to ``cf``.

    Both vectors are in native units.  Ties (including the all-zero case) keep
    the fixed feature order, because the sort is stable.
    """
    x = check_feature_vector(original, "original vector")
    c = check_feature_vector(cf, "counterfactual vector")
    if not 1 <= int(k) <= N_FEATURES:
        raise EngageError("invalid-input", f"k must be in [1, {N_FEATURES}], got {k}")
    key = np.abs(normalize(c, stats) - normalize(x, stats))
    order = np.argsort(-key, kind="stable")[: int(k)]
    return [
        FeatureDelta(FEATURE_NAMES[j], float(x[j]), float(c[j]), float(c[j] - x[j]), float(key[j]))
        for j in order
    ]


@dataclass(frozen=True)
class Bin:
    low: float | None
    high: float | None
    direction: str
    text: str

    def contains(self, value: float, closed_high: bool = False) -> bool:
        if self.low is not None and value < self.low:
            return False
        if self.high is None:
            return True
        return value <= self.high if closed_high else value < self.high

    def accepts(self, direction: str) -> bool:
        return self.direction == ANY or self.direction == direction

    def to_dict(self) -> dict:
        return {"low": self.low, "high": self.high, "direction": self.direction, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict, feature: str = "?") -> "Bin":
        try:
            low, high = d["low"], d["high"]
            b = cls(
                low=None if low is None else float(low),
                high=None if high is None else float(high),
                direction=str(d["direction"]).lower(),
                text=str(d["text"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise EngageError("invalid-template", f"{feature}: malformed bin {d!r} ({exc})") from None
        return b


@dataclass(frozen=True)
class TemplateConfig:
    bins: dict[str, tuple[Bin, ...]]
    match_on: str = "original"

    def __post_init__(self):
        if self.match_on not in MATCH_MODES:
            raise EngageError("invalid-template", f"match_on must be one of {MATCH_MODES}, got {self.match_on!r}")
        for feature, bins in self.bins.items():
            _validate_bins(feature, bins)

    def to_dict(self) -> dict:
        return {
            "version": TEMPLATE_VERSION,
            "match_on": self.match_on,
            "features": {f: [b.to_dict() for b in bins] for f, bins in self.bins.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateConfig":
        if not isinstance(d, dict) or d.get("version") != TEMPLATE_VERSION:
            raise EngageError("invalid-template", f"expected template version {TEMPLATE_VERSION!r}")
        feats = d.get("features")
        if not isinstance(feats, dict):
            raise EngageError("invalid-template", "'features' must be an object")
        bins = {}
        for feature, entries in feats.items():
            if not isinstance(entries, list):
                raise EngageError("invalid-template", f"{feature}: bins must be a list")
            bins[feature] = tuple(Bin.from_dict(e, feature) for e in entries)
        return cls(bins=bins, match_on=d.get("match_on", "original"))

    @classmethod
    def from_json(cls, text: str) -> "TemplateConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise EngageError("invalid-template", f"template file is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def lookup(self, delta: FeatureDelta) -> Bin | None:
        """The bin that renders ``delta``, or ``None`` when no bin matches."""
        if delta.feature not in self.bins:
            raise EngageError("missing-template", f"no template entry for feature {delta.feature}")
        bins = self.bins[delta.feature]
        value = delta.original if self.match_on == "original" else delta.counterfactual
        for i, b in enumerate(bins):
            if b.contains(value, closed_high=i == len(bins) - 1) and b.accepts(delta.direction):
                return b
        return None


def _validate_bins(feature: str, bins: tuple[Bin, ...]) -> None:
    if feature not in FEATURE_RANGES:
        raise EngageError("invalid-template", f"unknown feature {feature!r}")
    if not bins:
        raise EngageError("invalid-template", f"{feature}: at least one bin is required")
    for b in bins:
        if b.direction not in DIRECTIONS:
            raise EngageError("invalid-template", f"{feature}: direction must be one of {DIRECTIONS}, got {b.direction!r}")
        if b.low is not None and b.high is not None and not b.low < b.high:
            raise EngageError("invalid-template", f"{feature}: empty interval [{b.low}, {b.high})")
        if not b.text.strip():
            raise EngageError("invalid-template", f"{feature}: empty text")
    for prev, nxt in zip(bins[:-1], bins[1:]):
        if prev.high is None or nxt.low is None or prev.high != nxt.low:
            raise EngageError("invalid-template",
                              f"{feature}: bins must be sorted, contiguous and non-overlapping "
                              f"(got high {prev.high} followed by low {nxt.low})")
    lo, hi = FEATURE_RANGES[feature]
    first, last = bins[0].low, bins[-1].high
    if first is not None and (lo is None or first > lo):
        raise EngageError("invalid-template", f"{feature}: bins start at {first}, range starts at {lo}")
    if last is not None and (hi is None or last < hi):
        raise EngageError("invalid-template", f"{feature}: bins end at {last}, range ends at {hi}")


def render(deltas: list[FeatureDelta], templates: TemplateConfig) -> list[str]:
    """One recommendation line per matching delta, in ranking order."""
    lines = []
    for d in deltas:
        b = templates.lookup(d)
        if b is None:
            log.info("no template bin for %s (original %.6g, counterfactual %.6g, %s); skipped",
                     d.feature, d.original, d.counterfactual, d.direction)
            continue
        lines.append(b.text)
    return lines


def default_templates() -> TemplateConfig:
    text = resources.files("engagecf").joinpath("templates/default.json").read_text(encoding="utf-8")
    return TemplateConfig.from_json(text)


def load_templates(path=None) -> TemplateConfig:
    if path is None:
        return default_templates()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise EngageError("io-error", f"cannot read template file {path}: {exc}") from None
    return TemplateConfig.from_json(text)
