"""Windowed extraction of the 18 engagement features from a session stream."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import FEATURE_NAMES, HIGH, LOW, N_FEATURES, Dataset
from .errors import EngageError
from .synthgen import INTERLOCUTOR_HEAD, JOINTS, Frame, SessionStream

_J = {name: i for i, name in enumerate(JOINTS)}


@dataclass(frozen=True)
class WindowSpec:
    length_s: float = 10.0
    stride_s: float = 2.0

    def __post_init__(self):
        if not self.length_s > 0:
            raise EngageError("invalid-input", "window length_s must be > 0")
        if not 0 < self.stride_s <= self.length_s:
            raise EngageError("invalid-input", "window stride_s must satisfy 0 < stride_s <= length_s")


@dataclass(frozen=True)
class ExtractionParams:
    """Geometric constants of the feature definitions (lengths in meters)."""

    interlocutor: tuple[float, float, float] = tuple(INTERLOCUTOR_HEAD)
    gaze_cone_deg: float = 15.0
    cross_radius: float = 0.25
    touch_radius: float = 0.15

    def scaled(self, s: float) -> "ExtractionParams":
        return ExtractionParams(
            interlocutor=tuple(float(v) * s for v in self.interlocutor),
            gaze_cone_deg=self.gaze_cone_deg,
            cross_radius=self.cross_radius * s,
            touch_radius=self.touch_radius * s,
        )


DEFAULT_PARAMS = ExtractionParams()


def _signed_angle(u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Signed planar angle from 2-D vectors ``u`` to ``f`` (rows)."""
    cross = u[:, 0] * f[:, 1] - u[:, 1] * f[:, 0]
    dot = u[:, 0] * f[:, 0] + u[:, 1] * f[:, 1]
    return np.arctan2(cross, dot)


def _elbow_rotations(joints: np.ndarray, side: str) -> tuple[float, float]:
    u = joints[:, _J[f"elbow_{side}"]] - joints[:, _J[f"shoulder_{side}"]]
    f = joints[:, _J[f"wrist_{side}"]] - joints[:, _J[f"elbow_{side}"]]
    # rotation about Y: horizontal (z, x) plane; about X: sagittal (y, z) plane
    yrot = _signed_angle(u[:, [2, 0]], f[:, [2, 0]])
    xrot = _signed_angle(u[:, [1, 2]], f[:, [1, 2]])
    return float(yrot.mean()), float(xrot.mean())


def extract_arrays(
    joints: np.ndarray,
    head_rotation: np.ndarray,
    gaze: np.ndarray,
    valence: np.ndarray,
    voice_self: np.ndarray,
    voice_other: np.ndarray,
    frame_rate: float,
    params: ExtractionParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Feature vector of one window given stacked per-frame arrays."""
    T = len(valence)
    if T < 2:
        raise EngageError("window-too-short", f"need at least 2 frames, got {T}")
    f: dict[str, float] = {}

    head = joints[:, _J["head"]]
    spine = joints[:, _J["spine"]]
    wl, wr = joints[:, _J["wrist_l"]], joints[:, _J["wrist_r"]]

    f["VAL_F"] = float(np.mean(valence))

    ray = np.asarray(params.interlocutor)[None, :] - head
    cosang = np.sum(ray * gaze, axis=1) / (np.linalg.norm(ray, axis=1) * np.linalg.norm(gaze, axis=1))
    f["GZ_DR"] = float(np.mean(cosang > np.cos(np.deg2rad(params.gaze_cone_deg))))

    drot = np.linalg.norm(np.diff(head_rotation, axis=0), axis=1)
    f["HD_AC"] = float(drot.mean() * frame_rate)

    rel_l, rel_r = wl - spine, wr - spine
    crossed = (rel_l[:, 0] > rel_r[:, 0]) & (np.linalg.norm(rel_l, axis=1) < params.cross_radius) & (
        np.linalg.norm(rel_r, axis=1) < params.cross_radius
    )
    f["AM_CR"] = float(crossed.mean())

    d_touch = np.minimum(np.linalg.norm(wl - head, axis=1), np.linalg.norm(wr - head, axis=1))
    f["HD_TH"] = float(np.mean(d_touch < params.touch_radius))

    f["DIST_LW"] = float(np.mean(np.abs(wl[:, 0] - joints[:, _J["hip_l"], 0])))
    f["DIST_RW"] = float(np.mean(np.abs(wr[:, 0] - joints[:, _J["hip_r"], 0])))

    yl, xl = _elbow_rotations(joints, "l")
    yr, xr = _elbow_rotations(joints, "r")
    f["YROT_LE"] = yl
    f["YROT_RE"] = yr
    f["XROT_LE"] = xl
    f["XROT_RE"] = xr

    f["FO_LW"] = float(np.linalg.norm(np.diff(rel_l, axis=0), axis=1).mean())
    f["FO_RW"] = float(np.linalg.norm(np.diff(rel_r, axis=0), axis=1).mean())

    f["SDX_HD"] = float(head[:, 0].std())
    f["SDXROT_HD"] = float(head_rotation[:, 0].std())

    f["TN_HD"] = float(np.mean(voice_self & ~voice_other))

    f["CONT_MOV"] = float(np.linalg.norm(np.diff(joints, axis=0), axis=2).sum())
    v = np.diff(joints[:, [_J["wrist_l"], _J["wrist_r"]]], axis=0) * frame_rate
    f["EN_HA"] = float(np.mean(np.sum(v * v, axis=2)))
    return np.array([f[name] for name in FEATURE_NAMES])


def extract(
    window: Sequence[Frame],
    frame_rate: float,
    other_voice: Sequence[bool] | None = None,
    params: ExtractionParams = DEFAULT_PARAMS,
) -> np.ndarray:
    """Feature vector of a window of frames.

    ``other_voice`` overrides the interlocutor voice track stored in the frames.
    """
    if len(window) < 2:
        raise EngageError("window-too-short", f"need at least 2 frames, got {len(window)}")
    s = SessionStream.from_frames(list(window), frame_rate)
    vo = s.voice_other if other_voice is None else np.asarray(other_voice, dtype=bool)
    if len(vo) != len(s):
        raise EngageError("invalid-input", "other_voice track length differs from window length")
    return extract_arrays(s.joints, s.head_rotation, s.gaze, s.valence, s.voice_self, vo, s.frame_rate, params)


def window_bounds(n_frames: int, frame_rate: float, spec: WindowSpec) -> list[tuple[int, int]]:
    length = int(round(spec.length_s * frame_rate))
    stride = max(int(round(spec.stride_s * frame_rate)), 1)
    if length < 2:
        raise EngageError("window-too-short", "window spec yields fewer than 2 frames")
    return [(a, a + length) for a in range(0, n_frames - length + 1, stride)]


def extract_stream(stream: SessionStream, spec: WindowSpec = WindowSpec(),
                   params: ExtractionParams = DEFAULT_PARAMS) -> Dataset:
    """All full windows of a stream; the label is the majority ground truth (ties go LOW)."""
    rows, labels, widx = [], [], []
    for k, (a, b) in enumerate(window_bounds(len(stream), stream.frame_rate, spec)):
        rows.append(
            extract_arrays(
                stream.joints[a:b], stream.head_rotation[a:b], stream.gaze[a:b], stream.valence[a:b],
                stream.voice_self[a:b], stream.voice_other[a:b], stream.frame_rate, params,
            )
        )
        labels.append(HIGH if np.mean(stream.labels[a:b] == HIGH) > 0.5 else LOW)
        widx.append(k)
    return Dataset(
        X=np.array(rows).reshape(-1, N_FEATURES),
        y=np.array(labels, dtype=np.int64),
        session_ids=(stream.session_id,) * len(rows),
        window_index=np.array(widx, dtype=np.int64),
    )


def extract_corpus(streams: Sequence[SessionStream], spec: WindowSpec = WindowSpec(),
                   params: ExtractionParams = DEFAULT_PARAMS) -> Dataset:
    parts = [extract_stream(s, spec, params) for s in streams]
    return Dataset(
        X=np.concatenate([p.X for p in parts]) if parts else np.zeros((0, N_FEATURES)),
        y=np.concatenate([p.y for p in parts]) if parts else np.zeros(0),
        session_ids=sum((p.session_ids for p in parts), ()),
        window_index=np.concatenate([p.window_index for p in parts]) if parts else np.zeros(0),
    )
