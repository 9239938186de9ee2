"""Synthetic dyadic-session streams with known per-frame engagement.

Coordinate frame (meters, seated subject): origin on the floor below the hip
centre, +y up, +z towards the interlocutor, and the subject's *left* side on
-x.  With this convention crossed arms show up as ``wrist_l.x > wrist_r.x``.

Engagement is generated segment-wise.  Behaviour is driven by eight
independent channels (gaze, arms, head touch, head motion, body movement,
gesticulation, turn taking, facial valence); each is either in its engaged
("good") or disengaged ("bad") mode per frame.  HIGH segments run every
channel in good mode.  LOW segments put a random subset of channels in bad
mode; with ``n_weaknesses=8`` that subset is all channels, which is the
canonical disengaged pattern (crossed arms, averted gaze, restless or frozen).
``noise`` flips channel modes in short episodes irrespective of the label.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .data import HIGH, LABEL_NAMES, LOW, label_from_name
from .errors import EngageError

JOINTS: tuple[str, ...] = (
    "head",
    "neck",
    "spine",
    "shoulder_l",
    "shoulder_r",
    "elbow_l",
    "elbow_r",
    "wrist_l",
    "wrist_r",
    "hip_l",
    "hip_r",
)
J = {name: i for i, name in enumerate(JOINTS)}

INTERLOCUTOR_HEAD = np.array([0.0, 1.2, 1.6])

CHANNELS: tuple[str, ...] = ("gaze", "arms", "touch", "head", "move", "gesture", "turn", "valence")
C = {name: i for i, name in enumerate(CHANNELS)}

RESTLESS, STILL = 0, 1

_OPEN_POSE = {
    "head": (0.0, 1.20, 0.02),
    "neck": (0.0, 1.08, 0.0),
    "spine": (0.0, 0.85, 0.0),
    "shoulder_l": (-0.18, 1.03, 0.0),
    "shoulder_r": (0.18, 1.03, 0.0),
    "elbow_l": (-0.22, 0.80, 0.10),
    "elbow_r": (0.22, 0.80, 0.10),
    "wrist_l": (-0.21, 0.64, 0.30),
    "wrist_r": (0.21, 0.64, 0.30),
    "hip_l": (-0.12, 0.55, 0.0),
    "hip_r": (0.12, 0.55, 0.0),
}
_CROSSED = {
    "elbow_l": (-0.17, 0.86, 0.14),
    "elbow_r": (0.17, 0.85, 0.14),
    "wrist_l": (0.07, 0.90, 0.14),
    "wrist_r": (-0.07, 0.89, 0.15),
}
# right hand resting at the chin, relative to the head joint
_TOUCH_WRIST_OFFSET = np.array([0.03, -0.10, 0.07])
_TOUCH_ELBOW = np.array([0.20, 0.95, 0.12])
_TOUCH_PERIOD_S, _TOUCH_ON_S = 7.5, 1.5

# joints carried along by upper-body sway (hips stay planted)
_SWAY_WEIGHT = np.array([1.0, 0.9, 0.5, 0.8, 0.8, 0.7, 0.7, 0.6, 0.6, 0.0, 0.0])


@dataclass(frozen=True)
class EngagementProfile:
    """Generation settings.

    Attributes:
        duration_s: session length in seconds.
        low_fraction: probability that a segment is LOW (class mix).
        noise: expected fraction of time each channel spends in the mode
            opposite to its segment label, in [0, 1].
        n_weaknesses: number of channels, drawn at random per LOW segment,
            that run in disengaged mode (8 = all channels).
    """

    duration_s: float = 300.0
    low_fraction: float = 0.5
    noise: float = 0.0
    n_weaknesses: int = len(CHANNELS)
    frame_rate: float = 15.0
    segment_s: tuple[float, float] = (10.0, 30.0)

    def __post_init__(self):
        if not self.duration_s > 0:
            raise EngageError("zero-duration", "requested session duration must be positive")
        checks = {
            "low_fraction": 0.0 <= self.low_fraction <= 1.0,
            "noise": 0.0 <= self.noise <= 1.0,
            "n_weaknesses": 1 <= self.n_weaknesses <= len(CHANNELS),
            "frame_rate": self.frame_rate > 0,
            "segment_s": 0 < self.segment_s[0] <= self.segment_s[1],
        }
        for name, ok in checks.items():
            if not ok:
                raise EngageError("invalid-profile", f"profile field {name!r} out of range: {getattr(self, name)!r}")
        object.__setattr__(self, "segment_s", tuple(float(v) for v in self.segment_s))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["segment_s"] = list(self.segment_s)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EngagementProfile":
        d = dict(d)
        if "segment_s" in d:
            d["segment_s"] = tuple(d["segment_s"])
        return cls(**d)


@dataclass(frozen=True)
class Frame:
    joint_positions: dict[str, tuple[float, float, float]]
    head_rotation: tuple[float, float, float]
    gaze_direction: tuple[float, float, float]
    face_valence: float
    voice_active_self: bool
    voice_active_other: bool
    engagement: int = HIGH


@dataclass(frozen=True, eq=False)
class SessionStream:
    """One session as stacked per-frame arrays (``T`` frames)."""

    session_id: str
    frame_rate: float
    joints: np.ndarray  # (T, 11, 3)
    head_rotation: np.ndarray  # (T, 3) Euler XYZ, rad
    gaze: np.ndarray  # (T, 3) unit vectors
    valence: np.ndarray  # (T,)
    voice_self: np.ndarray  # (T,) bool
    voice_other: np.ndarray  # (T,) bool
    labels: np.ndarray  # (T,) LOW/HIGH ground truth
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.labels) == 0:
            raise EngageError("invalid-input", "stream has no frames")
        if not self.frame_rate > 0:
            raise EngageError("invalid-input", "frame_rate must be positive")

    def __len__(self) -> int:
        return len(self.labels)

    def frame(self, i: int) -> Frame:
        return Frame(
            joint_positions={name: tuple(float(v) for v in self.joints[i, j]) for j, name in enumerate(JOINTS)},
            head_rotation=tuple(float(v) for v in self.head_rotation[i]),
            gaze_direction=tuple(float(v) for v in self.gaze[i]),
            face_valence=float(self.valence[i]),
            voice_active_self=bool(self.voice_self[i]),
            voice_active_other=bool(self.voice_other[i]),
            engagement=int(self.labels[i]),
        )

    @property
    def frames(self) -> list[Frame]:
        return [self.frame(i) for i in range(len(self))]

    def __iter__(self) -> Iterator[Frame]:
        return (self.frame(i) for i in range(len(self)))

    def equals(self, other: "SessionStream") -> bool:
        return (
            self.session_id == other.session_id
            and self.frame_rate == other.frame_rate
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("joints", "head_rotation", "gaze", "valence", "voice_self", "voice_other", "labels")
            )
        )

    @classmethod
    def from_frames(cls, frames: Sequence[Frame], frame_rate: float, session_id: str = "session",
                    meta: dict | None = None) -> "SessionStream":
        if not frames:
            raise EngageError("invalid-input", "stream has no frames")
        return cls(
            session_id=session_id,
            frame_rate=float(frame_rate),
            joints=np.array([[f.joint_positions[name] for name in JOINTS] for f in frames], dtype=np.float64),
            head_rotation=np.array([f.head_rotation for f in frames], dtype=np.float64),
            gaze=np.array([f.gaze_direction for f in frames], dtype=np.float64),
            valence=np.array([f.face_valence for f in frames], dtype=np.float64),
            voice_self=np.array([f.voice_active_self for f in frames], dtype=bool),
            voice_other=np.array([f.voice_active_other for f in frames], dtype=bool),
            labels=np.array([f.engagement for f in frames], dtype=np.int64),
            meta=dict(meta or {}),
        )


# -- generation ----------------------------------------------------------------


def _smooth_noise(rng: np.random.Generator, shape: tuple[int, ...], width: int) -> np.ndarray:
    """Unit-variance low-pass noise along axis 0 (twice-applied box filter)."""
    n = shape[0]
    width = max(int(width), 1)
    white = rng.standard_normal((n + 4 * width,) + shape[1:])
    kernel = np.ones(width) / width
    out = white
    for _ in range(2):
        out = np.apply_along_axis(lambda v: np.convolve(v, kernel, mode="same"), 0, out)
    out = out[2 * width : 2 * width + n]
    sd = out.std(axis=0)
    return out / np.where(sd > 0, sd, 1.0)


def _segments(rng: np.random.Generator, n_frames: int, fps: float, profile: EngagementProfile):
    bounds = []
    start = 0
    while start < n_frames:
        length = max(int(round(rng.uniform(*profile.segment_s) * fps)), 1)
        bounds.append((start, min(start + length, n_frames)))
        start += length
    return bounds


def _episode_flips(rng: np.random.Generator, n_frames: int, fps: float, rate: float,
                   dur_s: tuple[float, float] = (2.0, 6.0)) -> np.ndarray:
    """Boolean track of consecutive chunks (``dur_s`` long), each on with probability ``rate``."""
    out = np.zeros(n_frames, dtype=bool)
    if rate <= 0:
        return out
    start = 0
    while start < n_frames:
        length = max(int(round(rng.uniform(*dur_s) * fps)), 1)
        if rng.random() < rate:
            out[start : start + length] = True
        start += length
    return out


def _glances(rng: np.random.Generator, n_frames: int, fps: float, on_s: float, gap_s: tuple[float, float]) -> np.ndarray:
    """Short ``on_s`` episodes separated by gaps drawn from ``gap_s``; bounds the on-fraction per window."""
    out = np.zeros(n_frames, dtype=bool)
    start = int(round(rng.uniform(0, gap_s[1]) * fps))
    on = max(int(round(on_s * fps)), 1)
    while start < n_frames:
        out[start : start + on] = True
        start += on + max(int(round(rng.uniform(*gap_s) * fps)), 1)
    return out


def _turns(rng: np.random.Generator, turn_bad: np.ndarray, fps: float):
    n = len(turn_bad)
    self_v = np.zeros(n, dtype=bool)
    other_v = np.zeros(n, dtype=bool)
    start = 0
    while start < n:
        length = max(int(round(rng.uniform(1.0, 3.0) * fps)), 1)
        p_self = 0.05 if turn_bad[start] else 0.5
        u = rng.random()
        if u < p_self:
            self_v[start : start + length] = True
        elif u < p_self + (1 - p_self) * 0.85:
            other_v[start : start + length] = True
        start += length
    return self_v, other_v


def _direction(yaw: np.ndarray, pitch: np.ndarray) -> np.ndarray:
    d = np.stack([np.sin(yaw) * np.cos(pitch), np.sin(pitch), np.cos(yaw) * np.cos(pitch)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_session(seed: int, profile: EngagementProfile | None = None, session_id: str | None = None) -> SessionStream:
    """Generate one session; a pure function of ``(seed, profile)``."""
    profile = profile or EngagementProfile()
    rng = np.random.default_rng(seed)
    fps = profile.frame_rate
    T = int(round(profile.duration_s * fps))
    if T < 1:
        raise EngageError("zero-duration", "requested duration yields no frames")
    t = np.arange(T) / fps

    # segment labels, disengagement subsets, styles and per-segment gains
    labels = np.empty(T, dtype=np.int64)
    bad = np.zeros((T, len(CHANNELS)), dtype=bool)
    style = np.empty(T, dtype=np.int64)
    gain = np.empty((T, 4))
    for a, b in _segments(rng, T, fps, profile):
        is_low = rng.random() < profile.low_fraction
        labels[a:b] = LOW if is_low else HIGH
        style[a:b] = RESTLESS if rng.random() < 0.5 else STILL
        gain[a:b] = rng.uniform(0.75, 1.25, size=4)
        if is_low:
            bad[a:b, rng.choice(len(CHANNELS), size=profile.n_weaknesses, replace=False)] = True
    for c in range(len(CHANNELS)):
        bad[:, c] ^= _episode_flips(rng, T, fps, profile.noise)

    voice_self, voice_other = _turns(rng, bad[:, C["turn"]], fps)

    # facial valence
    val_level = np.where(bad[:, C["valence"]], -0.15, 0.35) * gain[:, 0]
    valence = np.clip(val_level + 0.12 * _smooth_noise(rng, (T,), int(2 * fps)), -1.0, 1.0)

    # upper-body sway / restlessness
    move_bad = bad[:, C["move"]]
    sway_amp = np.where(move_bad, np.where(style == RESTLESS, 0.05, 0.0015), 0.012) * gain[:, 1]
    sway = _smooth_noise(rng, (T, 3), int(1.0 * fps)) * sway_amp[:, None]
    sway[:, 1] *= 0.3
    fidget_amp = np.where(move_bad & (style == RESTLESS), 0.012, 0.0)
    fidget = _smooth_noise(rng, (T, 3), max(int(0.2 * fps), 1)) * fidget_amp[:, None]

    # head rotation: nods while listening when engaged, frozen or scanning otherwise
    head_bad = bad[:, C["head"]]
    listening = voice_other.astype(np.float64)
    env = np.convolve(listening, np.ones(int(fps)) / int(fps), mode="same")
    nod_freq = rng.uniform(1.0, 1.6)
    nod = 0.07 * gain[:, 2] * env * np.sin(2 * np.pi * nod_freq * t + rng.uniform(0, 2 * np.pi))
    idle = _smooth_noise(rng, (T, 3), int(2 * fps))
    scan = _smooth_noise(rng, (T, 3), int(0.8 * fps))
    pitch = np.where(head_bad, np.where(style == RESTLESS, 0.06 * scan[:, 0], 0.004 * idle[:, 0]), nod + 0.02 * idle[:, 0])
    yaw = np.where(head_bad, np.where(style == RESTLESS, 0.35 * scan[:, 1], 0.004 * idle[:, 1]), 0.03 * idle[:, 1])
    roll = np.where(head_bad & (style == STILL), 0.002, 0.015) * idle[:, 2]
    head_rotation = np.stack([pitch, yaw, roll], axis=1) + 0.0008 * rng.standard_normal((T, 3))

    # skeleton
    joints = np.tile(np.array([_OPEN_POSE[n] for n in JOINTS]), (T, 1, 1))
    crossed = bad[:, C["arms"]]
    for name, pos in _CROSSED.items():
        joints[crossed, J[name]] = pos

    gest_bad = bad[:, C["gesture"]]
    speaking = np.convolve(voice_self.astype(np.float64), np.ones(int(fps)) / int(fps), mode="same")
    gest_amp = np.where(
        gest_bad,
        np.where(style == RESTLESS, 0.10, 0.003),
        0.06 * np.clip(0.25 + speaking, 0.0, 1.0),
    ) * gain[:, 3]
    gest_amp = np.where(crossed, 0.15 * gest_amp, gest_amp)
    erratic = gest_bad & (style == RESTLESS)
    g_fast = _smooth_noise(rng, (T, 2, 3), max(int(0.15 * fps), 1))
    g_slow = _smooth_noise(rng, (T, 2, 3), max(int(0.35 * fps), 1))
    gest = np.where(erratic[:, None, None], g_fast, g_slow) * gest_amp[:, None, None]
    joints[:, [J["wrist_l"], J["wrist_r"]]] += gest
    joints[:, [J["elbow_l"], J["elbow_r"]]] += 0.4 * gest

    joints += (sway + fidget)[:, None, :] * _SWAY_WEIGHT[None, :, None]
    joints[:, J["head"], 2] += 0.05 * pitch

    touch_phase = rng.uniform(0, _TOUCH_PERIOD_S)
    touching = bad[:, C["touch"]] & (np.mod(t + touch_phase, _TOUCH_PERIOD_S) < _TOUCH_ON_S)
    joints[touching, J["wrist_r"]] = joints[touching, J["head"]] + _TOUCH_WRIST_OFFSET
    joints[touching, J["elbow_r"]] = _TOUCH_ELBOW + sway[touching] * 0.7

    joints += 0.0003 * rng.standard_normal(joints.shape)

    # gaze: locked on the interlocutor with rare glances when engaged, averted otherwise
    to_other = INTERLOCUTOR_HEAD[None, :] - joints[:, J["head"]]
    base_yaw = np.arctan2(to_other[:, 0], to_other[:, 2])
    base_pitch = np.arctan2(to_other[:, 1], np.hypot(to_other[:, 0], to_other[:, 2]))
    gaze_bad = bad[:, C["gaze"]]
    glance = _glances(rng, T, fps, 0.5, (5.0, 9.0))
    look_back = _glances(rng, T, fps, 1.0, (3.0, 6.0))
    away = np.where(gaze_bad, ~look_back, glance)
    side = np.where(_smooth_noise(rng, (T,), int(3 * fps)) >= 0, 1.0, -1.0)
    jitter = np.deg2rad(2.0) * rng.standard_normal((T, 2))
    yaw_off = np.where(away, side * np.deg2rad(np.where(gaze_bad, 35.0, 25.0)), 0.0) + jitter[:, 0]
    pitch_off = np.where(away & gaze_bad, np.deg2rad(-20.0), 0.0) + jitter[:, 1]
    gaze = _direction(base_yaw + yaw_off, base_pitch + pitch_off)

    return SessionStream(
        session_id=session_id if session_id is not None else f"S{seed}",
        frame_rate=float(fps),
        joints=joints,
        head_rotation=head_rotation,
        gaze=gaze,
        valence=valence,
        voice_self=voice_self,
        voice_other=voice_other,
        labels=labels,
        meta={"seed": int(seed), "profile": profile.to_dict()},
    )


def generate_corpus(n_sessions: int, seed: int, profile: EngagementProfile | None = None) -> list[SessionStream]:
    """``n_sessions`` sessions with seeds derived from ``seed`` and ids ``S000``, ``S001``, ..."""
    if n_sessions < 1:
        raise EngageError("invalid-input", "n_sessions must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(n_sessions, dtype=np.uint32)
    return [generate_session(int(s), profile, session_id=f"S{i:03d}") for i, s in enumerate(seeds)]


# -- JSON-lines stream files ----------------------------------------------------


def stream_to_jsonl(stream: SessionStream) -> str:
    header = {
        "type": "header",
        "session_id": stream.session_id,
        "frame_rate": stream.frame_rate,
        "n_frames": len(stream),
        "joints": list(JOINTS),
        "meta": stream.meta,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for i in range(len(stream)):
        rec = {
            "joints": {name: [float(v) for v in stream.joints[i, j]] for j, name in enumerate(JOINTS)},
            "head_rotation": [float(v) for v in stream.head_rotation[i]],
            "gaze": [float(v) for v in stream.gaze[i]],
            "valence": float(stream.valence[i]),
            "voice_self": bool(stream.voice_self[i]),
            "voice_other": bool(stream.voice_other[i]),
            "engagement": LABEL_NAMES[stream.labels[i]],
        }
        lines.append(json.dumps(rec, sort_keys=True))
    return "\n".join(lines) + "\n"


def stream_from_jsonl(text: str) -> SessionStream:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EngageError("invalid-file", "empty stream file")
    try:
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise EngageError("invalid-file", "first line of a stream file must be the header")
        recs = [json.loads(ln) for ln in lines[1:]]
        frames = [
            Frame(
                joint_positions={name: tuple(r["joints"][name]) for name in JOINTS},
                head_rotation=tuple(r["head_rotation"]),
                gaze_direction=tuple(r["gaze"]),
                face_valence=r["valence"],
                voice_active_self=r["voice_self"],
                voice_active_other=r["voice_other"],
                engagement=label_from_name(r.get("engagement", "high")),
            )
            for r in recs
        ]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise EngageError("invalid-file", f"malformed stream file: {exc}") from None
    if "n_frames" in header and header["n_frames"] != len(frames):
        raise EngageError("invalid-file", f"header announces {header['n_frames']} frames, file has {len(frames)}")
    return SessionStream.from_frames(frames, header["frame_rate"], header["session_id"], header.get("meta"))


def save_stream(stream: SessionStream, path) -> None:
    Path(path).write_text(stream_to_jsonl(stream), encoding="utf-8", newline="\n")


def load_stream(path) -> SessionStream:
    return stream_from_jsonl(Path(path).read_text(encoding="utf-8"))
