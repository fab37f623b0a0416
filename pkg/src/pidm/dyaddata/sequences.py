"""FLAME-parameter sequences, dyad clips and preprocessing."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

N_FEATURES = 59
EXPRESSION = slice(0, 50)
POSE = slice(50, 56)
ROTATION = slice(56, 59)
GROUPS = {"expression": EXPRESSION, "pose": POSE, "rotation": ROTATION}
STD_FLOOR = 1e-6


class Coupling(enum.IntEnum):
    DECOUPLED = 0
    COUPLED = 1
    UNLABELED = 2


@dataclass(frozen=True)
class FlameSequence:
    """T x 59 facial parameters: 50 expression, 6 pose, 3 rotation."""

    frames: np.ndarray
    fps: float

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 2 or f.shape[1] != N_FEATURES:
            raise ValueError(f"FlameSequence needs shape (T, {N_FEATURES}), got {f.shape}")
        if f.shape[0] < 1:
            raise ValueError("FlameSequence needs at least one frame")
        if not np.all(np.isfinite(f)):
            raise ValueError("FlameSequence contains non-finite values")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        object.__setattr__(self, "frames", f)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def group(self, name: str) -> np.ndarray:
        return self.frames[:, GROUPS[name]]

    def with_frames(self, frames: np.ndarray) -> FlameSequence:
        return FlameSequence(frames, self.fps)


@dataclass(frozen=True)
class DyadClip:
    a: FlameSequence
    b: FlameSequence
    session_id: str = ""
    start_frame: int = 0
    coupling: Coupling = Coupling.UNLABELED

    def __post_init__(self):
        if self.a.T != self.b.T:
            raise ValueError(f"agent lengths differ: {self.a.T} vs {self.b.T}")
        if self.a.fps != self.b.fps:
            raise ValueError("agent frame rates differ")

    @property
    def T(self) -> int:
        return self.a.T

    @property
    def fps(self) -> float:
        return self.a.fps

    def swapped(self) -> DyadClip:
        return replace(self, a=self.b, b=self.a)


@dataclass(frozen=True)
class GroupStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
            raise ValueError("GroupStats needs 59-wide mean and std")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def running_average(seq: FlameSequence, window: int = 5) -> FlameSequence:
    """Centered moving average; the window shrinks to valid indices at the edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"running_average window must be a positive odd integer, got {window}")
    x = np.asarray(seq.frames, dtype=np.float64)
    half = window // 2
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    idx = np.arange(seq.T)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, seq.T)
    out = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    # cumulative sums can drift past the input range by an ulp
    out = np.clip(out, x.min(axis=0), x.max(axis=0))
    return seq.with_frames(out.astype(seq.frames.dtype, copy=False))


def window_count(T: int, win_frames: int, stride: int) -> int:
    return (T - win_frames) // stride + 1 if T >= win_frames else 0


def slide_windows(session: DyadClip, win_frames: int, stride: int = 1) -> list[DyadClip]:
    if win_frames < 1 or stride < 1:
        raise ValueError("win_frames and stride must be >= 1")
    clips = []
    for k in range(window_count(session.T, win_frames, stride)):
        s = k * stride
        clips.append(
            DyadClip(
                session.a.with_frames(session.a.frames[s : s + win_frames]),
                session.b.with_frames(session.b.frames[s : s + win_frames]),
                session_id=session.session_id,
                start_frame=session.start_frame + s,
                coupling=session.coupling,
            )
        )
    return clips


def compute_norm_stats(clips: list[DyadClip]) -> GroupStats:
    """Per-feature mean/std pooled over every frame of both agents."""
    if not clips:
        raise ValueError("compute_norm_stats needs at least one clip")
    n = 0
    total = np.zeros(N_FEATURES)
    for c in clips:
        for s in (c.a, c.b):
            total += s.frames.sum(axis=0, dtype=np.float64)
            n += s.T
    mean = total / n
    sq = np.zeros(N_FEATURES)
    for c in clips:
        for s in (c.a, c.b):
            d = s.frames.astype(np.float64) - mean
            sq += (d * d).sum(axis=0)
    return GroupStats(mean, np.sqrt(sq / n))


def normalize(seq: FlameSequence, stats: GroupStats) -> FlameSequence:
    out = (seq.frames.astype(np.float64) - stats.mean) / stats.std
    return seq.with_frames(out.astype(seq.frames.dtype, copy=False))


def denormalize(seq: FlameSequence, stats: GroupStats) -> FlameSequence:
    out = seq.frames.astype(np.float64) * stats.std + stats.mean
    return seq.with_frames(out.astype(seq.frames.dtype, copy=False))
