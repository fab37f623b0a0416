"""Synthetic coupled-dyad sessions with a controllable synchrony ground truth.

Each agent is a few smooth latent processes mixed into 59 features, gated
by a slow activity envelope (faces rest part of the time), plus sparse
gesture bumps. In coupled sessions B replays a response map of A
delayed by ``delay_s``; in decoupled sessions B is an independent process.
All generation happens in a unit-scale base space, then per-feature FLAME
scales and per-agent neutral offsets are applied.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequences import N_FEATURES, Coupling, DyadClip, FlameSequence, slide_windows

# FLAME-like magnitudes: expression PCA coefficients decay, pose/rotation are
# small angles.
FEATURE_SCALE = np.concatenate(
    [1.5 / np.sqrt(1.0 + np.arange(50) / 8.0), np.full(6, 0.08), np.full(3, 0.15)]
)


@dataclass(frozen=True)
class SynthConfig:
    fps: float = 10.0
    session_seconds: float = 120.0
    latent_count: int = 8
    delay_s: float = 0.5
    gain: float = 0.8
    noise: float = 0.1
    seed: int = 0
    coupled: bool = True
    event_rate: float = 0.4
    population_seed: int = 20240
    response_jitter: float = 0.05
    offset_scale: float = 0.1

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValueError("delay must be >= 0")
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError("coupling gain must lie in [0, 1]")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if self.latent_count < 1:
            raise ValueError("latent_count must be >= 1")

    @property
    def n_frames(self) -> int:
        return int(round(self.session_seconds * self.fps))


def population_response_map(population_seed: int) -> np.ndarray:
    """Response map shared by every synthetic dyad: mimicry-dominant with weak cross-talk."""
    rng = np.random.default_rng(population_seed)
    diag = rng.uniform(1.0, 1.3, N_FEATURES)
    return np.diag(diag) + 0.15 * rng.standard_normal((N_FEATURES, N_FEATURES)) / np.sqrt(N_FEATURES)


def _latents(rng: np.random.Generator, n: int, fps: float, k: int) -> np.ndarray:
    t = np.arange(n) / fps
    out = np.empty((k, n))
    for i in range(k):
        periods = np.exp(rng.uniform(np.log(1.5), np.log(8.0), 3))
        phases = rng.uniform(0, 2 * np.pi, 3)
        amps = rng.uniform(0.5, 1.0, 3)
        x = (amps[:, None] * np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])).sum(axis=0)
        out[i] = x / np.sqrt(0.5 * (amps**2).sum())
    return out


def _gesture_events(rng: np.random.Generator, n: int, fps: float, rate: float) -> np.ndarray:
    out = np.zeros((N_FEATURES, n))
    t = np.arange(n) / fps
    for _ in range(rng.poisson(rate * n / fps)):
        center = rng.uniform(0, n / fps)
        sigma = rng.uniform(0.4, 1.0)
        feats = rng.choice(N_FEATURES, size=rng.integers(3, 13), replace=False)
        amp = rng.normal(0.0, 1.0, feats.size)
        bump = np.exp(-0.5 * ((t - center) / sigma) ** 2)
        out[feats] += amp[:, None] * bump[None, :]
    return out


def _activity_gate(rng: np.random.Generator, n: int, fps: float) -> np.ndarray:
    """Soft on/off envelope in (0, 1) with 3-12 s dwell times, active ~60% of the time."""
    t = np.arange(n) / fps
    g = np.zeros(n)
    for _ in range(3):
        period = np.exp(rng.uniform(np.log(3.0), np.log(12.0)))
        g += np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    g /= np.sqrt(1.5)
    return 1.0 / (1.0 + np.exp(-3.0 * (g + 0.5)))


def agent_process(rng: np.random.Generator, n: int, fps: float, k: int, event_rate: float) -> np.ndarray:
    """One agent's base-space dynamics, shape (59, n)."""
    mix = rng.standard_normal((N_FEATURES, k)) / np.sqrt(k)
    gate = _activity_gate(rng, n, fps)
    return gate * (mix @ _latents(rng, n, fps, k)) + _gesture_events(rng, n, fps, event_rate)


def synth_session(cfg: SynthConfig, session_id: str | None = None) -> DyadClip:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_frames
    lag = int(round(cfg.delay_s * cfg.fps))
    a_full = agent_process(rng, n + lag, cfg.fps, cfg.latent_count, cfg.event_rate)
    a = a_full[:, lag:]
    indep = agent_process(rng, n, cfg.fps, cfg.latent_count, cfg.event_rate)
    noise = cfg.noise * rng.standard_normal((N_FEATURES, n))
    if cfg.coupled:
        response = population_response_map(cfg.population_seed)
        response = response + cfg.response_jitter * rng.standard_normal(response.shape) / np.sqrt(N_FEATURES)
        # a_full[:, t] is A at time t - lag relative to the kept window
        b = cfg.gain * (response @ a_full[:, :n]) + (1.0 - cfg.gain) * indep + noise
    else:
        b = indep + noise
    off_a = cfg.offset_scale * rng.standard_normal(N_FEATURES)
    off_b = cfg.offset_scale * rng.standard_normal(N_FEATURES)
    fa = ((a.T + off_a) * FEATURE_SCALE).astype(np.float32)
    fb = ((b.T + off_b) * FEATURE_SCALE).astype(np.float32)
    return DyadClip(
        FlameSequence(fa, cfg.fps),
        FlameSequence(fb, cfg.fps),
        session_id=session_id if session_id is not None else f"s{cfg.seed}",
        start_frame=0,
        coupling=Coupling.COUPLED if cfg.coupled else Coupling.DECOUPLED,
    )


def session_seed(seed: int, index: int) -> int:
    """Independent per-session seed; distinct corpus seeds never share sessions."""
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(index,)).generate_state(1)[0])


def synth_corpus(cfg: SynthConfig, n_sessions: int, prefix: str = "session") -> list[DyadClip]:
    out = []
    for i in range(n_sessions):
        sub = SynthConfig(**{**cfg.__dict__, "seed": session_seed(cfg.seed, i)})
        out.append(synth_session(sub, session_id=f"{prefix}{i:03d}"))
    return out


def corpus_clips(
    sessions: list[DyadClip], win_frames: int, n_clips: int, seed: int, stride: int = 1
) -> list[DyadClip]:
    """Draw ``n_clips`` distinct windows round-robin across sessions (seeded)."""
    rng = np.random.default_rng(seed)
    pools = [slide_windows(s, win_frames, stride) for s in sessions]
    pools = [p for p in pools if p]
    if not pools:
        raise ValueError("no session is long enough for the requested window")
    orders = [list(rng.permutation(len(p))) for p in pools]
    out: list[DyadClip] = []
    while len(out) < n_clips:
        progressed = False
        for pool, order in zip(pools, orders):
            if order and len(out) < n_clips:
                out.append(pool[order.pop()])
                progressed = True
        if not progressed:
            raise ValueError(f"sessions hold fewer than {n_clips} windows")
    return out


def lagged_xcorr(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation corr(a[t - lag], b[t]) per feature, lags -max_lag..max_lag.

    Returns shape (2*max_lag+1, n_features). Constant series correlate as 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    T = a.shape[0]
    out = np.zeros((2 * max_lag + 1, a.shape[1]))
    for i, lag in enumerate(range(-max_lag, max_lag + 1)):
        if lag >= 0:
            x, y = a[: T - lag], b[lag:]
        else:
            x, y = a[-lag:], b[: T + lag]
        if x.shape[0] < 2:
            continue
        x = x - x.mean(axis=0)
        y = y - y.mean(axis=0)
        den = np.sqrt((x * x).sum(axis=0) * (y * y).sum(axis=0))
        num = (x * y).sum(axis=0)
        out[i] = np.divide(num, den, out=np.zeros_like(num), where=den > 1e-12)
    return out


@dataclass
class ExperimentSplits:
    train: list[DyadClip]
    test: list[DyadClip]
    coupled: list[DyadClip]
    decoupled: list[DyadClip]


def experiment_splits(
    seed: int = 0,
    win_frames: int = 100,
    train_sessions: int = 50,
    train_clips: int = 200,
    test_sessions: int = 32,
    test_clips: int = 128,
    stillface_clips: int = 64,
    base: SynthConfig | None = None,
) -> ExperimentSplits:
    """Session-disjoint train/test corpora plus matched coupled/decoupled still-face sets.

    The coupled still-face set is the first ``stillface_clips`` test clips;
    the decoupled set comes from as many fresh decoupled sessions as the test corpus has.
    """
    base = base if base is not None else SynthConfig()
    mk = lambda off, coupled: SynthConfig(**{**base.__dict__, "seed": 4 * seed + off, "coupled": coupled})  # noqa: E731
    tr = synth_corpus(mk(1, True), train_sessions, prefix="train")
    te = synth_corpus(mk(2, True), test_sessions, prefix="test")
    de = synth_corpus(mk(3, False), test_sessions, prefix="still")
    test = corpus_clips(te, win_frames, test_clips, seed=4 * seed + 2)
    return ExperimentSplits(
        train=corpus_clips(tr, win_frames, train_clips, seed=4 * seed + 1),
        test=test,
        coupled=test[:stillface_clips],
        decoupled=corpus_clips(de, win_frames, stillface_clips, seed=4 * seed + 3),
    )
