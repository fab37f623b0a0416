"""Metrics, baselines and the coupled-vs-decoupled (still-face) comparison.

MAE is measured in z-normalized space and summed over the three feature
groups. The video-embedding distance is replaced by a Fréchet distance over
deterministic clip statistics pushed through a fixed random projection.
"""
from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .dyaddata import GROUPS, N_FEATURES, DyadClip, FlameSequence, GroupStats, denormalize, lagged_xcorr, normalize
from .dyaddata.fseq import atomic_write_bytes
from .model import ModelParams, predict_normalized

EMBED_WIDTH = 32
EMBED_SEED = 1234
XCORR_SPAN_S = 2.5
RAW_WIDTH = N_FEATURES * 2 * 3 + N_FEATURES  # 413
MIN_FD_CLIPS = 64
MIN_EVAL_CLIPS = 128
MIRROR_DELAY_S = 3.0
METHODS = ("ground_truth", "noise", "mirror", "random", "model")
METRICS_HEADER = ("method", "mae", "fd", "n_clips", "seed")
SUMMARY_HEADER = ("mean_coupled", "mean_decoupled", "u_statistic", "p_value")


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, FlameSequence) else np.asarray(x)


def mae_metric(pred, target, stats: GroupStats) -> float:
    """Sum over expression/pose/rotation of the mean |pred - target| in normalized units."""
    p, t = _frames(pred), _frames(target)
    if p.shape != t.shape:
        raise ValueError(f"prediction/target shape mismatch: {p.shape} vs {t.shape}")
    if p.shape[-1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features, got {p.shape[-1]}")
    diff = np.abs((p.astype(np.float64) - t.astype(np.float64)) / stats.std)
    return float(sum(diff[..., g].mean() for g in GROUPS.values()))


def per_clip_mae(preds: Sequence, targets: Sequence, stats: GroupStats) -> np.ndarray:
    if len(preds) != len(targets):
        raise ValueError("need one prediction per target")
    return np.array([mae_metric(p, t, stats) for p, t in zip(preds, targets)])


# -- embedding + Fréchet distance ---------------------------------------------


@functools.lru_cache(maxsize=8)
def _projection(seed: int, width: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal((RAW_WIDTH, width)) / np.sqrt(RAW_WIDTH)
    proj.setflags(write=False)
    return proj


def clip_statistics(a: np.ndarray, b: np.ndarray, fps: float) -> np.ndarray:
    """413 raw values: mean, std, mean |diff| per feature for A then B, then max-lag A-B correlation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("A and B must have equal shape")
    if a.shape[0] < 2:
        raise ValueError("clip must have at least 2 frames")
    parts = []
    for x in (a, b):
        parts += [x.mean(axis=0), x.std(axis=0), np.abs(np.diff(x, axis=0)).mean(axis=0)]
    max_lag = min(int(round(XCORR_SPAN_S * fps)), a.shape[0] - 2)
    parts.append(lagged_xcorr(a, b, max_lag).max(axis=0))
    return np.concatenate(parts)


def embed_clip(a, b, stats: GroupStats, embed_seed: int = EMBED_SEED, width: int = EMBED_WIDTH) -> np.ndarray:
    """Fixed-width summary of an (A, B) pair; raw sequences are normalized with ``stats`` first."""
    fa = a if isinstance(a, FlameSequence) else FlameSequence(np.asarray(a), 1.0)
    fb = b if isinstance(b, FlameSequence) else FlameSequence(np.asarray(b), fa.fps)
    raw = clip_statistics(normalize(fa, stats).frames, normalize(fb, stats).frames, fa.fps)
    return raw @ _projection(int(embed_seed), int(width))


def embed_pairs(a_list, b_list, stats: GroupStats, embed_seed: int = EMBED_SEED) -> np.ndarray:
    return np.stack([embed_clip(a, b, stats, embed_seed) for a, b in zip(a_list, b_list)])


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, shrinkage: float = 1e-6) -> GaussianSummary:
        x = np.asarray(x, dtype=np.float64)
        cov = np.cov(x, rowvar=False)
        cov = 0.5 * (cov + cov.T) + shrinkage * np.eye(x.shape[1])
        return cls(x.mean(axis=0), cov)


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(set1, set2, min_size: int = MIN_FD_CLIPS) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2) between Gaussian fits."""
    x1 = np.asarray(set1, dtype=np.float64)
    x2 = np.asarray(set2, dtype=np.float64)
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[1] != x2.shape[1]:
        raise ValueError("embedding sets must be 2-D with equal width")
    width = x1.shape[1]
    for name, x in (("first", x1), ("second", x2)):
        if x.shape[0] <= width or x.shape[0] < min_size:
            raise ValueError(
                f"{name} set has {x.shape[0]} embeddings; need more than {width} and at least {min_size}"
            )
    g1, g2 = GaussianSummary.fit(x1), GaussianSummary.fit(x2)
    s1 = _sqrt_psd(g1.cov)
    cross = np.linalg.eigvalsh(s1 @ g2.cov @ s1)
    tr_cross = np.sqrt(np.clip(cross, 0.0, None)).sum()
    dmu = g1.mean - g2.mean
    return float(max(dmu @ dmu + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * tr_cross, 0.0))


# -- baselines -----------------------------------------------------------------


def mirror_sequence(a: FlameSequence, delay_s: float = MIRROR_DELAY_S) -> FlameSequence:
    """B_t = A_{t-D}, D = floor(delay * fps); the first D frames hold A_0."""
    lag = int(math.floor(delay_s * a.fps + 1e-9))
    if lag > a.T:
        raise ValueError(f"clip of {a.T} frames is shorter than the {delay_s} s mirror delay")
    idx = np.maximum(np.arange(a.T) - lag, 0)
    return a.with_frames(a.frames[idx])


def baseline_predict(
    kind: str, clips: Sequence[DyadClip], stats: GroupStats, rng_seed: int, delay_s: float = MIRROR_DELAY_S
) -> list[FlameSequence]:
    if kind == "noise":
        rng = np.random.default_rng(rng_seed)
        out = []
        for c in clips:
            z = rng.standard_normal(c.b.frames.shape)
            out.append(denormalize(c.b.with_frames(z.astype(c.b.frames.dtype)), stats))
        return out
    if kind == "mirror":
        return [mirror_sequence(c.a, delay_s) for c in clips]
    if kind == "random":
        sessions = np.array([c.session_id for c in clips])
        rng = np.random.default_rng(rng_seed)
        out = []
        for i, c in enumerate(clips):
            pool = np.flatnonzero(sessions != c.session_id)
            if pool.size == 0:
                raise ValueError("random baseline needs clips from at least two sessions")
            out.append(clips[int(pool[rng.integers(pool.size)])].b)
        return out
    raise ValueError(f"unknown baseline {kind!r}; choose noise, mirror or random")


def model_predict(params: ModelParams, clips: Sequence[DyadClip], stats: GroupStats, seed: int,
                  batch: int = 32) -> list[FlameSequence]:
    """Eval-mode generation for every clip; clip i's latent comes from stream (seed, i)."""
    z = np.stack([np.random.default_rng([seed, i]).standard_normal(params.config.z_dim) for i in range(len(clips))])
    out: list[FlameSequence] = []
    for lo in range(0, len(clips), batch):
        chunk = clips[lo : lo + batch]
        a = np.stack([normalize(c.a, stats).frames for c in chunk]).astype(params.dtype)
        pred = predict_normalized(params, a, z[lo : lo + batch])
        for c, p in zip(chunk, pred):
            out.append(denormalize(c.a.with_frames(p.astype(c.a.frames.dtype)), stats))
    return out


# -- experiments -----------------------------------------------------------------


@dataclass(frozen=True)
class MetricRow:
    method: str
    mae: float
    fd: float
    n_clips: int
    seed: int


def split_by_session(clips: Sequence[DyadClip]) -> tuple[list[int], list[int]]:
    """Two clip-index sets with no session in common, balanced greedily by clip count."""
    by_session: dict[str, list[int]] = {}
    for i, c in enumerate(clips):
        by_session.setdefault(c.session_id, []).append(i)
    if len(by_session) < 2:
        raise ValueError("ground-truth split needs clips from at least two sessions")
    halves: tuple[list[int], list[int]] = ([], [])
    for sid in sorted(by_session, key=lambda s: (-len(by_session[s]), s)):
        target = halves[0] if len(halves[0]) <= len(halves[1]) else halves[1]
        target.extend(by_session[sid])
    return sorted(halves[0]), sorted(halves[1])


def evaluate_model(
    params: ModelParams | None,
    test_clips: Sequence[DyadClip],
    stats: GroupStats,
    seed: int = 0,
    embed_seed: int = EMBED_SEED,
    min_clips: int = MIN_EVAL_CLIPS,
) -> list[MetricRow]:
    """MAE and FD for each method; ``params=None`` skips the model row."""
    n = len(test_clips)
    if n < min_clips:
        raise ValueError(f"evaluation needs at least {min_clips} test clips, got {n}")
    targets = [c.b for c in test_clips]
    real = embed_pairs([c.a for c in test_clips], targets, stats, embed_seed)
    h1, h2 = split_by_session(test_clips)
    rows = [MetricRow("ground_truth", float(per_clip_mae(targets, targets, stats).mean()),
                      frechet_distance(real[h1], real[h2]), n, seed)]
    preds = {k: baseline_predict(k, test_clips, stats, seed) for k in ("noise", "mirror", "random")}
    if params is not None:
        preds["model"] = model_predict(params, test_clips, stats, seed)
    for method, pred in preds.items():
        emb = embed_pairs([c.a for c in test_clips], pred, stats, embed_seed)
        rows.append(MetricRow(method, float(per_clip_mae(pred, targets, stats).mean()),
                              frechet_distance(emb, real), n, seed))
    return rows


def format_metrics(rows: Sequence[MetricRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow([r.method, repr(r.mae), repr(r.fd), r.n_clips, r.seed])
    return out.getvalue()


def write_metrics_csv(rows: Sequence[MetricRow], path) -> None:
    atomic_write_bytes(path, format_metrics(rows).encode())


@dataclass(frozen=True)
class StillFaceReport:
    coupled_errors: np.ndarray
    decoupled_errors: np.ndarray
    mean_coupled: float
    mean_decoupled: float
    u_statistic: float
    p_value: float

    def summary_csv(self) -> str:
        return ",".join(SUMMARY_HEADER) + "\n" + ",".join(
            repr(float(x)) for x in (self.mean_coupled, self.mean_decoupled, self.u_statistic, self.p_value)
        ) + "\n"

    def per_clip_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(("condition", "clip", "mae"))
        for cond, errs in (("coupled", self.coupled_errors), ("decoupled", self.decoupled_errors)):
            for i, e in enumerate(errs):
                w.writerow((cond, i, repr(float(e))))
        return out.getvalue()


def compare_errors(coupled_errors, decoupled_errors) -> StillFaceReport:
    """One-sided Mann-Whitney test that coupled errors are stochastically smaller."""
    c = np.asarray(coupled_errors, dtype=np.float64)
    d = np.asarray(decoupled_errors, dtype=np.float64)
    if c.size == 0 or d.size == 0:
        raise ValueError("both error lists must be nonempty")
    res = sps.mannwhitneyu(c, d, alternative="less")
    return StillFaceReport(c, d, float(c.mean()), float(d.mean()), float(res.statistic), float(res.pvalue))


def stillface_compare(
    params: ModelParams,
    coupled_clips: Sequence[DyadClip],
    decoupled_clips: Sequence[DyadClip],
    stats: GroupStats,
    seed: int = 0,
) -> StillFaceReport:
    errs = []
    for clips in (coupled_clips, decoupled_clips):
        if not clips:
            raise ValueError("both clip sets must be nonempty")
        pred = model_predict(params, clips, stats, seed)
        errs.append(per_clip_mae(pred, [c.b for c in clips], stats))
    return compare_errors(*errs)
