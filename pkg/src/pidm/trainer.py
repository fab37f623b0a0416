"""Training loop, presets, checkpoints and the CSV training log.

Every step draws its randomness (batch indices, role swaps, latent noise,
dropout masks) from its own stream ``default_rng([seed, step])``. A run is
therefore a pure function of (config, data, seed), and resuming from a
checkpoint only needs the parameters, the Adam moments and the step count.
"""
from __future__ import annotations

import csv
import io
import math
import struct
import time
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dyaddata import DyadClip, GroupStats, compute_norm_stats, normalize
from .dyaddata.fseq import atomic_write_bytes
from .model import ModelConfig, ModelParams, forward_loss, init_params
from .numkernel import AdamState, adam_step, backward, no_grad

PRESETS: dict[str, dict] = {
    "paper": dict(
        lr=1e-5, batch_size=16, iterations=800_000, dropout=0.1, lambda_kl=1e-3,
        d_model=64, heads=4, ff=128, z_dim=32, clip_frames=100, fps=10.0,
    ),
    "desk": dict(
        lr=1e-4, batch_size=8, iterations=5_000, dropout=0.1, lambda_kl=1e-3,
        d_model=64, heads=4, ff=128, z_dim=32, clip_frames=100, fps=10.0,
    ),
}

LOG_HEADER = ("step", "total", "rec", "kl", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "desk"
    lr: float = 1e-4
    batch_size: int = 8
    iterations: int = 5_000
    dropout: float = 0.1
    lambda_kl: float = 1e-3
    d_model: int = 64
    heads: int = 4
    ff: int = 128
    z_dim: int = 32
    clip_frames: int = 100
    fps: float = 10.0
    seed: int = 0
    val_every: int = 200
    ckpt_every: int = 1_000

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        for name in ("lr", "batch_size", "iterations", "lambda_kl", "d_model", "heads", "ff",
                     "z_dim", "clip_frames", "fps", "val_every", "ckpt_every"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        ModelConfig(self.d_model, self.heads, self.ff, self.z_dim, dropout=self.dropout)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> TrainConfig:
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(preset=name, **{**PRESETS[name], **overrides})

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(self.d_model, self.heads, self.ff, self.z_dim, dropout=self.dropout)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def parse(cls, text: str, base: TrainConfig | None = None) -> TrainConfig:
        """key=value lines; ``#`` starts a comment. A ``preset`` line resets to that preset first."""
        values = _parse_kv(text)
        unknown = set(values) - _FIELD_TYPES.keys()
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        typed = {k: _coerce(k, v) for k, v in values.items()}
        if "preset" in typed:
            start = cls.from_preset(typed["preset"])
        else:
            start = base if base is not None else cls()
        return replace(start, **typed)

    @classmethod
    def load(cls, path, base: TrainConfig | None = None) -> TrainConfig:
        return cls.parse(Path(path).read_text(encoding="utf-8"), base)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k in out:
            raise ValueError(f"line {lineno}: duplicate key {k!r}")
        out[k] = v
    return out


def _coerce(key: str, value: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            f = float(value)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse {value!r} as {kind}") from None
    return value


# -- checkpoints -------------------------------------------------------------

CKPT_MAGIC = b"PIDM"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    cfg: TrainConfig
    stats: GroupStats | None = None
    adam: AdamState | None = None
    step: int = 0
    seconds: float = 0.0


def encode_checkpoint(
    params: ModelParams,
    cfg: TrainConfig,
    stats: GroupStats | None = None,
    adam: AdamState | None = None,
    step: int = 0,
    seconds: float = 0.0,
) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = [(f"param.{n}", t.data) for n, t in params.named_parameters()]
    names = [n for n, _ in params.named_parameters()]
    extra = f"state.step={int(step)}\nstate.seconds={float(seconds)!r}\n"
    if adam is not None:
        tensors += [(f"adam.m.{n}", m) for n, m in zip(names, adam.m)]
        tensors += [(f"adam.v.{n}", v) for n, v in zip(names, adam.v)]
        extra += f"state.adam_t={adam.t}\n"
    if stats is not None:
        # stats live in float64 but are stored at 32-bit precision
        tensors += [("stats.mean", stats.mean.astype(np.float32)), ("stats.std", stats.std.astype(np.float32))]
    block = (cfg.to_text() + extra).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<HI", CKPT_VERSION, len(block)))
    buf.write(block)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name} is {arr.dtype}; checkpoints hold float32 only")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<HB", len(raw), arr.ndim))
        buf.write(raw)
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams, cfg: TrainConfig, **state) -> None:
    atomic_write_bytes(path, encode_checkpoint(params, cfg, **state))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.data)} (needed {self.pos + n})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(4) != CKPT_MAGIC:
        raise CheckpointMagicError("bad magic: not a checkpoint file")
    version, block_len = r.unpack("<HI")
    if version != CKPT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {CKPT_VERSION}")
    kv = _parse_kv(r.take(block_len).decode("utf-8"))
    state = {k[6:]: v for k, v in kv.items() if k.startswith("state.")}
    cfg = TrainConfig.parse("\n".join(f"{k}={v}" for k, v in kv.items() if not k.startswith("state.")))
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len, rank = r.unpack("<HB")
        name = r.take(name_len).decode("utf-8")
        shape = r.unpack(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after the last tensor")

    params = init_params(cfg.model, seed=0)
    params.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param.")})
    names = [n for n, _ in params.named_parameters()]
    adam = None
    if "adam_t" in state:
        adam = AdamState(lr=cfg.lr, t=int(state["adam_t"]))
        adam.m = [tensors[f"adam.m.{n}"].copy() for n in names]
        adam.v = [tensors[f"adam.v.{n}"].copy() for n in names]
    stats = GroupStats(tensors["stats.mean"], tensors["stats.std"]) if "stats.mean" in tensors else None
    return Checkpoint(params, cfg, stats, adam, int(state.get("step", 0)), float(state.get("seconds", 0.0)))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


# -- logs --------------------------------------------------------------------


@dataclass(frozen=True)
class LogRecord:
    step: int
    total: float
    rec: float
    kl: float
    seconds: float

    def losses(self) -> tuple[int, float, float, float]:
        """Everything except wall-clock time: the part that is reproducible."""
        return self.step, self.total, self.rec, self.kl


def format_log(records: Sequence[LogRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(LOG_HEADER)
    for r in records:
        w.writerow([r.step, repr(float(r.total)), repr(float(r.rec)), repr(float(r.kl)), f"{r.seconds:.3f}"])
    return out.getvalue()


def read_log(path) -> list[LogRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != LOG_HEADER:
        raise ValueError(f"{path}: expected header {','.join(LOG_HEADER)}")
    return [LogRecord(int(s), float(t), float(r), float(k), float(sec)) for s, t, r, k, sec in rows[1:]]


class NonFiniteLossError(FloatingPointError):
    def __init__(self, record: LogRecord, detail: str = ""):
        self.record = record
        msg = f"non-finite loss at step {record.step}: total={record.total} rec={record.rec} kl={record.kl}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    stats: GroupStats
    adam: AdamState
    log: list[LogRecord]
    val_log: list[LogRecord]
    step: int
    checkpoint: Path | None = None


def f32_stats(stats: GroupStats) -> GroupStats:
    """Round stats to float32-representable values so a checkpoint restores them exactly."""
    return GroupStats(stats.mean.astype(np.float32), stats.std.astype(np.float32))


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def clip_arrays(clips: Sequence[DyadClip], stats: GroupStats) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (N, T, 59) float32 stacks of the A and B halves."""
    a = np.stack([normalize(c.a, stats).frames for c in clips]).astype(np.float32)
    b = np.stack([normalize(c.b, stats).frames for c in clips]).astype(np.float32)
    return a, b


def sample_batch(rng: np.random.Generator, a: np.ndarray, b: np.ndarray, batch_size: int):
    """Uniform draw with replacement; each clip swaps roles with probability 0.5."""
    idx = rng.integers(0, a.shape[0], size=batch_size)
    swap = rng.random(batch_size) < 0.5
    fa = np.where(swap[:, None, None], b[idx], a[idx])
    fb = np.where(swap[:, None, None], a[idx], b[idx])
    return fa, fb, idx, swap


def validation_loss(params: ModelParams, a: np.ndarray, b: np.ndarray, cfg: TrainConfig, step: int):
    """Eval-mode loss over the whole validation set, latent noise from stream (seed, step, 1)."""
    rng = np.random.default_rng([cfg.seed, step, 1])
    eps = rng.standard_normal((a.shape[0], cfg.z_dim)).astype(np.float32)
    totals = np.zeros(3)
    with no_grad():
        for lo in range(0, a.shape[0], 32):
            sl = slice(lo, lo + 32)
            lb = forward_loss(params, a[sl], b[sl], eps[sl], cfg.lambda_kl, False)
            totals += np.array(lb.values()) * (min(lo + 32, a.shape[0]) - lo)
    return tuple(float(x) for x in totals / a.shape[0])


def _check_clips(clips: Sequence[DyadClip], cfg: TrainConfig, what: str) -> None:
    for c in clips:
        if c.a.T != cfg.clip_frames:
            raise ValueError(f"{what} clip {c.session_id}@{c.start_frame} has {c.a.T} frames, config expects {cfg.clip_frames}")


def train(
    cfg: TrainConfig,
    train_set: Sequence[DyadClip],
    val_set: Sequence[DyadClip] | None = None,
    out_dir=None,
    resume: Checkpoint | None = None,
    progress: Callable[[LogRecord], None] | None = None,
) -> TrainResult:
    """Run ``cfg.iterations`` Adam steps; writes log/checkpoints under ``out_dir`` when given."""
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    _check_clips(train_set, cfg, "training")
    if val_set:
        _check_clips(val_set, cfg, "validation")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    log: list[LogRecord] = []
    val_log: list[LogRecord] = []
    if resume is not None:
        if resume.adam is None or resume.stats is None:
            raise ValueError("resuming needs a checkpoint with optimizer state and normalization stats")
        params, stats, adam, start, offset = resume.params, resume.stats, resume.adam, resume.step, resume.seconds
        if out is not None and (out / "train_log.csv").exists():
            log = [r for r in read_log(out / "train_log.csv") if r.step <= start]
        if out is not None and (out / "val_log.csv").exists():
            val_log = [r for r in read_log(out / "val_log.csv") if r.step <= start]
    else:
        stats = f32_stats(compute_norm_stats(list(train_set)))
        params = init_params(cfg.model, seed=cfg.seed)
        for t in params.parameters():
            t.requires_grad = True
        adam = AdamState.for_params([t.data for t in params.parameters()], lr=cfg.lr)
        start, offset = 0, 0.0

    a, b = clip_arrays(train_set, stats)
    va, vb = clip_arrays(val_set, stats) if val_set else (None, None)
    plist = params.parameters()
    t0 = time.perf_counter()

    def elapsed() -> float:
        return offset + time.perf_counter() - t0

    def flush(step: int, final: bool = False) -> Path | None:
        if out is None:
            return None
        atomic_write_bytes(out / "train_log.csv", format_log(log).encode())
        if val_log:
            atomic_write_bytes(out / "val_log.csv", format_log(val_log).encode())
        path = out / ("model.pidm" if final else f"ckpt_{step:07d}.pidm")
        save_checkpoint(path, params, cfg, stats=stats, adam=adam, step=step, seconds=elapsed())
        return path

    step = start
    for step in range(start + 1, cfg.iterations + 1):
        rng = step_rng(cfg.seed, step)
        fa, fb, _, _ = sample_batch(rng, a, b, cfg.batch_size)
        eps = rng.standard_normal((cfg.batch_size, cfg.z_dim)).astype(np.float32)
        params.zero_grad()
        lb = forward_loss(params, fa, fb, eps, cfg.lambda_kl, True, rng)
        rec = LogRecord(step, *lb.values(), elapsed())
        if not all(map(math.isfinite, rec.losses())):
            _abort(out, log, rec, "forward")
        try:
            backward(lb.total)
        except FloatingPointError as e:
            _abort(out, log, rec, str(e))
        adam_step([t.data for t in plist], [t.grad for t in plist], adam)
        log.append(rec)
        if progress is not None:
            progress(rec)
        if va is not None and step % cfg.val_every == 0:
            val_log.append(LogRecord(step, *validation_loss(params, va, vb, cfg, step), elapsed()))
        if step % cfg.ckpt_every == 0 and step < cfg.iterations:
            flush(step)
    final = flush(step, final=True)
    return TrainResult(params, stats, adam, log, val_log, step, final)


def _abort(out: Path | None, log: list[LogRecord], rec: LogRecord, detail: str):
    if out is not None:
        atomic_write_bytes(out / "train_log.csv", format_log(log).encode())
        atomic_write_bytes(out / "diverged.csv", format_log([rec]).encode())
    raise NonFiniteLossError(rec, detail)
