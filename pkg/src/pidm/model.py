"""The interaction dynamics network.

Agent encoder: A's frames -> per-frame embeddings. Interaction encoder:
frame-wise [A; B] tokens behind two learned markers, whose outputs give the
latent log-variance and mean. Agent decoder: positional queries attend over
[z-token; agent embeddings] and emit B's frames.

All sequence tensors are batched, shape (B, T, ...). Unbatched (T, ...)
inputs are accepted and the batch axis is dropped again on output.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, fields

import numpy as np

from .dyaddata import N_FEATURES, FlameSequence, GroupStats, denormalize, normalize
from .numkernel import functional as F
from .numkernel.nn import (
    DecoderBlock,
    EncoderBlock,
    LayerNormParams,
    named_parameters,
    sinusoidal_positions,
    uniform_param,
    zeros_param,
)
from .numkernel.tensor import Tensor, concat, exp, mean, no_grad, square, tabs

N_LAYERS = 6


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    heads: int = 4
    ff: int = 128
    z_dim: int = 32
    layers: int = N_LAYERS
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.layers != N_LAYERS:
            raise ValueError(f"every sub-network has exactly {N_LAYERS} blocks")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class ModelParams:
    ea_in_w: Tensor
    ea_in_b: Tensor
    ea_blocks: list[EncoderBlock]
    ea_ln: LayerNormParams
    ei_in_w: Tensor
    ei_in_b: Tensor
    var_marker: Tensor
    mean_marker: Tensor
    ei_blocks: list[EncoderBlock]
    ei_ln: LayerNormParams
    mu_w: Tensor
    mu_b: Tensor
    logvar_w: Tensor
    logvar_b: Tensor
    z_w: Tensor
    z_b: Tensor
    da_blocks: list[DecoderBlock]
    da_ln: LayerNormParams
    out_w: Tensor
    out_b: Tensor
    config: ModelConfig = field(default_factory=ModelConfig)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for f in fields(self):
            if f.name != "config":
                out.extend(named_parameters(getattr(self, f.name), f.name))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        named = dict(self.named_parameters())
        missing = set(named) - set(state)
        extra = set(state) - set(named)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)[:3]} unexpected={sorted(extra)[:3]}")
        for n, t in named.items():
            arr = np.asarray(state[n])
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    @property
    def dtype(self):
        return self.out_w.dtype


def init_params(
    config: ModelConfig, seed: int = 0, dtype=np.float32, zero_output_head: bool = True
) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights; the output head starts at zero so the model predicts the mean."""
    rng = np.random.default_rng(seed)
    d, h, ff, zd = config.d_model, config.heads, config.ff, config.z_dim
    u = lambda shape, fan: uniform_param(rng, shape, fan, dtype)  # noqa: E731
    p = ModelParams(
        ea_in_w=u((N_FEATURES, d), N_FEATURES),
        ea_in_b=u((d,), N_FEATURES),
        ea_blocks=[EncoderBlock.init(rng, d, h, ff, dtype) for _ in range(config.layers)],
        ea_ln=LayerNormParams.init(d, dtype),
        ei_in_w=u((2 * N_FEATURES, d), 2 * N_FEATURES),
        ei_in_b=u((d,), 2 * N_FEATURES),
        var_marker=u((d,), d),
        mean_marker=u((d,), d),
        ei_blocks=[EncoderBlock.init(rng, d, h, ff, dtype) for _ in range(config.layers)],
        ei_ln=LayerNormParams.init(d, dtype),
        mu_w=u((d, zd), d),
        mu_b=u((zd,), d),
        logvar_w=u((d, zd), d),
        logvar_b=u((zd,), d),
        z_w=u((zd, d), zd),
        z_b=u((d,), zd),
        da_blocks=[DecoderBlock.init(rng, d, h, ff, dtype) for _ in range(config.layers)],
        da_ln=LayerNormParams.init(d, dtype),
        out_w=zeros_param((d, N_FEATURES), dtype) if zero_output_head else u((d, N_FEATURES), d),
        out_b=zeros_param((N_FEATURES,), dtype) if zero_output_head else u((N_FEATURES,), d),
        config=config,
    )
    for name, t in p.named_parameters():
        t.name = name
    return p


@dataclass
class LatentSample:
    mu: Tensor
    logvar: Tensor
    z: Tensor


@dataclass
class LossBreakdown:
    total: Tensor
    rec: Tensor
    kl: Tensor
    lambda_kl: float

    def values(self) -> tuple[float, float, float]:
        return float(self.total.data), float(self.rec.data), float(self.kl.data)


def _batched(x, dtype) -> tuple[Tensor, bool]:
    if isinstance(x, FlameSequence):
        x = x.frames
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))
    if t.data.dtype != dtype:
        t = Tensor(t.data.astype(dtype))
    if t.ndim == 2:
        return t.reshape(1, *t.shape), True
    if t.ndim != 3:
        raise ValueError(f"expected (T, F) or (B, T, F) input, got {t.shape}")
    return t, False


@functools.lru_cache(maxsize=32)
def _positions(T: int, d: int, dtype) -> np.ndarray:
    table = sinusoidal_positions(T, d, dtype)
    table.flags.writeable = False
    return table


def encode_agent(f_a, p: ModelParams, train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """A's normalized frames (B, T, 59) -> embeddings (B, T, d)."""
    x, squeeze = _batched(f_a, p.dtype)
    if x.shape[-1] != N_FEATURES:
        raise ValueError(f"agent encoder expects {N_FEATURES} features, got {x.shape[-1]}")
    cfg = p.config
    h = F.broadcast_add(F.linear(x, p.ea_in_w, p.ea_in_b), _positions(x.shape[1], cfg.d_model, p.dtype.type))
    for blk in p.ea_blocks:
        h = blk(h, train_mode, cfg.dropout, rng)
    h = p.ea_ln(h)
    return h.reshape(*h.shape[1:]) if squeeze else h


def encode_interaction(
    f_a, f_b, p: ModelParams, train_mode: bool = False, rng: np.random.Generator | None = None
) -> tuple[Tensor, Tensor]:
    """Return (mu, logvar), each (B, z_dim), read off the [mean] and [var] marker outputs."""
    a, squeeze = _batched(f_a, p.dtype)
    b, _ = _batched(f_b, p.dtype)
    if a.shape != b.shape:
        raise ValueError(f"agent sequences differ in shape: {a.shape} vs {b.shape}")
    if a.shape[-1] != N_FEATURES:
        raise ValueError(f"interaction encoder expects {N_FEATURES} features per agent")
    cfg = p.config
    B, T, _ = a.shape
    d = cfg.d_model
    tokens = F.linear(concat([a, b], axis=-1), p.ei_in_w, p.ei_in_b)
    tokens = F.broadcast_add(tokens, _positions(T, d, p.dtype.type))
    ones = Tensor(np.ones((B, 1, d), dtype=p.dtype))
    markers = concat([ones * p.var_marker, ones * p.mean_marker], axis=1)
    h = concat([markers, tokens], axis=1)
    for blk in p.ei_blocks:
        h = blk(h, train_mode, cfg.dropout, rng)
    h = p.ei_ln(h)
    logvar = F.linear(h[:, 0, :], p.logvar_w, p.logvar_b)
    mu = F.linear(h[:, 1, :], p.mu_w, p.mu_b)
    if squeeze:
        return mu.reshape(mu.shape[-1]), logvar.reshape(logvar.shape[-1])
    return mu, logvar


def reparameterize(mu, logvar, eps) -> LatentSample:
    """z = mu + exp(logvar / 2) * eps."""
    mu = mu if isinstance(mu, Tensor) else Tensor(np.asarray(mu))
    logvar = logvar if isinstance(logvar, Tensor) else Tensor(np.asarray(logvar, dtype=mu.dtype))
    eps = np.asarray(eps, dtype=mu.dtype)
    if mu.shape != logvar.shape or mu.shape != eps.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape}, logvar {logvar.shape}, eps {eps.shape}")
    z = mu + exp(logvar * 0.5) * Tensor(eps)
    return LatentSample(mu, logvar, z)


def decode_agent(
    z, agent_emb: Tensor, p: ModelParams, train_mode: bool = False, rng: np.random.Generator | None = None
) -> Tensor:
    """Positional zero queries attend over [z-token; agent embeddings] -> normalized B frames (B, T, 59)."""
    if isinstance(z, LatentSample):
        z = z.z
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=p.dtype))
    squeeze = agent_emb.ndim == 2
    if squeeze:
        agent_emb = agent_emb.reshape(1, *agent_emb.shape)
        z = z.reshape(1, z.shape[-1])
    cfg = p.config
    B, T, d = agent_emb.shape
    if z.shape != (B, cfg.z_dim):
        raise ValueError(f"z must have shape ({B}, {cfg.z_dim}), got {z.shape}")
    z_tok = F.linear(z, p.z_w, p.z_b).reshape(B, 1, d)
    memory = concat([z_tok, agent_emb], axis=1)
    queries = Tensor(np.broadcast_to(_positions(T, d, p.dtype.type), (B, T, d)).copy())
    h = queries
    for blk in p.da_blocks:
        h = blk(h, memory, train_mode, cfg.dropout, rng)
    out = F.linear(p.da_ln(h), p.out_w, p.out_b)
    return out.reshape(T, N_FEATURES) if squeeze else out


def kl_divergence(mu: Tensor, logvar: Tensor) -> Tensor:
    """0.5 * sum_j (mu^2 + exp(logvar) - logvar - 1), averaged over any batch axis."""
    per = (square(mu) + exp(logvar) - logvar - 1.0).sum(axis=-1) * 0.5
    return mean(per) if per.ndim else per


def loss(f_b_hat: Tensor, f_b, mu, logvar, lambda_kl: float = 1e-3) -> LossBreakdown:
    """L1 reconstruction (mean over all entries) plus lambda_kl * KL."""
    f_b = f_b if isinstance(f_b, Tensor) else Tensor(np.asarray(f_b, dtype=f_b_hat.dtype))
    mu = mu if isinstance(mu, Tensor) else Tensor(np.asarray(mu, dtype=f_b_hat.dtype))
    logvar = logvar if isinstance(logvar, Tensor) else Tensor(np.asarray(logvar, dtype=f_b_hat.dtype))
    if f_b_hat.shape != f_b.shape:
        raise ValueError(f"prediction/target shape mismatch: {f_b_hat.shape} vs {f_b.shape}")
    rec = mean(tabs(f_b_hat - f_b))
    kl = kl_divergence(mu, logvar)
    return LossBreakdown(rec + kl * float(lambda_kl), rec, kl, float(lambda_kl))


def forward_loss(
    p: ModelParams,
    f_a: np.ndarray,
    f_b: np.ndarray,
    eps: np.ndarray,
    lambda_kl: float,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> LossBreakdown:
    """Full training objective on a normalized batch (B, T, 59)."""
    mu, logvar = encode_interaction(f_a, f_b, p, train_mode, rng)
    latent = reparameterize(mu, logvar, eps)
    emb = encode_agent(f_a, p, train_mode, rng)
    f_b_hat = decode_agent(latent, emb, p, train_mode, rng)
    return loss(f_b_hat, f_b, mu, logvar, lambda_kl)


def predict_normalized(p: ModelParams, f_a: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Eval-mode decode of normalized A (B, T, 59) with given latent draws (B, z_dim)."""
    with no_grad():
        emb = encode_agent(f_a, p, False)
        out = decode_agent(Tensor(np.asarray(z, dtype=p.dtype)), emb, p, False)
    return out.data


def generate(f_a: FlameSequence, p: ModelParams, stats: GroupStats, rng_seed: int) -> FlameSequence:
    """Sample z ~ N(0, I) and decode B's response to ``f_a`` (raw, unnormalized space)."""
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((1, p.config.z_dim))
    a = normalize(f_a, stats).frames[None]
    out = predict_normalized(p, a, z)[0]
    return denormalize(FlameSequence(out.astype(f_a.frames.dtype, copy=False), f_a.fps), stats)
