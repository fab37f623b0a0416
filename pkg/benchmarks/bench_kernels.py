"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--steps N]

Times each kernel on attention/layer-norm sized inputs, then a full desk
training step (forward + backward + Adam) with each backend swapped in.
"""
import argparse
import time
from contextlib import contextmanager

import numpy as np

from pidm.model import forward_loss, init_params
from pidm.numkernel import AdamState, adam_step, backend, backward
from pidm.trainer import TrainConfig

KERNELS = ("softmax_forward", "softmax_backward", "layernorm_forward", "layernorm_backward")


def best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


@contextmanager
def use_backend(mod):
    saved = {k: getattr(backend, k) for k in KERNELS}
    for k in KERNELS:
        setattr(backend, k, getattr(mod, k))
    try:
        yield
    finally:
        for k, v in saved.items():
            setattr(backend, k, v)


def kernel_cases(rng):
    # desk shapes: 8 clips x 4 heads x 101 queries over 102 keys; 8 x 101 tokens of width 64
    s = rng.standard_normal((8 * 4 * 101, 102)).astype(np.float32)
    x = rng.standard_normal((8 * 101, 64)).astype(np.float32)
    g, b = np.ones(64, np.float32), np.zeros(64, np.float32)
    return s, x, g, b


def bench_kernels(mods, repeat):
    s, x, g, b = kernel_cases(np.random.default_rng(0))
    rows = []
    for name, k in mods.items():
        y = k.softmax_forward(s)
        _, xhat, rstd = k.layernorm_forward(x, g, b, 1e-5)
        rows.append((name, {
            "softmax_forward": best_of(lambda: k.softmax_forward(s), repeat),
            "softmax_backward": best_of(lambda: k.softmax_backward(y, s), repeat),
            "layernorm_forward": best_of(lambda: k.layernorm_forward(x, g, b, 1e-5), repeat),
            "layernorm_backward": best_of(lambda: k.layernorm_backward(x, xhat, rstd, g), repeat),
        }))
    return rows


def bench_step(mods, steps):
    cfg = TrainConfig.from_preset("desk")
    rng = np.random.default_rng(1)
    fa = rng.standard_normal((cfg.batch_size, cfg.clip_frames, 59)).astype(np.float32)
    fb = rng.standard_normal((cfg.batch_size, cfg.clip_frames, 59)).astype(np.float32)
    eps = rng.standard_normal((cfg.batch_size, cfg.z_dim)).astype(np.float32)
    out = {}
    for name, k in mods.items():
        p = init_params(cfg.model, seed=0)
        plist = p.parameters()
        for t in plist:
            t.requires_grad = True
        adam = AdamState.for_params([t.data for t in plist], lr=cfg.lr)

        def step():
            p.zero_grad()
            lb = forward_loss(p, fa, fb, eps, cfg.lambda_kl, True, np.random.default_rng(2))
            backward(lb.total)
            adam_step([t.data for t in plist], [t.grad for t in plist], adam)

        with use_backend(k):
            out[name] = best_of(step, steps)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    mods = backend.available_backends()
    if "compiled" not in mods:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in mods) + ("   speedup" if len(mods) > 1 else ""))
    rows = dict(bench_kernels(mods, args.repeat))
    for k in KERNELS:
        ts = [rows[n][k] for n in mods]
        line = f"{k:<20}" + "".join(f"{t * 1e3:>10.3f}ms" for t in ts)
        if len(ts) > 1:
            line += f"{ts[0] / ts[1]:>9.2f}x"
        print(line)
    steps = bench_step(mods, args.steps)
    ts = [steps[n] for n in mods]
    line = f"{'desk train step':<20}" + "".join(f"{t * 1e3:>10.1f}ms" for t in ts)
    if len(ts) > 1:
        line += f"{ts[0] / ts[1]:>9.2f}x"
    print(line)


if __name__ == "__main__":
    main()
