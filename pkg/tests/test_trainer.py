import math

import numpy as np
import pytest

from pidm import trainer as tr
from pidm.dyaddata import SynthConfig, corpus_clips, synth_corpus
from pidm.model import generate, init_params
from pidm.trainer import (
    LOG_HEADER,
    PRESETS,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    NonFiniteLossError,
    TrainConfig,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    read_log,
    sample_batch,
    save_checkpoint,
    train,
)

TINY = dict(d_model=8, heads=2, ff=16, z_dim=4, clip_frames=10, batch_size=4, iterations=12,
            val_every=5, ckpt_every=5)


@pytest.fixture(scope="module")
def clips():
    sessions = synth_corpus(SynthConfig(seed=11, session_seconds=6), 4)
    return corpus_clips(sessions, 10, 24, seed=0)


def tiny(**kw):
    return TrainConfig.from_preset("desk", **{**TINY, **kw})


# -- config -------------------------------------------------------------------------


def test_presets():
    paper, desk = TrainConfig.from_preset("paper"), TrainConfig.from_preset("desk")
    assert (paper.lr, paper.batch_size, paper.iterations, paper.dropout, paper.lambda_kl) == (1e-5, 16, 800_000, 0.1, 1e-3)
    assert (desk.lr, desk.batch_size, desk.iterations, desk.d_model) == (1e-4, 8, 5_000, 64)
    assert set(PRESETS) == {"paper", "desk"}
    with pytest.raises(ValueError):
        TrainConfig.from_preset("huge")


def test_config_text_round_trip_and_parse():
    cfg = tiny(seed=3, lr=2.5e-4)
    assert TrainConfig.parse(cfg.to_text()) == cfg
    parsed = TrainConfig.parse("# comment\nlr = 0.001\nbatch_size=4  # inline\n")
    assert parsed.lr == 0.001 and parsed.batch_size == 4 and parsed.iterations == 5_000
    assert TrainConfig.parse("preset=paper\nseed=2").lr == 1e-5


@pytest.mark.parametrize("text", ["learning_rate=0.1", "lr=abc", "batch_size=2.5", "lr=0.1\nlr=0.2", "novalue",
                                  "dropout=1.0", "heads=3", "lr=-1"])
def test_config_rejections(text):
    with pytest.raises(ValueError):
        TrainConfig.parse(text)


# -- checkpoints ----------------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path, clips):
    res = train(tiny(), clips)
    save_checkpoint(tmp_path / "m.pidm", res.params, tiny(), stats=res.stats, adam=res.adam, step=res.step, seconds=1.5)
    ck = load_checkpoint(tmp_path / "m.pidm")
    assert ck.cfg == tiny() and ck.step == res.step and ck.seconds == 1.5
    for (n1, t1), (n2, t2) in zip(res.params.named_parameters(), ck.params.named_parameters()):
        assert n1 == n2 and t1.data.tobytes() == t2.data.tobytes()
    assert all(np.array_equal(x, y) for x, y in zip(res.adam.m, ck.adam.m))
    assert all(np.array_equal(x, y) for x, y in zip(res.adam.v, ck.adam.v))
    assert ck.adam.t == res.adam.t == res.step
    assert np.array_equal(ck.stats.mean, res.stats.mean) and np.array_equal(ck.stats.std, res.stats.std)
    raw = (tmp_path / "m.pidm").read_bytes()
    assert encode_checkpoint(ck.params, ck.cfg, ck.stats, ck.adam, ck.step, ck.seconds) == raw


def test_checkpoint_errors_are_distinct():
    cfg = tiny()
    raw = encode_checkpoint(init_params(cfg.model), cfg)
    with pytest.raises(CheckpointMagicError):
        decode_checkpoint(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(raw[:4] + (9).to_bytes(2, "little") + raw[6:])
    for cut in (3, 8, len(raw) // 2, len(raw) - 1):
        with pytest.raises(CheckpointTruncatedError):
            decode_checkpoint(raw[:cut])
    with pytest.raises(tr.CheckpointError):
        decode_checkpoint(raw + b"\0")


def test_checkpoint_rejects_non_float32():
    cfg = tiny()
    with pytest.raises(tr.CheckpointError):
        encode_checkpoint(init_params(cfg.model, dtype=np.float64), cfg)


def test_save_load_generate_identical(tmp_path, clips):
    res = train(tiny(iterations=6), clips, out_dir=tmp_path)
    ck = load_checkpoint(res.checkpoint)
    g1 = generate(clips[0].a, res.params, res.stats, 5)
    g2 = generate(clips[0].a, ck.params, ck.stats, 5)
    assert g1.frames.tobytes() == g2.frames.tobytes()


# -- training loop ------------------------------------------------------------------------


def test_training_outputs_on_disk(tmp_path, clips):
    res = train(tiny(), clips, clips[:8], out_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["ckpt_0000005.pidm", "ckpt_0000010.pidm", "model.pidm", "train_log.csv", "val_log.csv"]
    assert (tmp_path / "train_log.csv").read_text().splitlines()[0] == ",".join(LOG_HEADER)
    log = read_log(tmp_path / "train_log.csv")
    assert [r.step for r in log] == list(range(1, 13))
    assert [r.losses() for r in log] == [r.losses() for r in res.log]
    assert [r.step for r in read_log(tmp_path / "val_log.csv")] == [5, 10]
    assert all(abs(r.total - (r.rec + 1e-3 * r.kl)) < 1e-6 for r in log)


def test_same_seed_identical_logs_different_seed_not(clips):
    a, b, c = train(tiny(), clips), train(tiny(), clips), train(tiny(seed=1), clips)
    assert [r.losses() for r in a.log] == [r.losses() for r in b.log]
    assert [r.losses() for r in a.log] != [r.losses() for r in c.log]


def test_resume_matches_uninterrupted_run(tmp_path, clips):
    full = train(tiny(), clips, clips[:8], out_dir=tmp_path / "full")
    part = tmp_path / "part"
    # an interrupted run: stopped after step 7, its last periodic checkpoint is step 5
    train(tiny(iterations=7), clips, clips[:8], out_dir=part)
    resumed = train(tiny(), clips, clips[:8], out_dir=part, resume=load_checkpoint(part / "ckpt_0000005.pidm"))
    assert [r.losses() for r in resumed.log] == [r.losses() for r in full.log]
    assert [r.losses() for r in resumed.val_log] == [r.losses() for r in full.val_log]
    assert [r.losses() for r in read_log(part / "train_log.csv")] == [r.losses() for r in full.log]
    for t1, t2 in zip(full.params.parameters(), resumed.params.parameters()):
        assert t1.data.tobytes() == t2.data.tobytes()


def test_resume_requires_optimizer_state(clips):
    cfg = tiny()
    ck = decode_checkpoint(encode_checkpoint(init_params(cfg.model), cfg))
    with pytest.raises(ValueError):
        train(cfg, clips, resume=ck)


def test_empty_and_mismatched_training_sets(clips):
    with pytest.raises(ValueError, match="empty"):
        train(tiny(), [])
    with pytest.raises(ValueError):
        train(tiny(clip_frames=12), clips)


def test_role_swap_frequency_and_both_orientations():
    rng = np.random.default_rng(0)
    a = np.zeros((5, 3, 59), np.float32)
    b = np.ones((5, 3, 59), np.float32)
    fa, fb, idx, swap = sample_batch(rng, a, b, 1000)
    assert abs(swap.mean() - 0.5) < 0.05
    assert np.all(fa[swap] == 1) and np.all(fb[swap] == 0)
    assert np.all(fa[~swap] == 0) and np.all(fb[~swap] == 1)
    assert set(idx.tolist()) == set(range(5))


def test_non_finite_loss_aborts_with_diagnostics(tmp_path, clips, monkeypatch):
    real = tr.forward_loss

    def poisoned(p, fa, fb, eps, lam, train_mode, rng):
        out = real(p, fa, fb, eps, lam, train_mode, rng)
        if len(calls) == 3:
            out.total.data = np.float32(np.nan)
        calls.append(1)
        return out

    calls: list = []
    monkeypatch.setattr(tr, "forward_loss", poisoned)
    with pytest.raises(NonFiniteLossError) as info:
        train(tiny(), clips, out_dir=tmp_path)
    assert info.value.record.step == 4
    assert [r.step for r in read_log(tmp_path / "train_log.csv")] == [1, 2, 3]
    assert math.isnan(read_log(tmp_path / "diverged.csv")[0].total)
    assert not (tmp_path / "model.pidm").exists()


@pytest.mark.parametrize("seed", range(20))
def test_no_non_finite_losses_across_seeds(seed, clips):
    res = train(tiny(seed=seed, iterations=8, lr=1e-3), clips)
    assert all(math.isfinite(v) for r in res.log for v in r.losses())
    assert all(np.all(np.isfinite(t.data)) for t in res.params.parameters())
