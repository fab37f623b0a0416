import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidm.dyaddata import (
    BadMagicError,
    Coupling,
    DyadClip,
    FlameSequence,
    GroupStats,
    SynthConfig,
    TruncatedPayloadError,
    VersionMismatchError,
    compute_norm_stats,
    corpus_clips,
    denormalize,
    experiment_splits,
    lagged_xcorr,
    load_dataset,
    normalize,
    read_fseq,
    read_manifest,
    running_average,
    slide_windows,
    synth_corpus,
    synth_session,
    window_count,
    write_fseq,
    write_manifest,
)
from pidm.dyaddata.fseq import decode_fseq, encode_fseq


def seq(frames, fps=10.0):
    return FlameSequence(np.asarray(frames, dtype=np.float64), fps)


def one_feature(values):
    f = np.zeros((len(values), 59))
    f[:, 0] = values
    return seq(f)


def random_clip(rng, T=30, session="s", coupling=Coupling.COUPLED):
    return DyadClip(
        FlameSequence(rng.standard_normal((T, 59)).astype(np.float32), 10.0),
        FlameSequence(rng.standard_normal((T, 59)).astype(np.float32), 10.0),
        session_id=session,
        coupling=coupling,
    )


# -- sequence types ---------------------------------------------------------------


def test_flame_sequence_validation():
    with pytest.raises(ValueError):
        seq(np.zeros((5, 58)))
    with pytest.raises(ValueError):
        seq(np.zeros((0, 59)))
    with pytest.raises(ValueError):
        seq(np.full((2, 59), np.nan))
    with pytest.raises(ValueError):
        seq(np.zeros((2, 59)), fps=0)
    s = seq(np.arange(59 * 2).reshape(2, 59))
    assert s.group("pose").shape == (2, 6) and s.group("rotation").shape == (2, 3)


def test_dyad_clip_requires_matching_halves():
    with pytest.raises(ValueError):
        DyadClip(seq(np.zeros((3, 59))), seq(np.zeros((4, 59))))
    with pytest.raises(ValueError):
        DyadClip(seq(np.zeros((3, 59)), 10), seq(np.zeros((3, 59)), 25))


# -- smoothing --------------------------------------------------------------------


def test_running_average_examples():
    out = running_average(one_feature([0, 0, 5, 0, 0]), 5).frames[:, 0]
    assert out[2] == pytest.approx(1.0)
    assert out[0] == pytest.approx(5 / 3)
    const = seq(np.full((7, 59), 2.5))
    np.testing.assert_array_equal(running_average(const).frames, const.frames)


def test_running_average_even_window_rejected():
    with pytest.raises(ValueError):
        running_average(one_feature([1, 2, 3]), 4)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.sampled_from([1, 3, 5, 7]), st.integers(0, 2**31 - 1))
def test_running_average_stays_in_range(T, window, seed):
    x = np.random.default_rng(seed).standard_normal((T, 59)) * 100
    y = running_average(seq(x), window).frames
    assert y.shape == x.shape
    assert np.all(y >= x.min(axis=0)) and np.all(y <= x.max(axis=0))


# -- windowing --------------------------------------------------------------------


@pytest.mark.parametrize("T,W,s,n", [(120, 100, 1, 21), (100, 100, 1, 1), (99, 100, 1, 0)])
def test_slide_windows_examples(T, W, s, n):
    clip = random_clip(np.random.default_rng(0), T)
    wins = slide_windows(clip, W, s)
    assert len(wins) == n
    for k, w in enumerate(wins):
        assert w.start_frame == k * s and w.T == W
        np.testing.assert_array_equal(w.b.frames, clip.b.frames[k * s : k * s + W])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 80), st.integers(1, 90), st.integers(1, 12))
def test_window_count_closed_form(T, W, s):
    expected = (T - W) // s + 1 if T >= W else 0
    assert window_count(T, W, s) == expected
    clip = DyadClip(seq(np.zeros((T, 59))), seq(np.zeros((T, 59))))
    assert len(slide_windows(clip, W, s)) == expected


def test_slide_windows_rejects_bad_arguments():
    clip = random_clip(np.random.default_rng(0), 10)
    with pytest.raises(ValueError):
        slide_windows(clip, 0, 1)
    with pytest.raises(ValueError):
        slide_windows(clip, 5, 0)


# -- normalization ----------------------------------------------------------------


def test_norm_stats_constant_data_floors_std():
    c = DyadClip(seq(np.full((4, 59), 3.0)), seq(np.full((4, 59), 3.0)))
    st_ = compute_norm_stats([c])
    np.testing.assert_allclose(st_.mean, 3.0)
    np.testing.assert_array_equal(st_.std, 1e-6)


def test_norm_stats_law_of_large_numbers():
    rng = np.random.default_rng(1)
    clips = [random_clip(rng, 1000) for _ in range(5)]  # 10,000 frames pooled over both agents
    st_ = compute_norm_stats(clips)
    assert np.abs(st_.mean).max() < 0.05
    assert np.abs(st_.std - 1).max() < 0.05


def test_norm_stats_empty_rejected():
    with pytest.raises(ValueError):
        compute_norm_stats([])


def test_normalize_examples_and_round_trip():
    rng = np.random.default_rng(2)
    st_ = GroupStats(rng.standard_normal(59), rng.uniform(0.1, 3.0, 59))
    np.testing.assert_allclose(normalize(seq(st_.mean[None]), st_).frames, 0.0, atol=1e-12)
    np.testing.assert_allclose(normalize(seq((st_.mean + st_.std)[None]), st_).frames, 1.0, atol=1e-12)
    x = seq(rng.standard_normal((20, 59)) * 5)
    np.testing.assert_allclose(denormalize(normalize(x, st_), st_).frames, x.frames, atol=1e-5)
    x32 = FlameSequence(x.frames.astype(np.float32), 10.0)
    np.testing.assert_allclose(denormalize(normalize(x32, st_), st_).frames, x32.frames, atol=1e-5)


# -- synthetic sessions --------------------------------------------------------------


def mean_max_xcorr(clip, max_lag=10):
    xc = lagged_xcorr(clip.a.frames, clip.b.frames, max_lag)
    return xc.max(axis=0).mean(), int(np.argmax(xc.mean(axis=1))) - max_lag


def test_synth_deterministic():
    cfg = SynthConfig(seed=5, session_seconds=30)
    a, b = synth_session(cfg), synth_session(cfg)
    assert np.array_equal(a.a.frames, b.a.frames) and np.array_equal(a.b.frames, b.b.frames)
    assert a.T == 300 and a.a.frames.dtype == np.float32


def test_synth_coupled_cross_correlation_and_lag():
    cfg = SynthConfig(seed=3, coupled=True, gain=0.8, delay_s=0.5, noise=0.1)
    r, lag = mean_max_xcorr(synth_session(cfg))
    assert r > 0.4
    assert abs(lag - 5) <= 2


def test_synth_decoupled_cross_correlation_low():
    r, _ = mean_max_xcorr(synth_session(SynthConfig(seed=3, coupled=False)))
    assert r < 0.2


def test_synth_coupled_beats_decoupled_over_seeds():
    for seed in range(20):
        c, _ = mean_max_xcorr(synth_session(SynthConfig(seed=seed, session_seconds=40)))
        d, _ = mean_max_xcorr(synth_session(SynthConfig(seed=seed, session_seconds=40, coupled=False)))
        assert c > d


def test_synth_config_validation():
    for bad in (dict(delay_s=-1), dict(gain=1.5), dict(fps=0), dict(latent_count=0)):
        with pytest.raises(ValueError):
            SynthConfig(**bad)


def test_corpus_sessions_distinct_and_clips_round_robin():
    sessions = synth_corpus(SynthConfig(seed=1, session_seconds=20), 4)
    assert len({s.a.frames.tobytes() for s in sessions}) == 4
    clips = corpus_clips(sessions, 50, 12, seed=0)
    assert [c.session_id for c in clips[:4]] == [s.session_id for s in sessions]
    assert len({(c.session_id, c.start_frame) for c in clips}) == 12
    with pytest.raises(ValueError):
        corpus_clips(sessions, 500, 3, seed=0)


def test_experiment_splits_are_session_disjoint():
    sp = experiment_splits(0, train_sessions=4, train_clips=8, test_sessions=4, test_clips=8, stillface_clips=4,
                           base=SynthConfig(session_seconds=20))
    train_ids = {c.session_id for c in sp.train}
    test_ids = {c.session_id for c in sp.test}
    assert not train_ids & test_ids
    assert len(sp.coupled) == len(sp.decoupled) == 4
    assert all(c.coupling == Coupling.DECOUPLED for c in sp.decoupled)
    assert all(c.coupling == Coupling.COUPLED for c in sp.coupled)
    assert not np.array_equal(sp.train[0].a.frames, sp.test[0].a.frames)


# -- FSEQ ----------------------------------------------------------------------------


def test_fseq_round_trip_bit_exact(tmp_path):
    clip = random_clip(np.random.default_rng(3), 17, coupling=Coupling.DECOUPLED)
    write_fseq(tmp_path / "x.fseq", clip)
    back = read_fseq(tmp_path / "x.fseq")
    assert back.a.frames.tobytes() == clip.a.frames.tobytes()
    assert back.b.frames.tobytes() == clip.b.frames.tobytes()
    assert back.fps == clip.fps and back.coupling == Coupling.DECOUPLED and back.session_id == "x"
    assert encode_fseq(back) == encode_fseq(clip)


def test_fseq_header_layout():
    raw = encode_fseq(random_clip(np.random.default_rng(4), 3))
    assert raw[:4] == b"FSQ1"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert np.frombuffer(raw[6:10], "<f4")[0] == 10.0
    assert int.from_bytes(raw[10:14], "little") == 3
    assert int.from_bytes(raw[14:18], "little") == 59
    assert raw[18] == 1 and raw[19:22] == b"\0\0\0"
    assert len(raw) == 22 + 2 * 3 * 59 * 4


def test_fseq_errors_are_distinct():
    raw = encode_fseq(random_clip(np.random.default_rng(5), 4))
    with pytest.raises(BadMagicError):
        decode_fseq(b"XXXX" + raw[4:])
    with pytest.raises(VersionMismatchError):
        decode_fseq(raw[:4] + (2).to_bytes(2, "little") + raw[6:])
    with pytest.raises(TruncatedPayloadError):
        decode_fseq(raw[:-1])
    with pytest.raises(TruncatedPayloadError):
        decode_fseq(raw[:10])


def test_manifest_and_dataset(tmp_path):
    rng = np.random.default_rng(6)
    (tmp_path / "sub").mkdir()
    names = ["sub/a.fseq", "b.fseq"]
    for n in names:
        write_fseq(tmp_path / n, random_clip(rng, 12))
    write_manifest(tmp_path / "manifest.txt", names)
    assert [p.name for p in read_manifest(tmp_path / "manifest.txt")] == ["a.fseq", "b.fseq"]
    ds = load_dataset(tmp_path)
    assert [c.session_id for c in ds] == ["a", "b"]
    assert not list(tmp_path.glob("*.tmp")) and not list(tmp_path.glob(".*"))
