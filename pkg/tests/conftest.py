"""Shared fixtures: the seed-42 synthetic corpus and models trained on it."""

import time

import pytest

from gaitgate import dataio, encoder, evaluation, signal, synth, trainer

MASTER_SEED = 42
SESSION_SEC = 150.0
USER_IDS = tuple(f"u{i:02d}" for i in range(20))

# PASS/FAIL lines appended by the acceptance tests, echoed after the run.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def build_corpus_sessions():
    """20 users, 4 sessions each under slightly different conditions."""
    mods = [synth.mild_modifier(str(i)) for i in range(4)]
    out = {}
    for ui, uid in enumerate(USER_IDS):
        prof = synth.generate_profile(MASTER_SEED + ui)
        out[uid] = [
            synth.synth_session(prof, mod, SESSION_SEC, session_seed=si)
            for si, mod in enumerate(mods)
        ]
    return out


@pytest.fixture(scope="session")
def corpus_sessions():
    return build_corpus_sessions()


@pytest.fixture(scope="session")
def corpus_dataset(corpus_sessions):
    stft = signal.StftConfig()
    windows = [
        dataio.window_session(uid, f"{uid}_s{si}", s, 10.0, 0.5, stft)
        for uid, sessions in corpus_sessions.items()
        for si, s in enumerate(sessions)
    ]
    return dataio.WindowedDataset(windows)


@pytest.fixture(scope="session")
def corpus_fold():
    return evaluation.FoldSpec(
        index=0,
        train=USER_IDS[:12],
        val=USER_IDS[12:16],
        test=USER_IDS[16:20],
    )


@pytest.fixture(scope="session")
def trained(corpus_dataset, corpus_fold):
    """Full training run on the corpus with stock settings. Takes a few minutes."""
    enc_cfg = encoder.EncoderConfig(input_shape=(65, 14), init_seed=MASTER_SEED)
    cfg = trainer.TrainConfig(rng_seed=MASTER_SEED)
    t0 = time.monotonic()
    result = trainer.fit(corpus_dataset, corpus_fold, cfg, enc_cfg)
    elapsed = time.monotonic() - t0
    return result, enc_cfg, elapsed


@pytest.fixture(scope="session")
def trained_model(trained):
    result, enc_cfg, _ = trained
    return encoder.GaitModel(result.params, enc_cfg, signal.StftConfig())


@pytest.fixture(scope="session")
def tiny_model():
    """Small untrained encoder, enough for exercising plumbing contracts."""
    enc_cfg = encoder.EncoderConfig(
        input_shape=(65, 14), conv_channels=(4, 8), embedding_dim=16, init_seed=7
    )
    params = encoder.init_params(enc_cfg)
    return encoder.GaitModel(params, enc_cfg, signal.StftConfig())
