"""Shared fixtures: the acceptance corpus and cached desk-preset trainings.

Trained checkpoints are cached under pytest's cache directory, keyed by a
hash of the package sources and the run configuration, so a rerun with
unchanged code skips the hour of training. Set ``PIDM_RETRAIN=1`` to force
fresh runs. The recorded training time travels with each checkpoint.
"""
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pytest

ACCEPT_SEEDS = (0, 1, 2)
DATA_SEED = 0

_RESULTS: list[str] = []


def _source_digest() -> str:
    import pidm

    root = Path(pidm.__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx"):
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def _train_one(seed: int, out_dir: str) -> float:
    from pidm.dyaddata import experiment_splits
    from pidm.trainer import TrainConfig, train

    sp = experiment_splits(DATA_SEED)
    t = time.perf_counter()
    train(TrainConfig.from_preset("desk", seed=seed), sp.train, None, out_dir=out_dir)
    return time.perf_counter() - t


@pytest.fixture(scope="session")
def splits():
    from pidm.dyaddata import experiment_splits

    return experiment_splits(DATA_SEED)


@pytest.fixture(scope="session")
def trained(request):
    """{seed: Checkpoint} for desk-preset runs on the acceptance corpus, plus wall time of the batch."""
    from pidm.trainer import TrainConfig, load_checkpoint

    key = hashlib.sha256((_source_digest() + TrainConfig.from_preset("desk").to_text()).encode()).hexdigest()[:16]
    root = Path(request.config.cache.mkdir(f"pidm-desk-{key}"))
    meta = root / "meta.json"
    missing = [s for s in ACCEPT_SEEDS if not (root / f"seed{s}" / "model.pidm").exists()]
    if os.environ.get("PIDM_RETRAIN") == "1":
        missing = list(ACCEPT_SEEDS)
    info = json.loads(meta.read_text()) if meta.exists() else {}
    if missing:
        workers = max(1, min(len(missing), os.cpu_count() or 1))
        t = time.perf_counter()
        if workers == 1:
            for s in missing:
                _train_one(s, str(root / f"seed{s}"))
        else:
            with ProcessPoolExecutor(workers) as ex:
                list(ex.map(_train_one, missing, [str(root / f"seed{s}") for s in missing]))
        info = {"wall_seconds": time.perf_counter() - t, "workers": workers, "seeds": missing, "cached": False}
        meta.write_text(json.dumps(info))
    else:
        info["cached"] = True
    cks = {s: load_checkpoint(root / f"seed{s}" / "model.pidm") for s in ACCEPT_SEEDS}
    return cks, info


@pytest.fixture
def report(request):
    """Record and print a one-line PASS/FAIL verdict for an acceptance criterion."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(criterion: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        _RESULTS.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow on first run)")
