import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from neurostream import kernels  # noqa: E402

BACKENDS = kernels.available()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per kernel backend (compiled and numpy)."""
    mod = BACKENDS[request.param]
    for name in ("sosfilt", "vol2col", "col2vol", "maxpool3d", "maxunpool3d"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


# -- acceptance reporting ----------------------------------------------------

ACCEPTANCE_LINES = []


def record_criterion(name, passed, detail):
    ACCEPTANCE_LINES.append((name, passed, detail))


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


# -- shared expensive runs ---------------------------------------------------

@pytest.fixture(scope="session")
def synthetic_chunks():
    from neurostream.core import default_grid
    from neurostream.dataset import chunks_from_recording
    from neurostream.synthetic import synthetic_eeg

    labels = default_grid().labels
    raw = synthetic_eeg(labels, 512.0, 12.0, seed=1)
    return chunks_from_recording(raw, labels, 512.0)


@pytest.fixture(scope="session")
def overfit_run(synthetic_chunks):
    """Train on 32 synthetic chunks for 200 epochs; shared by the autoencoder and acceptance tests."""
    import time

    from neurostream.autoencoder import AutoencoderModel, TrainConfig, evaluate_mse, train

    t0 = time.perf_counter()
    x = synthetic_chunks[:32]
    model = AutoencoderModel(seed=0)
    model.fit_normalization(x)
    initial = evaluate_mse(model, x)
    cfg = TrainConfig(epochs=200, batch_size=8, lr=1e-3, holdout=0.0, normalize=True, seed=0)
    result = train(model, x, cfg)
    final = evaluate_mse(model, x)
    return {"x": x, "model": model, "initial": initial, "final": final, "result": result,
            "seconds": time.perf_counter() - t0}
