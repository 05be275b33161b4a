import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from actorgraph.association import EmbedderConfig, train_embedder
from actorgraph.synthgen import ScenarioSpec, generate_clip

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def small_spec():
    return ScenarioSpec(T=12, sigma_feat=0.5)


@pytest.fixture(scope="session")
def small_clips(small_spec):
    return [generate_clip(small_spec, 5, k)[0] for k in range(12)]


@pytest.fixture(scope="session")
def small_embedder(small_clips):
    model, _ = train_embedder(small_clips, EmbedderConfig(iters=60))
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ---------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record():
    """``record(n, title, ok, detail)`` registers one acceptance line; returns ``ok``."""
    def _record(n: int, title: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = (title, bool(ok), detail)
        print(f"criterion {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
        return bool(ok)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
