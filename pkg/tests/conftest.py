import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from multitsf.synthgen import GenConfig, generate_episodes  # noqa: E402
from multitsf.trainkit import RunConfig  # noqa: E402

SMALL_GEN = GenConfig(n_views=2, t_raw=24, n_classes=3, n_events=2, channels=1, height=8, width=8, n_freq=8,
                      min_len=3, max_len=8)


def small_run(**kw) -> RunConfig:
    base = dict(t=8, patch=4, d_audio=8, d_visual=8, d_temporal=8, encoder_heads=2, temporal_heads=2,
                fusion_heads=2, batch_size=4, epochs=2, lr=1e-3)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def small_episodes():
    return {e.episode_id: e for e in generate_episodes(12, SMALL_GEN, 5)}


CRITERIA: dict[int, str] = {}


def record_criterion(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    CRITERIA[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
