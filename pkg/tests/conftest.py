import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import pytest  # noqa: E402

from hscvad.synthetic import ScenarioConfig, generate_mixture_dataset  # noqa: E402

SMALL = dict(train_videos_per_scene=3, test_videos_per_scene=3, clips_per_video=6, test_clips_per_video=6, seed=5)


@pytest.fixture(scope="session")
def small_data():
    """(train, test, ground truth) of a reduced two-scene scenario."""
    return generate_mixture_dataset(ScenarioConfig(**SMALL))


@pytest.fixture(scope="session")
def small_state(small_data):
    """Stage-1 model trained briefly on ``small_data`` (do not mutate)."""
    from hscvad.pipeline import fit
    from hscvad.training import TrainConfig

    return fit(small_data[0], TrainConfig(epochs=4, batch_size=32, seed=1))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion ")[1].split()[0])):
            terminalreporter.write_line(line)
