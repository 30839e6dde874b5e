import numpy as np
import pytest

from rffs.data import SceneSpec, sample_block, synth_scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene():
    cloud, class_map = synth_scene(SceneSpec())
    return cloud, class_map


@pytest.fixture(scope="session")
def block_4096(scene):
    cloud, _ = scene
    return cloud.subset(sample_block(len(cloud), 4096, seed=0))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
