import numpy as np
import pytest

from flashipa.geometry import FrameSet, RigidTransform, random_rototranslation
from flashipa.pair_features import FactorizedPair
from flashipa.tensor_core import Rng, gaussian

ACCEPTANCE_LINES: list[str] = []


def random_frames(rng: Rng, length: int, translation_scale: float = 3.0) -> FrameSet:
    Ts = [random_rototranslation(rng, translation_scale) for _ in range(length)]
    return FrameSet(RigidTransform(np.stack([T.rotation for T in Ts]), np.stack([T.translation for T in Ts])))


def random_factors(rng: Rng, length: int, rank: int, d_z: int) -> FactorizedPair:
    return FactorizedPair(gaussian(rng, (length, rank, d_z)), gaussian(rng, (length, rank, d_z)))


@pytest.fixture
def rng():
    return Rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
