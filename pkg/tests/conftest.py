import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mpseg.phantom import generate_phantom, two_sphere_spec
from mpseg.volume import LabelVolume, Volume, VolumeGeometry

_ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_runtest_logreport(report):
    if report.when == "setup" and report.skipped and "test_acceptance" in report.nodeid:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else report.longrepr
        record_acceptance(f"[SKIP] {report.nodeid.split('::')[-1]}: {reason}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def two_sphere():
    """Mirrored two-sphere phantom at acceptance scale (64 cubed, gap 3)."""
    vol, lab = generate_phantom(two_sphere_spec(noise_sd=15.0, seed=11))
    return vol, lab


@pytest.fixture(scope="session")
def small_two_sphere():
    """Smaller variant for quicker unit tests."""
    vol, lab = generate_phantom(
        two_sphere_spec(dims=(32, 32, 32), radius_mm=6.0, surface_gap_mm=3.0,
                        gap_vox=3.0, seed=3))
    return vol, lab


def make_volume(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data, dtype=np.float32)
    return Volume(VolumeGeometry(data.shape, spacing, origin), data)


def make_labels(labels, num_classes, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    labels = np.asarray(labels)
    return LabelVolume(VolumeGeometry(labels.shape, spacing, origin), labels, num_classes)
