import os

import pytest

from ifmimage.config import IfmConfig, InterferometerModel

GLYPH_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "glyphs")


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    # keep run history and the default config out of the real home directory
    home = tmp_path / "home"
    monkeypatch.setenv("IFMIMAGE_HOME", str(home))
    monkeypatch.setenv("HOME", str(home))
    monkeypatch.delenv("IFMIMAGE_OUTPUT_ROOT", raising=False)
    yield home


@pytest.fixture
def ideal_model():
    return InterferometerModel()


@pytest.fixture
def calibrated_ifm():
    return IfmConfig(transmissivity=0.5, reflectivity=0.5, mode_overlap=0.699)


@pytest.fixture
def glyph_path():
    def _path(name):
        return os.path.join(GLYPH_DIR, f"{name}.pgm")
    return _path


def pytest_addoption(parser):
    # Add a command-line option for enabling slow tests
    parser.addoption(
        "--enable-slow", action="store_true", default=False, help="Run slow tests"
    )

def pytest_collection_modifyitems(config, items):
    if config.getoption("--enable-slow"):
        return

    skip_slow = pytest.mark.skip(reason="Need --enable-slow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
