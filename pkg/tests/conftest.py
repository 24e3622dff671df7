from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import fixtures  # noqa: E402


@pytest.fixture
def onet_dir(tmp_path: Path) -> Path:
    return fixtures.write_onet_dir(tmp_path)


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    """Full working tree; returns the config.yaml path."""
    return fixtures.write_workspace(tmp_path)
