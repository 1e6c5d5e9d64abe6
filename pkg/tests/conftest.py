import pytest

from ino import Repository, VirtualClock
from ino.store import ObjectStore


@pytest.fixture
def vclock():
    return VirtualClock()


@pytest.fixture
def store(tmp_path, vclock):
    s = ObjectStore(tmp_path / "data", clock=vclock)
    yield s
    s.close()


@pytest.fixture
def repo(tmp_path, vclock):
    r = Repository(tmp_path / "data", clock=vclock)
    yield r
    r.close()
