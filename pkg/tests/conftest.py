from __future__ import annotations

import pytest

from twostepbft.crypto import Keyring
from twostepbft.messages import Config, make_genesis


@pytest.fixture
def config4() -> Config:
    return Config(n=4, timeout_base_ms=40)


@pytest.fixture
def keyring4(config4) -> Keyring:
    return Keyring(seed=7, node_ids=list(range(config4.n)))


@pytest.fixture
def scheme4(keyring4):
    return keyring4.scheme()


@pytest.fixture
def genesis4(config4, keyring4, scheme4):
    return make_genesis(config4, keyring4, scheme4)
