import random
from datetime import datetime, timezone
from functools import lru_cache

import pytest

from incentive_metering import crypto

START = datetime(2024, 3, 1, 9, 0, tzinfo=timezone.utc)


@lru_cache(maxsize=None)
def keypair_for(name: str, bits: int = 512) -> crypto.KeyPair:
    return crypto.keygen(bits, random.Random(f"test-key/{bits}/{name}"), name)


@pytest.fixture
def keyring():
    return keypair_for


# PASS/FAIL lines recorded by the acceptance suite, echoed after the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
