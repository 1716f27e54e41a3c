import os

import hypothesis
import numpy as np
import pytest

from relinfill.schema import RelationSchema, build_trie

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=500, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

BIRTH_LABELS = [
    "per:city_of_birth",
    "per:city_of_residence",
    "per:city_of_death",
    "per:country_of_birth",
    "per:country_of_death",
]


@pytest.fixture
def birth_schema():
    return RelationSchema.from_labels(BIRTH_LABELS)


@pytest.fixture
def birth_trie(birth_schema):
    return build_trie(birth_schema)


VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash[VERDICTS]

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append((name, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
