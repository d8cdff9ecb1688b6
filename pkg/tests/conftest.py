import json
import shutil
from pathlib import Path

import pytest
from hypothesis import settings

from iscap import example_case_path
from iscap.case import load_case

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def sca_case():
    return load_case(example_case_path())


@pytest.fixture
def case_file(tmp_path):
    dst = tmp_path / "case.json"
    shutil.copy(example_case_path(), dst)
    return dst


@pytest.fixture
def fixture_dataset():
    return FIXTURES / "metrics50.jsonl"


@pytest.fixture
def fixture_labels():
    return json.loads((FIXTURES / "metrics50_labels.json").read_text())
