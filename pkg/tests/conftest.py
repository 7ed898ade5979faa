import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = FIXTURES / "golden"
SCENARIO_FILE = Path(__file__).parent.parent / "scenarios" / "appendix-c.scenario"


def golden_text(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


def golden_doc(name: str) -> dict:
    return json.loads(golden_text(name))


@pytest.fixture
def aws_metrics_doc() -> str:
    return golden_text("aws_metrics.json")


@pytest.fixture
def ibm_metrics_doc() -> str:
    return golden_text("ibm_metrics.json")


@pytest.fixture
def aws_logs_doc() -> str:
    return golden_text("aws_logs.json")


@pytest.fixture
def ibm_logs_doc() -> str:
    return golden_text("ibm_logs.json")


@pytest.fixture
def scenario_path() -> Path:
    return SCENARIO_FILE
