import sys
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for rdfa_oracle and helpers

FIXTURE_PATH = Path(__file__).parent.parent / "src" / "feedforge" / "data" / "offers.ttl"

# the rate graph bundled in offers.ttl, restated independently
FIXTURE_RATES = {
    "EUR": Decimal("1.0"),
    "USD": Decimal("1.25"),
    "GBP": Decimal("0.85"),
    "CHF": Decimal("0.95"),
    "PLN": Decimal("4.20"),
}
FIXTURE_RATES_AS_OF = datetime(2026, 8, 10, 6, 0, 0, tzinfo=timezone.utc)


@pytest.fixture(scope="session")
def fixture_text() -> str:
    return FIXTURE_PATH.read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def fixture_graph(fixture_text):
    from feedforge.rdf import parse_turtle
    return parse_turtle(fixture_text)


@pytest.fixture()
def mock_endpoint(fixture_graph):
    from feedforge.mockendpoint import MockSparqlEndpoint
    endpoint = MockSparqlEndpoint(fixture_graph)
    endpoint.start()
    yield endpoint
    endpoint.stop()


@pytest.fixture(scope="session")
def fixture_rate_table():
    from feedforge.currency import RateTable
    return RateTable(base="EUR", as_of=FIXTURE_RATES_AS_OF,
                     rates=dict(FIXTURE_RATES))
