import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # make `oracles` importable

from guided_attention.corpus import build_vocab, parse_conllu

FIXTURES = Path(__file__).parent / "fixtures"

# Hand-counted token counts of tests/fixtures/twenty.conllu, by sent_id.
TWENTY_TOKEN_COUNTS = {
    "s01": 3, "s02": 6, "s03": 5, "s04": 4, "s05": 2,
    "s06": 7, "s07": 8, "s08": 1, "s09": 6, "s10": 7,
    "s11": 6, "s12": 7, "s13": 8, "s14": 5, "s15": 11,
    "s16": 6, "s17": 7, "s18": 8, "s19": 10, "s20": 8,
}


@pytest.fixture(scope="session")
def fixture_text() -> str:
    return (FIXTURES / "twenty.conllu").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def twenty(fixture_text):
    sentences = parse_conllu(fixture_text)
    assert len(sentences) == 20
    return sentences


@pytest.fixture(scope="session")
def twenty_vocab(twenty):
    return build_vocab(twenty)
