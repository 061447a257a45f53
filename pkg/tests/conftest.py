import json

import pytest

from harcap.dataset import VideoRecord, lexicon_from_mapping
from harcap.synthetic import COOK_CLEANUP_KEYWORDS, DEMO_LEXICON


@pytest.fixture
def cook_keywords():
    return list(COOK_CLEANUP_KEYWORDS)


@pytest.fixture
def lexicon():
    return lexicon_from_mapping(DEMO_LEXICON)


@pytest.fixture
def lexicon_file(tmp_path):
    path = tmp_path / "lexicon.json"
    path.write_text(json.dumps(DEMO_LEXICON))
    return path


@pytest.fixture
def video():
    return VideoRecord("Cook_Cleanup_p02_r00_v01_c03", "Cook_Cleanup", 2, 3, "frames/v1")


@pytest.fixture
def png_bytes():
    # 1x1 grey PNG, only used as an opaque payload
    return bytes.fromhex(
        "89504e470d0a1a0a0000000d4948445200000001000000010800000000"
        "3a7e9b550000000a49444154789c63680000008200815cb4d9a30000000049454e44ae426082"
    )


@pytest.fixture
def demo_config(tmp_path):
    from harcap.synthetic import write_demo_project
    return write_demo_project(tmp_path / "demo")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
    terminalreporter.write_line("criterion 11 GATED  reproduction against the licensed dataset and live models (see README)")
