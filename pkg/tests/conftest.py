import pytest

from twophase_ner.datasets import load_schema
from twophase_ner.llm_client import ChatClient, ScriptedBackend
from twophase_ner.prompting import load_templates

from helpers import ROWLING_REPLIES, rowling_sentence


@pytest.fixture(scope="session")
def conll_schema():
    return load_schema("conll2003")


@pytest.fixture(scope="session")
def fewnerd_schema():
    return load_schema("fewnerd")


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture
def rowling():
    return rowling_sentence()


@pytest.fixture
def rowling_backend():
    return ScriptedBackend(replies=ROWLING_REPLIES)


@pytest.fixture
def rowling_client(rowling_backend):
    return ChatClient(rowling_backend, retries=0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.VERDICTS, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
