import string

import pytest

from relevance_forge.wordpiece import SPECIAL_TOKENS, Vocab

_ACCEPTANCE: list[tuple[str, str, float]] = []


def tiny_vocab(extra=()) -> Vocab:
    return Vocab.from_tokens(list(SPECIAL_TOKENS) + list(extra))


def letter_vocab(pieces=()) -> Vocab:
    """Specials, every lowercase letter and digit with its ## form, ASCII punctuation, plus ``pieces``."""
    chars = string.ascii_lowercase + string.digits
    tokens = list(SPECIAL_TOKENS) + list(chars) + ["##" + c for c in chars] + list(string.punctuation)
    tokens += [p for p in pieces if p not in tokens]
    return Vocab.from_tokens(tokens)


@pytest.fixture
def vocab_file(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("\n".join(list(SPECIAL_TOKENS) + ["guitar", "strap", "q", "a"]) + "\n", encoding="utf-8")
    return path


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and (report.when == "call" or (report.when == "setup" and report.outcome != "passed")):
        _ACCEPTANCE.append((marker.args[0], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _ACCEPTANCE:
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{status}  {name}  ({duration:.2f}s)")
