import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splitls.codec import SignatureScheme  # noqa: E402
from splitls.identity import SigningIdentity  # noqa: E402


@pytest.fixture(scope="session")
def identity() -> SigningIdentity:
    return SigningIdentity.generate(SignatureScheme.ED25519)


@pytest.fixture(scope="session")
def p256_identity() -> SigningIdentity:
    return SigningIdentity.generate(SignatureScheme.ECDSA_SECP256R1_SHA256)


# -- acceptance summary: one line per criterion ----------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, {"title": title, "failed": [], "skipped": [], "passed": 0})
    if rep.failed:
        entry["failed"].append(item.name)
    elif rep.skipped:
        entry["skipped"].append(rep.longrepr[2] if isinstance(rep.longrepr, tuple) else item.name)
    else:
        entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        if e["failed"]:
            status = f"FAIL ({', '.join(e['failed'])})"
        elif e["passed"] == 0:
            status = "NOT RUN"
        else:
            status = "PASS"
        line = f"criterion {n:2d}  {status}  {e['title']}"
        for reason in e["skipped"]:
            line += f"  [partial: {reason.removeprefix('Skipped: ')}]"
        terminalreporter.write_line(line)
