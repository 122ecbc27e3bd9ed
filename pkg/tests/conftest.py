from __future__ import annotations

import json
import shutil
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import CHEAP_KDF, Client  # noqa: E402
from modelrest.metamodel import parse_metamodel  # noqa: E402
from modelrest.ocl import Validator  # noqa: E402
from modelrest.registry import Registry  # noqa: E402
from modelrest.router import Api  # noqa: E402
from modelrest.security import UserStore, manage_users  # noqa: E402
from modelrest.storage import load_instance  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
BASE = "https://example.com"


@pytest.fixture(scope="session")
def family_mm():
    return parse_metamodel((FIXTURES / "models" / "Family.metamodel.json").read_text())


@pytest.fixture(scope="session")
def graph_mm():
    return parse_metamodel((FIXTURES / "models" / "Graph.metamodel.json").read_text())


@pytest.fixture
def simpsons(family_mm):
    """The fixture instance, in memory only, with invariants compiled."""
    text = (FIXTURES / "models" / "Family" / "Simpsons.xmi").read_text()
    i = load_instance(text, "xmi", family_mm, "Simpsons")
    i.validator = Validator(family_mm)
    return i


@pytest.fixture
def models_dir(tmp_path):
    d = tmp_path / "models"
    shutil.copytree(FIXTURES / "models", d)
    return d


@pytest.fixture
def users_file(tmp_path):
    path = tmp_path / "users.json"
    store = UserStore(path, CHEAP_KDF)
    manage_users(store, "add", "admin", password="admin-pw", roles=["admin"])
    manage_users(store, "add", "homer", password="donuts")
    return path


@pytest.fixture
def api(models_dir, users_file):
    return Api(Registry(models_dir), UserStore.load(users_file, CHEAP_KDF), base_url=BASE,
               cors_allowed_origins=["https://app.example.org"])


@pytest.fixture
def admin(api):
    return Client(api, "admin", "admin-pw")


@pytest.fixture
def homer(api):
    return Client(api, "homer", "donuts")


@pytest.fixture
def anon(api):
    return Client(api, None, None)


@pytest.fixture
def storage_file(models_dir):
    return models_dir / "Family" / "Simpsons.xmi"


# criterion number -> (title, limit in seconds, outcome, seconds taken)
ACCEPTANCE: dict[int, tuple[str, float, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title, limit): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    m = item.get_closest_marker("acceptance")
    if m is None or (report.when != "call" and report.passed):
        return
    number, title, limit = m.args
    previous = ACCEPTANCE.get(number)
    if previous is not None and previous[2] == "failed":
        return
    ACCEPTANCE[number] = (title, limit, "failed" if report.failed else report.outcome, call.duration)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, (title, limit, outcome, took) in sorted(ACCEPTANCE.items()):
        verdict = "PASS" if outcome == "passed" and took < limit else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title} ({took:.2f} s, limit {limit:g} s)")


__all__ = ["BASE", "FIXTURES", "json"]
