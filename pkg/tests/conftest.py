import json

import pytest
from hypothesis import HealthCheck, settings

from lcm.controller import ControllerConfig
from lcm.provider import Rule, ScriptedProvider, inflate
from lcm.runtime import Engine, EngineConfig
from lcm.store import Store

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def directive(**kw):
    return json.dumps(kw)


def summary_rules(tokens=100):
    from lcm.provider import head

    return [Rule(head(tokens), mode="preserve_details"), Rule(head(tokens // 2), mode="bullet_points")]


def text_of(tokens, word="lorem"):
    """Exactly ``tokens`` tokens under the 4-bytes-per-token heuristic."""
    unit = (word + " ") * 100
    s = (unit * (tokens * 4 // len(unit) + 1))[: tokens * 4]
    return s


@pytest.fixture
def store():
    s = Store()
    yield s
    s.close()


@pytest.fixture
def adversary():
    return ScriptedProvider([Rule(inflate)])


@pytest.fixture
def make_engine():
    engines = []

    def build(rules=(), tau_soft=100_000, tau_hard=150_000, **kw):
        ctrl = ControllerConfig(tau_soft=tau_soft, tau_hard=tau_hard, wait_at_boundary=kw.pop("wait", True))
        provider = ScriptedProvider(list(rules))
        eng = Engine(Store(), provider, EngineConfig(controller=ctrl, **kw))
        engines.append(eng)
        return eng

    yield build
    for e in engines:
        e.close()
        e.store.close()


# -- acceptance reporting: one PASS/FAIL line per criterion ------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    item.config._acceptance[n] = (title, rep.passed and rep.when == "call", detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        title, ok, detail = results[n]
        line = f"{'PASS' if ok else 'FAIL'} AC{n:<2} {title}"
        terminalreporter.write_line(f"{line}: {detail}" if detail else line)
