import numpy as np
import pytest

from blockstream.model import ModelConfig, init_params

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    prev = _criteria.get(number, (title, "PASS"))[1]
    if rep.failed:
        _criteria[number] = (title, "FAIL")
    elif rep.when == "call":
        _criteria[number] = (title, "FAIL" if prev == "FAIL" else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d_model=16, n_heads=2, ff_dim=32, enc_layers=3, dec_layers=2,
                intermediate_layer=2, feature_dim=8, vocab_size=7)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def config():
    return tiny_config()


@pytest.fixture(scope="session")
def params(config):
    return init_params(config, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_lp(rng, T, V, concentration=0.7):
    return np.log(rng.dirichlet(np.full(V, concentration), size=T))
