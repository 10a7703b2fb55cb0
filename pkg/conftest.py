import pytest

# Reference material, not part of the suite
collect_ignore = ['examples']


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run desk-scale Monte Carlo checks')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale Monte Carlo check, needs --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
