"""
Shared pytest configuration
"""

import pytest


def pytest_configure(config: pytest.Config) -> None:
    """
    Registers the markers used by the suite

    Args:
        config (pytest.Config): pytest configuration

    Returns:
        None
    """
    config.addinivalue_line("markers", "slow: full clean vs. contaminated experiment runs")
