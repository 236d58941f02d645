import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("dev", max_examples=50, deadline=None)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    """Keep a developer's PSEUDOLAB_* variables and .env out of the tests."""
    for key in list(os.environ):
        if key.startswith("PSEUDOLAB_"):
            monkeypatch.delenv(key)
    monkeypatch.chdir(tmp_path)
    from pseudolab.config import get_settings
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
