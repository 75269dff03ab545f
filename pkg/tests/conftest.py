import pytest

from topic_convs2s import tensor as T


@pytest.fixture(autouse=True)
def _float64():
    T.set_default_dtype("float64")
    yield
    T.set_default_dtype("float64")
