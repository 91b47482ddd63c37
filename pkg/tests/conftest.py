import importlib
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from laserloc import _kernels_py  # noqa: E402
from laserloc.simulate import CorpusSpec  # noqa: E402


def _backends():
    found = [pytest.param(_kernels_py, id="python")]
    try:
        found.append(pytest.param(importlib.import_module("laserloc._kernels"), id="cython"))
    except ImportError:
        pass
    return found


@pytest.fixture(params=_backends())
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def tiny_spec():
    return CorpusSpec(n_cases=8)
