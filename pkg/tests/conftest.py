from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

HERE = Path(__file__).parent
DATA = HERE / "data"
sys.path.insert(0, str(HERE))

from fracsource.elliptic import CoefficientField, DomainSpec, assemble, eigensystem  # noqa: E402


@pytest.fixture(scope="session")
def ml_oracle():
    return json.loads((DATA / "ml_oracle.json").read_text())


@pytest.fixture(scope="session")
def interval129():
    dom = DomainSpec.interval(0.0, math.pi, 129)
    coeffs = CoefficientField.constant(dom)
    op = assemble(dom, coeffs)
    return dom, coeffs, op, eigensystem(op, 32)


@pytest.fixture(scope="session")
def interval257():
    dom = DomainSpec.interval(0.0, math.pi, 257)
    coeffs = CoefficientField.constant(dom)
    op = assemble(dom, coeffs)
    return dom, coeffs, op, eigensystem(op, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
