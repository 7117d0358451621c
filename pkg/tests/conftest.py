import numpy as np
import pytest

from commutant.geometry import VectorField
from commutant.scenarios import BUILTIN_IDS, load_builtin


def analytic_registry_fields():
    """``(scenario_id, name, field)`` for every builtin field with an analytic Jacobian."""
    out = []
    for sid in BUILTIN_IDS:
        sc = load_builtin(sid)
        for name, X in sc.fields.items():
            if X.jac is not None:
                out.append((sid, name, X))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def rotation_field():
    return VectorField.linear([[0.0, -1.0], [1.0, 0.0]], "rotation")
