import numpy as np
import pytest



def params_to_lists(params) -> dict:
    """Parameter dataclass -> plain nested lists for the scalar oracle."""
    import dataclasses

    out = {}
    for f in dataclasses.fields(params):
        out[f.name] = getattr(params, f.name).data.tolist()
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
