import os

import hypothesis
import numpy as np
import pytest

np.seterr(invalid="warn")

hypothesis.settings.register_profile(
    "ci", max_examples=25, deadline=None, derandomize=True
)
hypothesis.settings.register_profile("dev", max_examples=5, deadline=None)
hypothesis.settings.register_profile(
    "debugger", report_multiple_bugs=False, deadline=None
)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240517)
