"""Shared fixtures and hypothesis strategies."""

import hypothesis.strategies as st
import numpy as np
import pytest

from affectmtl.data_model import (
    LABEL_SENTINEL,
    N_ACTION_UNITS,
    VA_SENTINEL,
    AnnotationSet,
    Dataset,
    Sample,
)

finite_va = st.floats(min_value=-1.0, max_value=1.0, allow_nan=False)


@st.composite
def annotation_sets(draw):
    """Any AnnotationSet satisfying the joint-missing invariants."""
    if draw(st.booleans()):
        valence, arousal = draw(finite_va), draw(finite_va)
    else:
        valence = arousal = VA_SENTINEL
    expression = draw(st.integers(min_value=-1, max_value=7))
    if draw(st.booleans()):
        units = tuple(draw(st.lists(st.integers(0, 1), min_size=12, max_size=12)))
    else:
        units = tuple([LABEL_SENTINEL] * N_ACTION_UNITS)
    return AnnotationSet(valence, arousal, expression, units)


@st.composite
def datasets(draw, min_size=0, max_size=8):
    anns = draw(st.lists(annotation_sets(), min_size=min_size, max_size=max_size))
    samples = tuple(
        Sample(id=f"images/x_{i:05d}.pgm", image_ref=f"images/x_{i:05d}.pgm", annotations=a)
        for i, a in enumerate(anns)
    )
    return Dataset(samples)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
