import numpy as np
import pytest

from dataset import Op, Proposition, PropositionSet
from loss import ObjectiveContext, SquaredLoss, gradient_stats


def props_from_masks(masks) -> PropositionSet:
    """PropositionSet over synthetic extents, one proposition per mask row"""
    masks = np.asarray(masks, dtype=bool)
    props = tuple(Proposition(j, Op.LEQ, float(j), np.flatnonzero(mask).astype(np.int64), f"p{j}")
                  for j, mask in enumerate(masks))
    return PropositionSet(props, masks.shape[1])


def props_from_extents(extents, n) -> PropositionSet:
    masks = np.zeros((len(extents), n), dtype=bool)
    for j, extent in enumerate(extents):
        masks[j, list(extent)] = True
    return props_from_masks(masks)


@pytest.fixture
def make_props():
    return props_from_masks


@pytest.fixture
def make_props_from_extents():
    return props_from_extents


@pytest.fixture
def toy_round():
    """y=[1,1,0,0] at f=0 under squared loss with lambda=0"""
    y = np.array([1.0, 1.0, 0.0, 0.0])
    stats = gradient_stats(SquaredLoss(), y, np.zeros(4))
    return y, stats, ObjectiveContext(0.0, 4)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
