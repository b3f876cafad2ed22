"""Central finite-difference checks for every trainable operation."""

import pytest

from grad_cases import ALL_CASES
from helpers import assert_grads_match

FAST_OPS = [
    "aggregator",
    "decouple_heads",
    "class_heads",
    "align_loss",
    "total_objective",
    "denoiser",
    "color_model",
]


@pytest.mark.parametrize("op", FAST_OPS)
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(op, seed):
    params, loss_fn = ALL_CASES[op](seed)
    assert_grads_match(params, loss_fn, step=1e-4, rtol=1e-4)


@pytest.mark.parametrize("seed", range(2))
def test_embedder_gradients(seed):
    params, loss_fn = ALL_CASES["embedder"](seed)
    assert_grads_match(params, loss_fn, step=1e-4, rtol=1e-4)


@pytest.mark.parametrize("seed", range(2))
def test_full_model_gradients(seed):
    params, loss_fn = ALL_CASES["full_model"](seed)
    assert_grads_match(params, loss_fn, step=1e-4, rtol=1e-4)
