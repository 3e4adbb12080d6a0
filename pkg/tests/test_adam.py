import numpy as np
import pytest

from utils.adam import AdamState, adam_step
from utils.errors import DimensionError
from utils.tensor import Tensor


def test_first_step_moves_by_learning_rate():
    p = Tensor([1.0, -1.0], requires_grad=True)
    p.grad = np.array([0.5, -3.0], dtype=np.float32)
    state = AdamState.for_params({"p": p})
    adam_step({"p": p}, state)
    # bias-corrected first step is lr * sign(g)
    np.testing.assert_allclose(p.data, [1.0 - 2e-4, -1.0 + 2e-4], rtol=1e-5)
    assert state.step == 1
    assert np.all(p.grad == 0)


def test_zero_gradient_leaves_params():
    p = Tensor([0.3, 0.7], requires_grad=True)
    state = AdamState.for_params({"p": p})
    adam_step({"p": p}, state)
    np.testing.assert_array_equal(p.data, np.array([0.3, 0.7], dtype=np.float32))


def test_minimizes_quadratic():
    p = Tensor([5.0], requires_grad=True)
    state = AdamState.for_params({"p": p}, lr=0.1, beta1=0.9)
    for _ in range(500):
        p.grad = 2.0 * p.data
        adam_step({"p": p}, state)
    assert abs(p.data[0]) < 0.5


def test_explicit_grads_and_shape_check():
    p = Tensor(np.zeros((2, 2)), requires_grad=True)
    state = AdamState.for_params({"p": p})
    with pytest.raises(DimensionError):
        adam_step({"p": p}, state, grads={"p": np.zeros(3)})
    assert state.step == 0
