import numpy as np
import pytest

from unwarp.core.autodiff import ShapeError
from unwarp.core.optim import AdamWState, adamw_step, onecycle_lr


def test_zero_gradient_without_decay_keeps_parameters(rng):
    params = {"w": rng.normal(size=(3, 2))}
    grads = {"w": np.zeros((3, 2))}
    updated, state = adamw_step(params,
                                grads,
                                AdamWState.zeros_like(params),
                                lr=0.1,
                                weight_decay=0.0)
    np.testing.assert_array_equal(updated["w"], params["w"])
    assert state.step == 1


def test_first_step_moves_by_learning_rate():
    params = {"w": np.array([2.0, -1.0])}
    updated, _ = adamw_step(params, {"w": np.ones(2)},
                            AdamWState.zeros_like(params),
                            lr=0.1,
                            weight_decay=0.0)
    np.testing.assert_allclose(updated["w"] - params["w"], -0.1, atol=1e-6)


def test_weight_decay_is_decoupled():
    params = {"w": np.array([10.0])}
    updated, _ = adamw_step(params, {"w": np.zeros(1)},
                            AdamWState.zeros_like(params),
                            lr=0.1,
                            weight_decay=0.5)
    np.testing.assert_allclose(updated["w"], [10.0 * (1 - 0.05)])


def test_inputs_are_not_modified(rng):
    params = {"w": rng.normal(size=4)}
    before = params["w"].copy()
    state = AdamWState.zeros_like(params)
    adamw_step(params, {"w": np.ones(4)}, state, lr=0.1)
    np.testing.assert_array_equal(params["w"], before)
    np.testing.assert_array_equal(state.m["w"], 0.0)
    assert state.step == 0


def test_shape_mismatch_is_rejected():
    params = {"w": np.zeros(3)}
    with pytest.raises(ShapeError, match="w"):
        adamw_step(params, {"w": np.zeros(4)}, AdamWState.zeros_like(params),
                   lr=0.1)


def test_onecycle_schedule():
    max_lr = 1e-4
    assert onecycle_lr(50, 500, max_lr) == pytest.approx(max_lr)
    assert onecycle_lr(0, 500, max_lr) == pytest.approx(max_lr / 25)
    assert onecycle_lr(499, 500, max_lr) == pytest.approx(max_lr / 1e4)

    schedule = [onecycle_lr(step, 500, max_lr) for step in range(500)]
    assert max(schedule) == pytest.approx(max_lr)
    assert all(a <= b for a, b in zip(schedule[:50], schedule[1:51]))
    assert all(a >= b for a, b in zip(schedule[50:], schedule[51:]))


def test_onecycle_rejects_out_of_range_steps():
    with pytest.raises(ValueError):
        onecycle_lr(500, 500, 1e-4)
    with pytest.raises(ValueError):
        onecycle_lr(-1, 500, 1e-4)
