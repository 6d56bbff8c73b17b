import numpy as np
import pytest

import splitflow as sf
from splitflow.optim import EMA, Adam


def test_warmup_schedule():
    adam = Adam([(2,)], lr=1e-3, warmup_steps=10)
    assert adam.learning_rate(1) == pytest.approx(1e-4)
    assert adam.learning_rate(5) == pytest.approx(5e-4)
    assert adam.learning_rate(10) == 1e-3
    assert adam.learning_rate(500) == 1e-3
    assert Adam([(2,)], lr=1e-3, warmup_steps=0).learning_rate(1) == 1e-3


def test_first_step_moves_against_gradient():
    adam = Adam([(3,)], lr=0.1, warmup_steps=0)
    p = np.zeros(3)
    (new,) = adam.step([p], [np.array([2.0, -3.0, 0.0])])
    # bias-corrected first step has magnitude lr for every nonzero coordinate
    np.testing.assert_allclose(new, [-0.1, 0.1, 0.0], rtol=1e-6)
    assert np.all(p == 0.0)
    assert adam.step_count == 1


def test_adam_errors():
    with pytest.raises(sf.SplitflowInputError):
        Adam([(1,)], lr=0.0)
    adam = Adam([(2,)])
    with pytest.raises(sf.ShapeError):
        adam.step([np.zeros(2)], [np.zeros(3)])
    with pytest.raises(sf.ShapeError):
        adam.step([np.zeros(2), np.zeros(2)], [np.zeros(2)])


def test_ema():
    ema = EMA([np.zeros(2)], decay=0.9)
    for _ in range(3):
        ema.update([np.ones(2)])
    np.testing.assert_allclose(ema.shadow[0], 1.0 - 0.9 ** 3)
    with pytest.raises(sf.SplitflowInputError):
        EMA([np.zeros(1)], decay=1.0)
