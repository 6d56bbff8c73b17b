import numpy as np
import pytest
from scipy.integrate import solve_ivp

import splitflow as sf
from splitflow.autodiff import count_ops
from splitflow.sampler import make_grid, parse_grid


class NaNField(object):
    conditional = False

    def velocity(self, z, t, cond=None):
        return np.full_like(z, np.nan)

    def average_velocity(self, z, r, t, cond=None):
        return np.full_like(z, np.nan)


def test_grids():
    assert make_grid(1).tolist() == [1.0, 0.0]
    assert make_grid(4).tolist() == [1.0, 0.75, 0.5, 0.25, 0.0]
    assert parse_grid("uniform", 2).tolist() == [1.0, 0.5, 0.0]
    assert parse_grid(None, 1).tolist() == [1.0, 0.0]
    assert parse_grid([1.0, 0.3, 0.0], 5).tolist() == [1.0, 0.3, 0.0]


@pytest.mark.parametrize(
    "grid", ["1.0,0.5", "0.9,0.0", "1.0,0.5,0.6,0.0", "a,b", [1.0], [[1.0, 0.0]]]
)
def test_bad_grids(grid):
    with pytest.raises(sf.SplitflowInputError):
        parse_grid(grid, 2)


def test_bad_step_count():
    with pytest.raises(sf.SplitflowInputError):
        make_grid(0)
    with pytest.raises(sf.SplitflowInputError):
        sf.euler_sample(sf.AnalyticField.time_poly(), 1.5, np.zeros((1, 1)))


def test_euler_constant_field(rng):
    c = np.array([0.5, -2.0])
    eps = rng.standard_normal((10, 2))
    for n in (1, 3, 10):
        z0 = sf.euler_sample(sf.AnalyticField.constant(c), n, eps)
        np.testing.assert_allclose(z0, eps - c, rtol=0, atol=1e-12)


def test_euler_is_first_order(rng):
    field = sf.AnalyticField.linear_state()
    eps = rng.standard_normal((4, 2))
    reference = solve_ivp(
        lambda tau, z: -z, (1.0, 0.0), eps.reshape(-1), method="DOP853",
        rtol=1e-12, atol=1e-12,
    ).y[:, -1].reshape(eps.shape)
    np.testing.assert_allclose(reference, field.trajectory(eps, 1.0, 0.0), atol=1e-9)

    err_100 = np.max(np.abs(sf.euler_sample(field, 100, eps) - reference))
    err_200 = np.max(np.abs(sf.euler_sample(field, 200, eps) - reference))
    assert 1.8 <= err_100 / err_200 <= 2.2


@pytest.mark.parametrize(
    "field",
    [
        sf.AnalyticField.constant([1.0, -0.5]),
        sf.AnalyticField.time_poly(),
        sf.AnalyticField.linear_state(),
    ],
    ids=repr,
)
def test_few_step_with_exact_average_velocity(field, rng):
    eps = rng.standard_normal((20, 2))
    exact = field.trajectory(eps, 1.0, 0.0)
    results = [sf.few_step_sample(field, k, eps) for k in (1, 2, 5)]
    for z0 in results:
        np.testing.assert_allclose(z0, exact, rtol=0, atol=1e-6)
    for z0 in results[1:]:
        np.testing.assert_allclose(z0, results[0], rtol=0, atol=1e-8)


def test_few_step_custom_grid(rng):
    field = sf.AnalyticField.linear_state()
    eps = rng.standard_normal((5, 2))
    z0 = sf.few_step_sample(field, 2, eps, grid="1.0,0.7,0.2,0.0")
    np.testing.assert_allclose(z0, field.trajectory(eps, 1.0, 0.0), rtol=1e-12)


def test_forward_counts(rng):
    net = sf.VelocityNet(2, hidden_dim=8, depth=1, time_embed_dim=4, num_classes=3)
    eps = rng.standard_normal((6, 2))
    cond = rng.integers(0, 3, size=6)
    for k in (1, 2, 4):
        with count_ops() as counter:
            sf.few_step_sample(net, k, eps, cond)
        assert counter["forward"] == k

    with count_ops() as counter:
        sf.euler_sample(net, 5, eps, cond)
    assert counter["forward"] == 5
    with count_ops() as counter:
        sf.euler_sample(net, 5, eps, cond, cfg_scale=2.0)
    assert counter["forward"] == 10


def test_samplers_do_not_modify_prior(rng):
    eps = rng.standard_normal((3, 2))
    before = eps.copy()
    sf.euler_sample(sf.AnalyticField.linear_state(), 3, eps)
    sf.few_step_sample(sf.AnalyticField.linear_state(), 3, eps)
    assert np.array_equal(eps, before)


def test_non_finite_state_is_poisoned():
    eps = np.zeros((2, 2))
    with pytest.raises(sf.PoisonedStateError):
        sf.euler_sample(NaNField(), 2, eps)
    with pytest.raises(sf.PoisonedStateError):
        sf.few_step_sample(NaNField(), 2, eps)
