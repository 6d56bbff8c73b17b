import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp

import splitflow as sf
from splitflow import flow
from splitflow.autodiff import Tensor, jvp
from splitflow.metrics import isc_residual, make_probes


FIELDS = [
    sf.AnalyticField.constant([1.0, -0.5]),
    sf.AnalyticField.time_poly(),
    sf.AnalyticField.linear_state(),
]


def _sample(x, eps, t, r=None, lam=None, cond=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eps = np.atleast_2d(np.asarray(eps, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = t.copy() if r is None else np.atleast_1d(np.asarray(r, dtype=float))
    lam = np.zeros_like(t) if lam is None else np.atleast_1d(lam)
    s = (1.0 - lam) * t + lam * r
    z_t = (1.0 - t)[:, None] * x + t[:, None] * eps
    return flow.FlowSample(x, eps, t, r, lam, s, z_t, cond)


def test_schedule_boundaries():
    sched = flow.LINEAR
    assert (sched.a(0.0), sched.b(0.0), sched.a(1.0), sched.b(1.0)) == (1.0, 0.0, 0.0, 1.0)


def test_make_flow_sample_invariants(rng):
    x = rng.standard_normal((500, 2))
    eps = rng.standard_normal((500, 2))
    sample = sf.make_flow_sample(x, eps, rng, lambda_range=(0.05, 0.95))
    assert sample.x.shape[0] == 500
    assert np.all(0.0 <= sample.r)
    assert np.all(sample.r <= sample.s)
    assert np.all(sample.s <= sample.t)
    assert np.all(sample.t <= 1.0)
    assert np.all((0.05 <= sample.lam) & (sample.lam <= 0.95))
    np.testing.assert_allclose(
        sample.s, (1.0 - sample.lam) * sample.t + sample.lam * sample.r, rtol=0, atol=1e-15
    )
    np.testing.assert_allclose(
        sample.z_t, (1.0 - sample.t)[:, None] * x + sample.t[:, None] * eps, rtol=0, atol=1e-15
    )
    assert sample.cond is None


@pytest.mark.parametrize("n", [1, 3, 8, 13])
def test_flow_sample_replace_any_batch_size(rng, n):
    sample = sf.make_flow_sample(rng.standard_normal((n, 2)), rng.standard_normal((n, 2)), rng)
    replaced = sample._replace(s=sample.r.copy())
    assert len(replaced) == len(flow.FlowSample._fields)
    np.testing.assert_array_equal(replaced.s, sample.r)
    np.testing.assert_array_equal(replaced.z_t, sample.z_t)
    half = flow.subset(sample, np.arange(n) % 2 == 0)
    assert half.x.shape[0] == (n + 1) // 2


def test_zero_path(rng):
    sample = sf.make_flow_sample(np.zeros((10, 3)), np.zeros((10, 3)), rng)
    assert np.all(sample.z_t == 0.0)


def test_path_endpoints():
    x = np.array([[1.0, 2.0]])
    eps = np.array([[-3.0, 0.5]])
    assert np.array_equal(_sample(x, eps, 1.0).z_t, eps)
    assert np.array_equal(_sample(x, eps, 0.0).z_t, x)


def test_sorted_uniform_law():
    rng = np.random.default_rng(11)
    r, t = flow.TimeDistribution().draw(rng, 100000)
    assert np.all(r <= t)
    assert abs(np.mean(t - r > 0.5) - 0.25) < 0.01


def test_lognormal_law():
    rng = np.random.default_rng(12)
    dist = flow.make_time_dist("lognormal(-0.4, 1.0)")
    r, t = dist.draw(rng, 1000)
    assert np.all((0.0 < r) & (r <= t) & (t < 1.0))
    assert dist == flow.TimeDistribution("lognormal", -0.4, 1.0)
    assert str(flow.make_time_dist("lognormal")) == "lognormal(-0.4, 1.0)"


@pytest.mark.parametrize("spec", ["uniform", "lognormal(a, b)", "lognormal(0, -1)"])
def test_bad_time_dist(spec):
    with pytest.raises(sf.SplitflowInputError):
        flow.make_time_dist(spec)


def test_make_flow_sample_errors(rng):
    with pytest.raises(sf.ShapeError):
        sf.make_flow_sample(np.zeros((2, 2)), np.zeros((2, 3)), rng)
    with pytest.raises(sf.SplitflowInputError):
        sf.make_flow_sample(np.zeros((2, 2)), np.zeros((2, 2)), rng, lambda_range=(0.6, 0.4))


def test_subset(rng):
    sample = sf.make_flow_sample(
        rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), rng, cond=[0, 1, 2, 3]
    )
    part = flow.subset(sample, np.array([True, False, True, False]))
    assert part.x.shape[0] == 2
    assert part.cond.tolist() == [0, 2]
    np.testing.assert_array_equal(part.z_t, sample.z_t[[0, 2]])


def test_conditional_velocity(rng):
    sample = _sample([[1.0, 0.0]], [[0.0, 1.0]], 0.3)
    assert flow.conditional_velocity(sample).tolist() == [[-1.0, 1.0]]

    x = rng.standard_normal((5, 2))
    assert np.all(flow.conditional_velocity(_sample(x, x, 0.5)) == 0.0)

    eps = rng.standard_normal((5, 2))
    t = rng.random(5)
    sample = _sample(x, eps, t)
    sched = flow.LINEAR
    np.testing.assert_allclose(
        flow.conditional_velocity(sample),
        sched.da(t)[:, None] * x + sched.db(t)[:, None] * eps,
        rtol=0,
        atol=1e-15,
    )


def test_cfm_loss_zero_net():
    net = sf.VelocityNet(2, hidden_dim=8, depth=1, time_embed_dim=4)
    sample = _sample([[0.0, 0.0]], [[1.0, 1.0]], 0.5)
    assert flow.cfm_loss(net, sample).item() == 2.0


def test_cfm_loss_perfect_net():
    net = sf.VelocityNet(2, hidden_dim=8, depth=1, time_embed_dim=4)
    params = net.parameters()
    params[-1] = Tensor([1.0, 1.0])
    net.set_parameters(params)
    sample = _sample([[0.0, 0.0]], [[1.0, 1.0]], 0.25)
    assert flow.cfm_loss(net, sample).item() == 0.0


def test_cfm_loss_errors():
    net = sf.VelocityNet(2, hidden_dim=8, depth=1, time_embed_dim=4)
    sample = _sample([[0.0, 0.0]], [[1.0, 1.0]], 0.5)
    with pytest.raises(sf.SplitflowInputError):
        flow.cfm_loss(net, sample, cfg_dropout=1.5)
    with pytest.raises(sf.PoisonedStateError):
        flow.regression_loss(Tensor([[0.0, 0.0]]), np.array([[np.nan, 0.0]]))
    with pytest.raises(sf.SplitflowInputError):
        flow.regression_loss(Tensor([[0.0, 0.0]]), np.array([[1.0, 0.0]]), norm="l1")


def test_regression_loss_norms():
    pred = Tensor([[0.0, 0.0], [0.0, 0.0]])
    target = np.array([[3.0, 4.0], [0.0, 1.0]])
    assert flow.regression_loss(pred, target).item() == 13.0
    np.testing.assert_allclose(flow.regression_loss(pred, target, norm="l2").item(), 3.0)


def test_analytic_examples():
    const = sf.AnalyticField.constant([2.0, -1.0])
    z = np.zeros((3, 2))
    np.testing.assert_array_equal(
        flow.analytic_average_velocity(const, z, [0.1, 0.2, 0.3], 0.9), np.tile([2.0, -1.0], (3, 1))
    )

    poly = sf.AnalyticField.time_poly()
    u = flow.analytic_average_velocity(poly, [[0.0]], 0.2, 0.8)
    assert u[0, 0] == pytest.approx(0.5, abs=1e-15)
    integral, _ = quad(lambda tau: tau, 0.2, 0.8, epsabs=1e-13)
    assert abs(u[0, 0] - integral / 0.6) < 1e-10


def test_linear_state_against_quadrature(rng):
    field = sf.AnalyticField.linear_state()
    for _ in range(5):
        z_t = rng.standard_normal(2)
        r, t = np.sort(rng.random(2))
        u = field.average_velocity(z_t[None, :], r, t)[0]

        solution = solve_ivp(
            lambda tau, z: -z, (t, r), z_t, method="DOP853", rtol=1e-12, atol=1e-12,
            dense_output=True,
        )
        for i in range(2):
            integral, _ = quad(
                lambda tau: -solution.sol(tau)[i], r, t, epsabs=1e-12, epsrel=1e-12
            )
            assert abs(u[i] - integral / (t - r)) < 1e-6
        np.testing.assert_allclose(field.trajectory(z_t, t, r)[0], solution.y[:, -1], atol=1e-8)


@pytest.mark.parametrize("field", FIELDS, ids=repr)
def test_analytic_fields_split_exactly(field):
    probes = make_probes(2, np.random.default_rng(5), n=1000)
    _, worst = isc_residual(field, probes)
    assert worst < 1e-10


@pytest.mark.parametrize("field", FIELDS, ids=repr)
def test_analytic_limit_is_velocity(field, rng):
    z = rng.standard_normal((10, 2))
    t = rng.uniform(0.1, 1.0, 10)
    r = t - 1e-6
    u = field.average_velocity(z, r, t)
    v = field.velocity(z, t)
    assert np.max(np.abs(u - v)) < 1e-5


@pytest.mark.parametrize("field", FIELDS, ids=repr)
def test_tensor_forward_matches_closed_form(field, rng):
    z = rng.standard_normal((6, 2))
    r = rng.uniform(0.0, 0.4, 6)
    t = rng.uniform(0.5, 1.0, 6)
    np.testing.assert_allclose(
        field.forward(Tensor(z), Tensor(r), Tensor(t)).data,
        field.average_velocity(z, r, t),
        rtol=1e-12,
        atol=1e-14,
    )
    value, _ = jvp(
        lambda zz, rr, tt: field.forward(zz, rr, tt),
        (Tensor(z), Tensor(r), Tensor(t)),
        (Tensor(np.ones_like(z)), Tensor(np.zeros(6)), Tensor(np.ones(6))),
    )
    np.testing.assert_allclose(value.data, field.average_velocity(z, r, t), rtol=1e-12, atol=1e-14)


def test_analytic_field_names():
    assert repr(sf.AnalyticField.from_name("constant", 3)) == (
        "AnalyticField('constant', c=[1.0, -0.5, 1.0])"
    )
    assert sf.AnalyticField.from_name("linear_state").kind == "linear_state"
    with pytest.raises(sf.SplitflowInputError):
        sf.AnalyticField("quadratic")
    with pytest.raises(sf.SplitflowInputError):
        sf.AnalyticField("constant")
