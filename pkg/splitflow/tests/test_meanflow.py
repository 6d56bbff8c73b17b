import numpy as np
import pytest

import splitflow as sf
from splitflow import meanflow, smf
from splitflow.autodiff import Tape, count_ops
from splitflow.flow import conditional_velocity, make_flow_sample, regression_loss, subset

FIELDS = [
    sf.AnalyticField.constant([1.0, -0.5]),
    sf.AnalyticField.time_poly(),
    sf.AnalyticField.linear_state(),
]


def _batch(rng, n=32, dim=2, cond=None):
    return make_flow_sample(
        rng.standard_normal((n, dim)),
        rng.standard_normal((n, dim)),
        rng,
        cond=cond,
        lambda_range=(0.05, 0.95),
    )


def _net(rng=None, data_dim=2, **kwargs):
    kwargs.setdefault("hidden_dim", 8)
    kwargs.setdefault("depth", 1)
    kwargs.setdefault("time_embed_dim", 4)
    return sf.VelocityNet(data_dim, rng=rng or np.random.default_rng(0), **kwargs)


def test_boundary_rows_target_velocity(rng):
    net = _net(zero_init_output=False)
    sample = _batch(rng, n=8)
    sample = sample._replace(r=sample.t.copy(), s=sample.t.copy())
    v = rng.standard_normal((8, 2))
    assert np.array_equal(meanflow.meanflow_target(net, sample, v), v)


def test_zero_network_targets_velocity(rng):
    sample = _batch(rng)
    v = conditional_velocity(sample)
    assert np.array_equal(meanflow.meanflow_target(_net(), sample, v), v)


def test_time_poly_fixed_point(rng):
    field = sf.AnalyticField.time_poly()
    sample = _batch(rng, n=100, dim=1)
    v = field.velocity(sample.z_t, sample.t)
    target = meanflow.meanflow_target(field, sample, v)
    np.testing.assert_allclose(target[:, 0], 0.5 * (sample.r + sample.t), rtol=0, atol=1e-12)


@pytest.mark.parametrize("field", FIELDS, ids=repr)
def test_analytic_fields_satisfy_identity(field, rng):
    sample = _batch(rng, n=500)
    sample = subset(sample, sample.t - sample.r > 1e-3)
    v = field.velocity(sample.z_t, sample.t)
    target = meanflow.meanflow_target(field, sample, v)
    exact = field.average_velocity(sample.z_t, sample.r, sample.t)
    assert np.max(np.abs(target - exact)) < 1e-8


def test_target_shape_mismatch(rng):
    sample = _batch(rng, n=4)
    with pytest.raises(sf.ShapeError):
        meanflow.meanflow_target(_net(), sample, np.zeros((4, 3)))


def test_full_boundary_matches_smf(rng):
    net = _net(zero_init_output=False, num_classes=3)
    sample = _batch(rng, n=16, cond=rng.integers(0, 3, size=16))
    plan = sf.make_plan(flow_ratio_p=1.0, mode="from_scratch")
    a = sf.meanflow_loss(net, sample, plan, dropout_rng=np.random.default_rng(2))
    b = sf.smf_loss(net, sample, plan, dropout_rng=np.random.default_rng(2))
    assert a.item() == b.item()


def test_dropped_rows_use_null_condition_in_target(rng):
    net = _net(zero_init_output=False, num_classes=3)
    sample = _batch(rng, n=12, cond=rng.integers(0, 3, size=12))
    plan = sf.make_plan(flow_ratio_p=1e-12, mode="from_scratch", cfg_dropout_pretrain=1.0)
    loss = sf.meanflow_loss(
        net, sample, plan, branch_rng=np.random.default_rng(1), dropout_rng=rng
    )

    null = sample._replace(cond=np.full(12, net.null_class_id))
    target = meanflow.meanflow_target(net, null, conditional_velocity(null))
    prediction = net.forward(null.z_t, null.r, null.t, null.cond)
    expected = regression_loss(prediction, target)
    np.testing.assert_allclose(loss.item(), expected.item(), rtol=1e-12)


def test_gradient_matches_finite_differences_with_frozen_target():
    rng = np.random.default_rng(8)
    net = sf.VelocityNet(
        1, hidden_dim=2, depth=1, time_embed_dim=2, rng=rng, zero_init_output=False
    )
    sample = _batch(rng, n=16, dim=1)
    plan = sf.make_plan(flow_ratio_p=0.5, mode="from_scratch")

    with Tape() as tape:
        params = net.parameters()
        tape.watch(*params)
        loss, boundary = meanflow.meanflow_objective(
            net, sample, plan, branch_rng=np.random.default_rng(4)
        )
        grads = tape.backward(loss)
    analytic = np.concatenate([grads[p].data.reshape(-1) for p in params])
    assert boundary.any() and not boundary.all()

    target = conditional_velocity(sample)
    rest = ~boundary
    target[rest] = meanflow.meanflow_target(net, subset(sample, rest), target[rest])
    r_in = np.where(boundary, sample.t, sample.r)

    def frozen_loss(flat):
        perturbed = net.copy()
        perturbed.set_flat_parameters(flat)
        return regression_loss(perturbed.forward(sample.z_t, r_in, sample.t), target).item()

    flat = net.flat_parameters()
    h = 1e-5
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        numeric[i] = (frozen_loss(flat + step) - frozen_loss(flat - step)) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


def test_operation_counts_per_step(rng):
    net = _net(zero_init_output=False)
    sample = _batch(rng, n=64)
    plan = sf.make_plan(flow_ratio_p=0.5, mode="from_scratch")
    with count_ops() as counter, Tape() as tape:
        tape.watch(*net.parameters())
        loss = sf.meanflow_loss(net, sample, plan, branch_rng=np.random.default_rng(1))
        tape.backward(loss)
    assert counter["forward:student"] == 1
    assert counter["jvp"] == 1
    assert counter["backward"] == 1


def test_train_uses_meanflow_objective():
    dataset = sf.ToyDataset("gauss_mixture_8")
    plan = sf.make_plan(
        steps=4, batch_size=16, lr=1e-3, warmup_steps=1, log_every=2, seed=2,
        mode="from_scratch", flow_ratio_p=0.5,
    )
    arch = {"hidden_dim": 8, "depth": 1, "time_embed_dim": 4}
    result = meanflow.train(plan, dataset, architecture=arch)
    assert [r.objective for r in result.history] == ["meanflow", "meanflow"]
    assert 0 < result.op_counts["jvp"] <= 4
    assert result.op_counts["forward:student"] == 4
    assert result.op_counts["backward"] == 4

    via_plan = smf.train(plan._replace(objective="meanflow"), dataset, architecture=arch)
    assert via_plan.history == result.history
