import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from myow.nn import (AdamW, BatchNorm1d, Linear, Mlp, MlpSpec, ScheduleSpec, SgdMomentum, adamw_step,
                     batchnorm_forward, mlp_forward, schedule_value, sgd_momentum_step)
from myow.tensor import Rng, Tensor


def _param(value, grad):
    p = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
    p.grad = None if grad is None else np.array(grad, dtype=np.float64)
    return p


def test_identity_network():
    mlp = Mlp(MlpSpec((3, 3)), Rng(0))
    mlp.layers[0].weight.data[...] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert np.array_equal(mlp_forward(mlp, Tensor(x)).data, x)


def test_constant_batch_gives_zero_preaffine_output():
    bn = BatchNorm1d(3)
    out = batchnorm_forward(Tensor(np.full((5, 3), 7.0)), bn)
    assert np.all(out.data == 0) and np.all(np.isfinite(out.data))


def test_batchnorm_standardized_fixed_point():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 4))
    x = (x - x.mean(0)) / x.std(0)
    out = batchnorm_forward(Tensor(x), BatchNorm1d(4)).data
    assert np.allclose(out, x, atol=1e-5)


def test_batchnorm_eval_is_pure():
    bn = BatchNorm1d(3)
    batchnorm_forward(Tensor(np.random.default_rng(2).normal(size=(8, 3))), bn)
    before = bn.running_mean.copy(), bn.running_var.copy()
    x = Tensor(np.random.default_rng(3).normal(size=(4, 3)))
    a = batchnorm_forward(x, bn, train=False).data
    b = batchnorm_forward(x, bn, train=False).data
    assert np.array_equal(a, b)
    assert np.array_equal(bn.running_mean, before[0]) and np.array_equal(bn.running_var, before[1])


def test_batchnorm_single_sample_train_rejected():
    with pytest.raises(ValueError, match="at least 2"):
        batchnorm_forward(Tensor(np.ones((1, 3))), BatchNorm1d(3))


def test_batchnorm_running_stats_update():
    x = np.random.default_rng(4).normal(size=(10, 2))
    bn = BatchNorm1d(2, momentum=0.1)
    batchnorm_forward(Tensor(x), bn)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(0))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * x.var(0, ddof=1))


def test_mlp_width_mismatch():
    with pytest.raises(ValueError, match="width"):
        Mlp(MlpSpec((3, 4, 2)), Rng(0))(Tensor(np.ones((2, 5))))


@pytest.mark.parametrize("bad", [(3,), (3, 0, 2), (-1, 2)])
def test_mlp_spec_validation(bad):
    with pytest.raises(ValueError):
        MlpSpec(bad)


def test_encoder_parameter_count():
    d = 100
    spec = MlpSpec((d, 64, 64, 64, 64, 32))
    # four linear+BN blocks, final plain linear
    expected = (d * 64 + 64 + 128) + 3 * (64 * 64 + 64 + 128) + (64 * 32 + 32)
    assert spec.parameter_count() == expected
    mlp = Mlp(spec, Rng(0))
    assert sum(p.data.size for p in mlp.parameters()) == expected
    assert mlp.to_spec() == spec


@given(st.lists(st.integers(1, 9), min_size=2, max_size=5), st.booleans(), st.booleans())
def test_mlp_spec_round_trip(widths, bn, final):
    spec = MlpSpec(tuple(widths), batchnorm=bn, final_activation=final)
    mlp = Mlp(spec, Rng(1))
    assert mlp.to_spec() == spec
    assert sum(p.data.size for p in mlp.parameters()) == spec.parameter_count()


def test_mlp_eval_forward_pure():
    mlp = Mlp(MlpSpec((4, 8, 3)), Rng(0))
    mlp(Tensor(np.random.default_rng(0).normal(size=(16, 4))))
    x = Tensor(np.random.default_rng(1).normal(size=(5, 4)))
    assert np.array_equal(mlp_forward(mlp, x, "eval").data, mlp_forward(mlp, x, "eval").data)


def test_linear_init_range():
    lin = Linear(16, 8, Rng(0))
    assert np.all(np.abs(lin.weight.data) <= 1 / math.sqrt(16)) and np.all(lin.bias.data == 0)


# -- optimizers -------------------------------------------------------------------------------

def test_adamw_zero_grad_no_decay_is_noop():
    p = _param([1.0, -2.0], [0.0, 0.0])
    adamw_step(AdamW(lr=0.1), [("p", p)])
    assert p.data.tolist() == [1.0, -2.0]


def test_adamw_decoupled_decay_alone():
    p = _param([1.0, -2.0], [0.0, 0.0])
    adamw_step(AdamW(lr=0.1, weight_decay=0.5), [("p", p)])
    assert np.array_equal(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.5))


def test_adamw_scalar_step_matches_hand_formula():
    theta, g, lr, wd, b1, b2, eps = 0.7, 0.3, 0.01, 0.1, 0.9, 0.999, 1e-8
    p = _param([theta], [g])
    adamw_step(AdamW(lr=lr, weight_decay=wd, beta1=b1, beta2=b2, eps=eps), [("p", p)])
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = theta * (1 - lr * wd) - lr * m_hat / (math.sqrt(v_hat) + eps)
    assert abs(p.data[0] - expected) < 1e-12


def test_adamw_nan_gradient_aborts():
    p = _param([1.0], [np.nan])
    with pytest.raises(FloatingPointError, match="w1"):
        adamw_step(AdamW(), [("w1", p)])


def test_sgd_vanilla():
    p = _param([1.0, 2.0], [0.5, -1.0])
    sgd_momentum_step(SgdMomentum(lr=0.1, momentum=0.0), [("p", p)])
    assert np.allclose(p.data, [0.95, 2.1], atol=1e-15)


def test_sgd_two_steps_hand_recurrence():
    lr, mu, wd = 0.1, 0.9, 0.01
    theta = 1.0
    p = _param([theta], None)
    opt = SgdMomentum(lr=lr, momentum=mu, weight_decay=wd)
    v = 0.0
    for g in (0.5, -0.25):
        p.grad = np.array([g])
        sgd_momentum_step(opt, [("p", p)])
        v = mu * v + (g + wd * theta)
        theta = theta - lr * v
    assert p.data[0] == theta


def test_sgd_velocity_decay():
    p = _param([0.0], [0.0])
    opt = SgdMomentum(lr=0.1, momentum=0.9)
    opt.velocity["p"] = np.array([2.0])
    sgd_momentum_step(opt, [("p", p)])
    assert np.isclose(p.data[0], -0.1 * 0.9 * 2.0)


def test_step_counter_increments_by_one():
    p = _param([1.0], [0.1])
    opt = AdamW()
    for i in range(3):
        opt.step([("p", p)])
        assert opt.step_count == i + 1


def test_optimizer_order_invariance():
    rng = np.random.default_rng(0)
    vals = {n: rng.normal(size=3) for n in "abc"}
    grads = {n: rng.normal(size=3) for n in "abc"}
    results = []
    for order in ("abc", "cba"):
        ps = {n: _param(vals[n], grads[n]) for n in order}
        opt = AdamW(lr=0.05, weight_decay=0.1)
        for _ in range(3):
            opt.step([(n, ps[n]) for n in order])
        results.append({n: ps[n].data for n in "abc"})
    assert all(np.array_equal(results[0][n], results[1][n]) for n in "abc")


# -- schedules --------------------------------------------------------------------------------

def test_schedule_endpoints():
    lr = ScheduleSpec(base=0.02, final=0.0, warmup_steps=10, total_steps=100)
    assert schedule_value(lr, 0) == 0.0
    assert schedule_value(lr, 10) == 0.02
    assert schedule_value(lr, 100) == 0.0
    tau = ScheduleSpec(base=0.98, final=1.0, total_steps=100)
    assert schedule_value(tau, 0) == 0.98
    assert schedule_value(tau, 100) == 1.0


def test_schedule_out_of_range():
    with pytest.raises(ValueError):
        schedule_value(ScheduleSpec(base=1.0, total_steps=5), 6)
    with pytest.raises(ValueError):
        ScheduleSpec(base=1.0, warmup_steps=6, total_steps=5)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 20), st.integers(1, 60))
def test_schedule_monotone_after_warmup(base, final, warmup, extra):
    spec = ScheduleSpec(base=base, final=final, warmup_steps=warmup, total_steps=warmup + extra)
    vals = [schedule_value(spec, s) for s in range(warmup, warmup + extra + 1)]
    diffs = np.diff(vals)
    if final >= base:
        assert np.all(diffs >= -1e-15)
    else:
        assert np.all(diffs <= 1e-15)


@given(st.floats(0.01, 1), st.integers(1, 20), st.integers(1, 40))
def test_schedule_continuous(base, warmup, extra):
    spec = ScheduleSpec(base=base, final=0.0, warmup_steps=warmup, total_steps=warmup + extra)
    vals = np.array([schedule_value(spec, s) for s in range(warmup + extra + 1)])
    # no step jumps by more than the steeper of the two segment slopes allows
    bound = max(base / warmup, base * np.pi / (2 * extra)) + 1e-12
    assert np.all(np.abs(np.diff(vals)) <= bound)
