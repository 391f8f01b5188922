import numpy as np
import pytest

from hintloc.engine import Tape, Tensor, ops
from hintloc.engine.optim import Adam, step_decay_lr
from hintloc.errors import ConfigError, ShapeError


def adam_oracle(param, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam, re-derived step by step from the published algorithm."""
    p = param.copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        p.grad = np.zeros(3)
        opt = Adam()
        opt.step([("p", p)], lr=0.1)
        assert np.array_equal(p.data, [1.0, -2.0, 3.0])
        assert opt.step_count == 1

    def test_first_step_is_lr_times_sign(self):
        p = Tensor([0.0, 0.0], requires_grad=True)
        p.grad = np.array([2.5, -0.3])
        Adam().step([("p", p)], lr=1e-2)
        assert np.allclose(p.data, [-1e-2, 1e-2], rtol=1e-6)

    def test_matches_multi_step_oracle(self):
        for seed in range(5):
            r = np.random.default_rng(seed)
            init = r.normal(size=(4, 3))
            grads = [r.normal(size=(4, 3)) for _ in range(7)]
            p = Tensor(init, requires_grad=True)
            opt = Adam()
            for g in grads:
                p.grad = g.copy()
                opt.step([("p", p)], lr=3e-3)
            assert np.allclose(p.data, adam_oracle(init, grads, 3e-3), atol=1e-14)

    def test_quadratic_bowl_converges(self):
        w = Tensor([4.0, -3.0], requires_grad=True)
        opt = Adam()
        losses = []
        for _ in range(100):
            with Tape() as tape:
                loss = ops.sum_all(ops.mul(w, w))
                tape.backward(loss)
            losses.append(loss.item())
            opt.step([("w", w)], lr=0.05)
        assert all(b < a for a, b in zip(losses[5:], losses[6:]))
        assert losses[-1] < 1e-2 * losses[0]

    def test_nonpositive_lr_rejected(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.ones(1)
        with pytest.raises(ConfigError):
            Adam().step([("p", p)], lr=0.0)

    def test_moment_shape_mismatch_rejected(self):
        opt = Adam()
        p = Tensor([1.0, 2.0], requires_grad=True)
        p.grad = np.ones(2)
        opt.step([("p", p)], lr=1e-3)
        q = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        q.grad = np.ones(3)
        with pytest.raises(ShapeError):
            opt.step([("p", q)], lr=1e-3)

    def test_state_roundtrip_continues_identically(self, rng):
        init = rng.normal(size=5)
        grads = [rng.normal(size=5) for _ in range(6)]

        p_full = Tensor(init, requires_grad=True)
        full = Adam()
        for g in grads:
            p_full.grad = g.copy()
            full.step([("p", p_full)], lr=1e-2)

        p_a = Tensor(init, requires_grad=True)
        first = Adam()
        for g in grads[:3]:
            p_a.grad = g.copy()
            first.step([("p", p_a)], lr=1e-2)
        second = Adam()
        second.load_state_arrays(first.state_arrays(), first.step_count)
        p_b = Tensor(p_a.data, requires_grad=True)
        for g in grads[3:]:
            p_b.grad = g.copy()
            second.step([("p", p_b)], lr=1e-2)

        assert np.array_equal(p_b.data, p_full.data)


class TestLrSchedule:
    def test_default_schedule_values(self):
        assert step_decay_lr(5e-4, 0) == pytest.approx(5e-4, rel=1e-12)
        assert step_decay_lr(5e-4, 7) == pytest.approx(2e-4, rel=1e-12)
        assert step_decay_lr(5e-4, 14) == pytest.approx(8e-5, rel=1e-12)

    def test_constant_within_each_window(self):
        vals = {step_decay_lr(1e-3, e) for e in range(7)}
        assert vals == {1e-3}

    def test_bad_arguments_rejected(self):
        with pytest.raises(ConfigError):
            step_decay_lr(0.0, 1)
        with pytest.raises(ConfigError):
            step_decay_lr(1e-3, -1)
