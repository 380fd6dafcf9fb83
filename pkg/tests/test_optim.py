import numpy as np
import pytest

from srapf.nn import Parameter
from srapf.optim import AdamW, CosineWarmupSchedule


def test_schedule_exact_endpoints():
    sched = CosineWarmupSchedule(total_steps=100, warmup_iters=18,
                                 warmup_lr=1e-8, floor=0.0)
    assert sched.lr_at(3e-4, 0) == 1e-8
    assert sched.lr_at(3e-4, 18) == 3e-4
    assert sched.lr_at(3e-4, 99) == 0.0


def test_schedule_warmup_is_linear():
    sched = CosineWarmupSchedule(total_steps=50, warmup_iters=10, warmup_lr=0.0)
    lrs = [sched.lr_at(1.0, t) for t in range(10)]
    np.testing.assert_allclose(np.diff(lrs), 0.1, atol=1e-15)


def test_schedule_non_increasing_after_warmup():
    sched = CosineWarmupSchedule(total_steps=200, warmup_iters=18)
    lrs = [sched.lr_at(1e-3, t) for t in range(18, 200)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_schedule_validates():
    with pytest.raises(ValueError, match="total_steps"):
        CosineWarmupSchedule(0)
    sched = CosineWarmupSchedule(10)
    with pytest.raises(ValueError, match="outside"):
        sched.lr_at(1.0, 10)
    with pytest.raises(ValueError, match="outside"):
        sched.lr_at(1.0, -1)


def reference_adamw(p0, grads, lr, wd, betas=(0.9, 0.999), eps=1e-8):
    """Textbook AdamW, scalar, written independently of the implementation."""
    b1, b2 = betas
    m = v = 0.0
    p = p0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
    return p


def test_adamw_matches_reference():
    rng = np.random.default_rng(4)
    grads = rng.normal(size=5)
    p = Parameter(np.array([0.7]))
    opt = AdamW([("only", 0.01, 0.1, [p])])
    for g in grads:
        p.grad[:] = g
        opt.step()
        p.zero_grad()
    want = reference_adamw(0.7, grads, lr=0.01, wd=0.1)
    np.testing.assert_allclose(p.value[0], want, atol=1e-15)


def test_decoupled_weight_decay_with_zero_grad():
    p = Parameter(np.array([2.0]))
    opt = AdamW([("g", 0.1, 0.5, [p])])
    opt.step()
    # zero gradient means zero adam update; only the decay moves the weight
    assert p.value[0] == 2.0 - 0.1 * 0.5 * 2.0


def test_per_step_lr_overrides():
    p = Parameter(np.array([1.0]))
    opt = AdamW([("g", 1.0, 0.0, [p])])
    p.grad[:] = 1.0
    opt.step({"g": 0.0})
    assert p.value[0] == 1.0  # zero lr, no movement
    p.grad[:] = 1.0
    opt.step({"g": 0.5})
    assert p.value[0] != 1.0


def test_frozen_params_never_registered_never_move():
    trainable = Parameter(np.array([1.0]))
    frozen = Parameter(np.array([1.0]))
    opt = AdamW([("g", 0.1, 0.0, [trainable])])
    before = frozen.value.copy()
    for _ in range(10):
        trainable.grad[:] = 1.0
        frozen.grad[:] = 1.0  # even with a gradient present
        opt.step()
    np.testing.assert_array_equal(frozen.value, before)
    assert trainable.value[0] != 1.0


def test_adamw_validates():
    p = Parameter(np.array([1.0]))
    with pytest.raises(ValueError, match="duplicate"):
        AdamW([("g", 0.1, 0.0, [p]), ("g", 0.1, 0.0, [p])])
    with pytest.raises(ValueError, match=">= 0"):
        AdamW([("g", -0.1, 0.0, [p])])
    with pytest.raises(ValueError, match="betas"):
        AdamW([("g", 0.1, 0.0, [p])], betas=(1.0, 0.999))
