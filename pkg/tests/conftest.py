import numpy as np
import pytest

from srapf.data import generate_shift_benchmark
from srapf.model import DualEncoderModel, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(0)


TINY = ModelConfig(input_dim=8, num_classes=4, embed_dim=12, width=16,
                   visual_blocks=3, text_blocks=2, vocab_size=32)


@pytest.fixture
def tiny_model():
    return DualEncoderModel(TINY, seed=7)


@pytest.fixture(scope="session")
def small_bench():
    """A 4-class, 8-dim task small enough for sub-second training runs."""
    return generate_shift_benchmark(
        num_classes=4, input_dim=8, seed=11, train_per_class=12,
        val_per_class=8, test_per_class=10, ood_per_class=10,
        captions_base=15, caption_decay=0.9)


def central_diff(f, x, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad
