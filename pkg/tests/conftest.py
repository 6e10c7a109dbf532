import numpy as np
import pytest
import torch

from maker.batching import collate, prepare_samples
from maker.data import IntervalModel, synth_dataset, synth_trajectory, window_samples
from maker.forecaster import AblationFlags, ModelConfig, init_model
from maker.prompt_lm import StubProvider

TINY = ModelConfig(
    h=16, p=4, patch_len=16, stride=8, d_model=4, enc_layers=1, enc_heads=2, hidden=6, n_prototypes=3,
    d_dec=8, dec_layers=1, dec_heads=2,
)


@pytest.fixture(scope="session")
def provider():
    return StubProvider()


@pytest.fixture(scope="session")
def tiny_provider():
    return StubProvider(vocab_size=50, embed_width=8, context_limit=64, seed=1)


@pytest.fixture(scope="session")
def mixed_samples():
    trajs = synth_dataset(4, 60, "mixed", 2e-4, seed=3, interval_model=IntervalModel.jittered(60, 15))
    return [s for t in trajs for s in window_samples(t, 24, 24, stride=6)]


@pytest.fixture(scope="session")
def prepared(mixed_samples, provider):
    return prepare_samples(mixed_samples, provider)


@pytest.fixture(scope="session")
def tiny_prepared(tiny_provider):
    traj = synth_trajectory("zigzag", 40, 1e-4, seed=5, interval_model=IntervalModel.jittered(60, 10))
    samples = window_samples(traj, TINY.h, TINY.p, stride=5)
    return prepare_samples(samples, tiny_provider)


@pytest.fixture
def tiny_batch(tiny_prepared):
    return collate(tiny_prepared[:3], torch.float64)


def tiny_model(provider, flags=AblationFlags(), seed=0):
    return init_model(seed, TINY, flags, provider.word_embeddings, torch.float64)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||)."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def finite_difference_grad(fn, x: torch.Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of one double tensor."""
    x = x.detach().clone()
    grad = np.zeros(x.numel())
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        up = fn(x).item()
        flat[i] = orig - eps
        down = fn(x).item()
        flat[i] = orig
        grad[i] = (up - down) / (2 * eps)
    return grad.reshape(x.shape)


def analytic_grad(fn, x: torch.Tensor) -> np.ndarray:
    x = x.detach().clone().requires_grad_(True)
    fn(x).backward()
    return x.grad.numpy()
