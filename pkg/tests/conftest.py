"""Shared fixtures: synthetic MNIST-format data, tiny trained checkpoints,
finite-difference helpers, and a per-criterion summary for the acceptance run."""

from __future__ import annotations

import numpy as np
import pytest

from minidiffusion import Rng, TrainConfig, train
from minidiffusion.datasets import write_idx_images, write_idx_labels

# ---------------------------------------------------------------------------
# synthetic digit-like data (structured per class, jittered per sample)
# ---------------------------------------------------------------------------


def _glyph(label: int, size: int) -> np.ndarray:
    img = np.zeros((size, size), dtype=np.float64)
    s = size
    q = s // 4
    if label == 0:
        img[q : s - q, s // 3 : 2 * s // 3] = 1.0  # vertical bar
    elif label == 1:
        img[s // 3 : 2 * s // 3, q : s - q] = 1.0  # horizontal bar
    elif label == 2:
        img[: s // 2, : s // 2] = 1.0  # top-left block
    elif label == 3:
        img[: s // 2, s // 2 :] = 1.0  # top-right block
    elif label == 4:
        img[s // 2 :, : s // 2] = 1.0  # bottom-left block
    elif label == 5:
        img[s // 2 :, s // 2 :] = 1.0  # bottom-right block
    elif label == 6:
        img[::4, :] = 1.0
        img[1::4, :] = 1.0  # horizontal stripes
    elif label == 7:
        img[:, ::4] = 1.0
        img[:, 1::4] = 1.0  # vertical stripes
    elif label == 8:
        img[q : s - q, q : s - q] = 1.0
        inner = max(q + 2, s // 3)
        img[inner : s - inner, inner : s - inner] = 0.0  # ring
    else:
        np.fill_diagonal(img, 1.0)
        np.fill_diagonal(img[:, ::-1], 1.0)  # X
        img = np.maximum(img, np.roll(img, 1, axis=1))
    return img


def synthetic_digits(n: int, seed: int, size: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """n structured uint8 images with class labels, jittered per sample."""
    rng = Rng(seed)
    labels = rng.randint(0, 10, n)
    shifts = rng.randint(-2, 3, (n, 2))
    amps = 0.6 + 0.4 * rng.uniform(n)
    images = np.empty((n, size, size), dtype=np.uint8)
    for i in range(n):
        img = _glyph(int(labels[i]), size)
        img = np.roll(img, (int(shifts[i, 0]), int(shifts[i, 1])), axis=(0, 1))
        images[i] = np.rint(img * 255.0 * amps[i]).astype(np.uint8)
    return images, labels.astype(np.uint8)


def write_digit_dataset(directory, n: int, seed: int, size: int = 28) -> None:
    images, labels = synthetic_digits(n, seed, size)
    write_idx_images(directory / "train-images-idx3-ubyte", images)
    write_idx_labels(directory / "train-labels-idx1-ubyte", labels)


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """512 MNIST-format 28x28 training images (the desk-scale corpus)."""
    d = tmp_path_factory.mktemp("mnist")
    write_digit_dataset(d, n=512, seed=101)
    return d


@pytest.fixture(scope="session")
def tiny_mnist_dir(tmp_path_factory):
    """64 tiny 8x8 images for fast end-to-end runs."""
    d = tmp_path_factory.mktemp("tiny_mnist")
    write_digit_dataset(d, n=64, seed=202, size=8)
    return d


@pytest.fixture(scope="session")
def tiny_ckpt(tmp_path_factory, tiny_mnist_dir):
    """Unconditional checkpoint from a few quick steps on the 8x8 corpus."""
    from minidiffusion import load_dataset

    out = tmp_path_factory.mktemp("tiny_run")
    cfg = TrainConfig(epochs=2, batch_size=16, timesteps=50, seed=3, out_dir=out)
    result = train(cfg, load_dataset("mnist", tiny_mnist_dir), log=lambda *_: None)
    return result.checkpoint_path


@pytest.fixture(scope="session")
def tiny_cond_ckpt(tmp_path_factory, tiny_mnist_dir):
    """Conditional (labeled) counterpart of tiny_ckpt."""
    from minidiffusion import load_dataset

    out = tmp_path_factory.mktemp("tiny_cond_run")
    cfg = TrainConfig(epochs=2, batch_size=16, timesteps=50, seed=4, conditional=True, out_dir=out)
    result = train(cfg, load_dataset("mnist", tiny_mnist_dir), log=lambda *_: None)
    return result.checkpoint_path


# ---------------------------------------------------------------------------
# finite-difference gradient oracle
# ---------------------------------------------------------------------------


def fd_coords(array: np.ndarray, max_coords: int | None, seed: int = 0) -> np.ndarray:
    """Flat indices to probe: everything, or a seeded sample for big tensors."""
    if max_coords is None or array.size <= max_coords:
        return np.arange(array.size)
    return np.unique(Rng(seed).randint(0, array.size, max_coords))


def fd_grad(f, array: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central finite differences of scalar f() wrt array (mutated in place).

    Returns a full-shape gradient; entries outside ``coords`` stay zero.
    """
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    if coords is None:
        coords = np.arange(flat.size)
    for j in coords:
        orig = flat[j]
        flat[j] = orig + h
        fp = f()
        flat[j] = orig - h
        fm = f()
        flat[j] = orig
        gflat[j] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    # floored denominator: exactly-zero gradients (e.g. conv bias feeding a
    # group norm) otherwise divide numerical dust by numerical dust
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(float(np.abs(exact).max(initial=0.0)), 1e-3)
    return float(np.abs(np.asarray(approx, dtype=np.float64) - exact).max(initial=0.0)) / denom


# ---------------------------------------------------------------------------
# acceptance reporting: one line per criterion at the end of the run
# ---------------------------------------------------------------------------

_acceptance_results: list[tuple[str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and "test_acceptance" in item.nodeid:
        _acceptance_results.append((item.name, "PASS" if rep.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in sorted(_acceptance_results):
        terminalreporter.write_line(f"{status}  {name}")
