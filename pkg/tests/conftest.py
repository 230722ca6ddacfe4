import sys

import numpy as np
import pytest
import torch

from wnet.data import Sample, save_dataset

sys.dont_write_bytecode = True
torch.set_num_threads(1)


def layered_sample(sid, rng, rows=32, cols=16, native=None):
    """Five horizontal layers whose RF carrier and grey level give the class away."""
    native = native or rows
    label = np.zeros((rows, cols), dtype=np.uint8)
    cuts = np.sort(rng.choice(np.arange(3, native - 2), 4, replace=False))
    edges = [0, *cuts, native]
    y = np.arange(rows)[:, None]
    rf = np.zeros((rows, cols), dtype=np.float32)
    grey = np.zeros((rows, cols), dtype=np.float32)
    for c in range(5):
        band = (y >= edges[c]) & (y < edges[c + 1])
        label[band[:, 0]] = c + 1
        rf += (band * np.cos(2 * np.pi * (0.1 + 0.08 * c) * y) * rng.uniform(0.5, 1, (1, cols))).astype(np.float32)
        grey += (band * (0.2 + 0.15 * c)).astype(np.float32)
    grey += rng.uniform(0, 0.05, grey.shape).astype(np.float32)
    grey[native:] = 0
    return Sample(sid, "A", rf, np.clip(grey, 0, 1), label, native)


def write_tiny_dataset(out, n_train=8, n_val=2, n_test=2, rows=32, cols=16, seed=0):
    rng = np.random.default_rng(seed)
    samples, splits = [], {}
    for i in range(n_train + n_val + n_test):
        s = layered_sample(f"t{i:02d}", rng, rows, cols)
        samples.append(s)
        splits[s.id] = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
    save_dataset(samples, splits, out)
    return out


@pytest.fixture
def tiny_dataset(tmp_path):
    return str(write_tiny_dataset(tmp_path / "data"))


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.VERDICTS:
            terminalreporter.write_line(line)
