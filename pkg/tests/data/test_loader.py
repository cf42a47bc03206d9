import numpy as np
import torch

from ebnet.data import ArrayDataset, DataBundle, epoch_permutation, make_loader, sample_generator


def _bundle(n_train: int = 40, n_test: int = 10) -> DataBundle:
    rng = np.random.default_rng(0)
    train = ArrayDataset(rng.integers(0, 256, size=(n_train, 3, 32, 32), dtype=np.uint8), np.arange(n_train) % 10)
    test = ArrayDataset(rng.integers(0, 256, size=(n_test, 3, 32, 32), dtype=np.uint8), np.arange(n_test) % 10)
    return DataBundle("cifar10", train, test, 10, 3, 32, [0.5, 0.5, 0.5], [0.25, 0.25, 0.25])


def test_epoch_permutation_is_reproducible_in_isolation():
    a = epoch_permutation(100, seed=7, epoch=3)
    b = epoch_permutation(100, seed=7, epoch=3)
    assert np.array_equal(a, b)
    assert sorted(a.tolist()) == list(range(100))
    assert not np.array_equal(a, epoch_permutation(100, seed=7, epoch=4))
    assert not np.array_equal(a, epoch_permutation(100, seed=8, epoch=3))


def test_sample_generators_are_independent_of_history():
    first = sample_generator(1, 2, 3).random(4)
    sample_generator(1, 2, 4).random(100)
    assert np.array_equal(first, sample_generator(1, 2, 3).random(4))
    assert not np.array_equal(first, sample_generator(1, 2, 4).random(4))


def _epoch_batches(bundle, seed, epoch):
    loader = make_loader(bundle, split="train", batch_size=16, seed=seed, epoch=epoch)
    return [(x.clone(), y.clone()) for x, y in loader]


def test_train_loader_is_deterministic():
    bundle = _bundle()
    a = _epoch_batches(bundle, seed=3, epoch=1)
    b = _epoch_batches(bundle, seed=3, epoch=1)
    assert len(a) == 3
    for (xa, ya), (xb, yb) in zip(a, b):
        assert torch.equal(xa, xb)
        assert torch.equal(ya, yb)
    c = _epoch_batches(bundle, seed=3, epoch=2)
    assert not torch.equal(a[0][1], c[0][1]) or not torch.equal(a[0][0], c[0][0])


def test_test_loader_keeps_file_order_and_normalizes():
    bundle = _bundle()
    batches = list(make_loader(bundle, split="test", batch_size=4, seed=0))
    labels = torch.cat([y for _, y in batches])
    assert labels.tolist() == [i % 10 for i in range(10)]
    x0 = batches[0][0][0]
    raw = bundle.test[0][0].to(torch.float32) / 255.0
    torch.testing.assert_close(x0, (raw - 0.5) / 0.25)
