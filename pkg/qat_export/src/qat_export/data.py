"""Dataset access: MNIST IDX files when available, synthetic sequences for
machinery smoke tests. The IDX layout is the standard big-endian one
(magic 0x00000803 images / 0x00000801 labels)."""

import os
import struct

import numpy as np

MNIST_ENV = "MNIST_DIR"
TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def read_idx(path):
    with open(path, "rb") as f:
        raw = f.read()
    magic = struct.unpack(">I", raw[:4])[0]
    ndim = magic & 0xFF
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw[4 + 4 * ndim :], dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: truncated IDX payload")
    return data.reshape(dims)


def mnist_dir():
    return os.environ.get(MNIST_ENV)


def mnist_available():
    d = mnist_dir()
    if not d:
        return False
    return all(
        os.path.exists(os.path.join(d, name)) for name in TRAIN_FILES + TEST_FILES
    )


def load_mnist_sequences(split="train", threshold=0.5, limit=None):
    """Pixel-serial presentation: 784 steps of width 1, binarized."""
    d = mnist_dir()
    imgs_name, lbls_name = TRAIN_FILES if split == "train" else TEST_FILES
    images = read_idx(os.path.join(d, imgs_name))
    labels = read_idx(os.path.join(d, lbls_name)).astype(np.int64)
    if limit:
        images, labels = images[:limit], labels[:limit]
    bits = (images.astype(np.float64) / 255.0 >= threshold).astype(np.float64)
    return bits.reshape(len(bits), -1, 1), labels


def synthetic_task(rng, n, length=16, gap=2, width=1):
    """Delayed-XOR stand-in task for machinery tests without MNIST."""
    x = (rng.random((n, length, width)) < 0.5).astype(np.float64)
    y = x[:, -1 - gap, 0].astype(np.int64) ^ x[:, -1, 0].astype(np.int64)
    return x, y
