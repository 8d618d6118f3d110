#!/usr/bin/env python3
"""Convert the digit subset bundled in the npm `mnist` package into IDX files.

Usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_from_npm.py package/src/digits data/mnist

Writes train-images-idx3-ubyte / train-labels-idx1-ubyte (6000 digits) and
t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte (the remaining 4000 digits).
The split is a fixed-seed shuffle so reruns are byte-identical.
"""
import json
import random
import struct
import sys
from pathlib import Path

N_TRAIN = 6000


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(raw) % 784 == 0
        for k in range(len(raw) // 784):
            px = [min(255, max(0, round(v * 255))) for v in raw[784 * k : 784 * (k + 1)]]
            samples.append((px, digit))
    random.Random(42).shuffle(samples)
    train, test = samples[:N_TRAIN], samples[N_TRAIN:]
    write_images(dst / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(dst / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(dst / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(dst / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"{len(train)} train / {len(test)} test digits written to {dst}")


if __name__ == "__main__":
    main()
