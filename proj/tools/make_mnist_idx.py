#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Build gzip'd MNIST IDX files from the digit subset shipped in the npm `mnist` package.

The official MNIST archives are the preferred input for `m21 gen-dataset`. When
they cannot be downloaded, this script rebuilds IDX files (same headers and
layout) from the 10,000 genuine MNIST digits bundled with the npm package
`mnist@1.1.0`, whose pixels are stored as value/255 rounded to 3 decimals,
which round-trips to the original bytes exactly.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_idx.py package/src/digits data/mnist --test-count 2000
"""

import argparse
import gzip
import json
import random
import struct
from pathlib import Path


def load_digits(digits_dir: Path):
    samples = []
    for label in range(10):
        values = json.loads((digits_dir / f"{label}.json").read_text())["data"]
        if len(values) % 784:
            raise ValueError(f"{label}.json: length {len(values)} is not a multiple of 784")
        for i in range(len(values) // 784):
            chunk = values[i * 784:(i + 1) * 784]
            pixels = bytes(round(v * 255) for v in chunk)
            if any(abs(p / 255 - v) > 6e-4 for p, v in zip(pixels, chunk)):
                raise ValueError(f"{label}.json sample {i}: non-byte pixel value")
            samples.append((pixels, label))
    return samples


def write_idx(out_dir: Path, prefix: str, samples):
    images = struct.pack(">IIII", 0x00000803, len(samples), 28, 28)
    images += b"".join(p for p, _ in samples)
    labels = struct.pack(">II", 0x00000801, len(samples)) + bytes(l for _, l in samples)
    # mtime=0 keeps the archives byte-stable
    (out_dir / f"{prefix}-images-idx3-ubyte.gz").write_bytes(gzip.compress(images, 9, mtime=0))
    (out_dir / f"{prefix}-labels-idx1-ubyte.gz").write_bytes(gzip.compress(labels, 9, mtime=0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test-count", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    samples = load_digits(args.digits_dir)
    random.Random(args.seed).shuffle(samples)
    test, train = samples[:args.test_count], samples[args.test_count:]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir, "train", train)
    write_idx(args.out_dir, "t10k", test)
    print(f"train={len(train)} test={len(test)} -> {args.out_dir}")


if __name__ == "__main__":
    main()
