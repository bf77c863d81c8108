#!/usr/bin/env python3
"""Builds data/mnist-subset: 10,000 MNIST digits repacked as gzipped IDX files.

The digits come from the MIT-licensed npm package `mnist` (1.1.0), whose
src/digits/<d>.json files hold 1,000 images per class as 784 floats scaled to
[0, 1] with three decimals; round(v * 255) recovers the original bytes.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset
"""

import argparse
import gzip
import json
import random
import struct
from pathlib import Path


def load_digits(src: Path):
    samples = []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{digit}.json: length {len(data)} is not a multiple of 784")
        for i in range(0, len(data), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in data[i:i + 784])
            samples.append((pixels, digit))
    return samples


def write_idx(path: Path, samples):
    with gzip.GzipFile(path.with_name(path.name.replace("LABELS", "images-idx3-ubyte") + ".gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(samples), 28, 28))
        for pixels, _ in samples:
            f.write(pixels)
    with gzip.GzipFile(path.with_name(path.name.replace("LABELS", "labels-idx1-ubyte") + ".gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(samples)))
        f.write(bytes(label for _, label in samples))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("digits", type=Path, help="directory with 0.json .. 9.json")
    parser.add_argument("out", type=Path)
    parser.add_argument("--train", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    samples = load_digits(args.digits)
    random.Random(args.seed).shuffle(samples)
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train-LABELS", samples[:args.train])
    write_idx(args.out / "t10k-LABELS", samples[args.train:])
    print(f"{args.train} training and {len(samples) - args.train} held-out digits written to {args.out}")


if __name__ == "__main__":
    main()
