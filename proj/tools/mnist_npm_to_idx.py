#!/usr/bin/env python3
"""Convert the digit JSON files of the `mnist` npm package to IDX files.

Usage: mnist_npm_to_idx.py <package>/src/digits <out_dir> [--test N] [--seed S]

The package ships 10000 MNIST digits grouped by label. They are shuffled with a
fixed seed and split into train-* and t10k-* IDX files.
"""
import argparse
import json
import random
import struct
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20260101)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        data = json.loads((args.digits_dir / f"{label}.json").read_text())["data"]
        n = len(data) // 784
        for i in range(n):
            pixels = [min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784]]
            samples.append((pixels, label))
    random.Random(args.seed).shuffle(samples)

    test, train = samples[:args.test], samples[args.test:]
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for prefix, part in (("train", train), ("t10k", test)):
        images = [p for pixels, _ in part for p in pixels]
        write_idx(args.out_dir / f"{prefix}-images-idx3-ubyte", 0x803, (len(part), 28, 28), images)
        write_idx(args.out_dir / f"{prefix}-labels-idx1-ubyte", 0x801, (len(part),), [l for _, l in part])
        print(f"{prefix}: {len(part)} samples")


if __name__ == "__main__":
    main()
