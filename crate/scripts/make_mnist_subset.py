#!/usr/bin/env python3
"""Build an MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT licensed) ships
10,000 MNIST digits as JSON arrays of pixel/255 rounded to three decimals,
so rounding back to 8 bits recovers the original bytes.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package/src/digits OUT_DIR [PER_DIGIT]
"""
import json
import os
import random
import struct
import sys


def main():
    src, out = sys.argv[1], sys.argv[2]
    per_digit = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    samples = []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            flat = json.load(fh)["data"]
        count = len(flat) // 784
        for i in range(min(per_digit, count)):
            pixels = bytes(round(v * 255) for v in flat[i * 784:(i + 1) * 784])
            samples.append((pixels, digit))
    random.Random(0).shuffle(samples)
    os.makedirs(out, exist_ok=True)
    n = len(samples)
    with open(os.path.join(out, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in samples:
            fh.write(pixels)
    with open(os.path.join(out, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(bytes(label for _, label in samples))
    print(f"wrote {n} digits to {out}")


if __name__ == "__main__":
    main()
