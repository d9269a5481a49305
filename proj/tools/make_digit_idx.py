#!/usr/bin/env python3
"""Convert a CSV of 28x28 digit images (784 pixel columns then a label column)
into IDX files: train-images-idx3-ubyte, train-labels-idx1-ubyte and the
t10k-* pair for the last --test rows.

The 5000-image MNIST subset shipped with mlxtend (mlxtend/data/data/mnist_5k.csv.gz)
has this layout:

    pip download mlxtend --no-deps -d /tmp/w && cd /tmp/w && python3 -m zipfile -e mlxtend-*.whl x
    python3 tools/make_digit_idx.py x/mlxtend/data/data/mnist_5k.csv.gz --out tests/data/mnist5k
"""
import argparse
import csv
import gzip
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
    ap.add_argument("csv")
    ap.add_argument("--out", required=True)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0, help="shuffle seed; the source rows are sorted by class")
    args = ap.parse_args()

    opener = gzip.open if args.csv.endswith(".gz") else open
    with opener(args.csv, "rt") as f:
        rows = [[int(float(v)) for v in r] for r in csv.reader(f) if r]
    for r in rows:
        if len(r) != 785 or not all(0 <= v <= 255 for v in r[:784]) or not 0 <= r[784] <= 9:
            raise SystemExit("unexpected row layout")

    random.Random(args.seed).shuffle(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": rows[: len(rows) - args.test], "t10k": rows[len(rows) - args.test :]}
    for name, part in splits.items():
        pixels = [v for r in part for v in r[:784]]
        write_idx(out / f"{name}-images-idx3-ubyte", 0x00000803, [len(part), 28, 28], pixels)
        write_idx(out / f"{name}-labels-idx1-ubyte", 0x00000801, [len(part)], [r[784] for r in part])
        print(f"{name}: {len(part)} images")


if __name__ == "__main__":
    main()
