#!/usr/bin/env python3
"""Convert the npm `mnist` and `fashion-mnist` JSON bundles into IDX files.

Usage:
    npm pack mnist fashion-mnist
    tar xzf mnist-1.1.0.tgz && mv package mnist
    tar xzf fashion-mnist-1.1.0.tgz && mv package fashion
    python3 scripts/desk_data.py --mnist mnist --fashion fashion --out data

Writes <out>/{mnist,fashion}/{train,test}-{images-idx3,labels-idx1}-ubyte.
"""
import argparse
import json
import os
import random
import struct

SIDE = 28


def load_mnist(root):
    per_class = []
    for k in range(10):
        with open(os.path.join(root, "src", "digits", f"{k}.json")) as f:
            flat = json.load(f)["data"]
        n = len(flat) // (SIDE * SIDE)
        rows = []
        for i in range(n):
            px = flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE]
            rows.append(bytes(min(255, max(0, round(v * 255))) for v in px))
        per_class.append(rows)
    return per_class


def load_fashion(root):
    per_class = []
    for k in range(10):
        with open(os.path.join(root, "src", "clothes", f"{k}.json")) as f:
            data = json.load(f)["data"]
        per_class.append([bytes(row) for row in data])
    return per_class


def write_idx(path_prefix, samples):
    images = os.path.join(path_prefix + "-images-idx3-ubyte")
    labels = os.path.join(path_prefix + "-labels-idx1-ubyte")
    with open(images, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(samples), SIDE, SIDE))
        for img, _ in samples:
            f.write(img)
    with open(labels, "wb") as f:
        f.write(struct.pack(">II", 2049, len(samples)))
        f.write(bytes(lbl for _, lbl in samples))


def split(per_class, n_train, n_test, seed):
    rng = random.Random(seed)
    train, test = [], []
    for k, rows in enumerate(per_class):
        idx = list(range(len(rows)))
        rng.shuffle(idx)
        train += [(rows[i], k) for i in idx[:n_train]]
        test += [(rows[i], k) for i in idx[n_train:n_train + n_test]]
    rng.shuffle(train)
    rng.shuffle(test)
    return train, test


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist", required=True)
    ap.add_argument("--fashion", required=True)
    ap.add_argument("--out", default="data")
    ap.add_argument("--train-per-class", type=int, default=500)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20190708)
    args = ap.parse_args()

    for name, loader, root in (("mnist", load_mnist, args.mnist), ("fashion", load_fashion, args.fashion)):
        per_class = loader(root)
        train, test = split(per_class, args.train_per_class, args.test_per_class, args.seed)
        out = os.path.join(args.out, name)
        os.makedirs(out, exist_ok=True)
        write_idx(os.path.join(out, "train"), train)
        write_idx(os.path.join(out, "test"), test)
        print(f"{name}: {len(train)} train, {len(test)} test -> {out}")


if __name__ == "__main__":
    main()
