#!/usr/bin/env python3
"""Write the 5,000-image MNIST sample shipped with mlxtend as IDX files.

The sample holds 500 images per digit. It is shuffled with a fixed seed and
split into 4,000 training and 1,000 test images, written in the standard
IDX layout (big-endian header, unsigned byte payload).

Usage:
    python3 tools/make_mnist_subset.py [--wheel mlxtend.whl] [--out data/mnist]
"""
import argparse
import gzip
import io
import pathlib
import struct
import zipfile

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def load_csv(wheel):
    if wheel:
        raw = zipfile.ZipFile(wheel).read(CSV_MEMBER)
    else:
        import mlxtend  # noqa: F401
        path = pathlib.Path(mlxtend.__file__).parent / "data" / "data" / "mnist_5k.csv.gz"
        raw = path.read_bytes()
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",")
    return table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel", default=None)
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--train", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=20220705)
    args = ap.parse_args()

    images, labels = load_csv(args.wheel)
    order = np.random.default_rng(args.seed).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[: args.train])
    write_labels(out / "train-labels-idx1-ubyte", labels[: args.train])
    write_images(out / "t10k-images-idx3-ubyte", images[args.train:])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[args.train:])
    print(f"wrote {args.train} train / {len(labels) - args.train} test images to {out}")


if __name__ == "__main__":
    main()
