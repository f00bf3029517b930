#!/usr/bin/env python3
"""Rebuild the bundled MNIST IDX files from the `mnist` npm data package.

The npm package ships 10,000 genuine MNIST digits (28x28 grayscale, about
1,000 per class, pixel values rounded to 3 decimals which invert exactly to
the original bytes). This script converts them into standard IDX files with
a deterministic stratified 80/20 train/test split:

    python tools/build_mnist_from_npm.py [--pkg DIR] [--out data/mnist]

Without --pkg it runs `npm pack mnist` into a temp directory first. Output
files are gzipped; the test suite reads either .gz or raw IDX.
"""

import argparse
import gzip
import json
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

SPLIT_SEED = 0
TRAIN_FRACTION = 0.8


def load_digit_arrays(pkg_dir: Path):
    images, labels = [], []
    for digit in range(10):
        blob = json.loads((pkg_dir / "src" / "digits" / f"{digit}.json")
                          .read_text())["data"]
        arr = np.asarray(blob, dtype=np.float64).reshape(-1, 784)
        pixels = np.round(arr * 255.0).astype(np.uint8)
        images.append(pixels)
        labels.append(np.full(pixels.shape[0], digit, dtype=np.uint8))
    return images, labels


def stratified_split(images, labels):
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for x, y in zip(images, labels):
        cut = int(TRAIN_FRACTION * x.shape[0])
        tr_x.append(x[:cut])
        tr_y.append(y[:cut])
        te_x.append(x[cut:])
        te_y.append(y[cut:])
    rng = np.random.Generator(np.random.PCG64(SPLIT_SEED))
    train_x = np.concatenate(tr_x)
    train_y = np.concatenate(tr_y)
    order = rng.permutation(train_x.shape[0])
    test_x = np.concatenate(te_x)
    test_y = np.concatenate(te_y)
    order_te = rng.permutation(test_x.shape[0])
    return (train_x[order], train_y[order], test_x[order_te], test_y[order_te])


def _write_gz(path: Path, payload: bytes) -> None:
    # mtime pinned so regeneration is byte-identical.
    with open(path, "wb") as raw:
        with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as f:
            f.write(payload)


def write_idx_images(path: Path, images: np.ndarray) -> None:
    header = struct.pack(">IIII", 0x00000803, images.shape[0], 28, 28)
    _write_gz(path, header + images.tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    header = struct.pack(">II", 0x00000801, labels.shape[0])
    _write_gz(path, header + labels.tobytes())


def fetch_package(tmp: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist"], cwd=tmp, check=True,
                   capture_output=True)
    tarball = next(tmp.glob("mnist-*.tgz"))
    with tarfile.open(tarball) as tf:
        tf.extractall(tmp)
    return tmp / "package"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pkg", type=Path, default=None,
                    help="extracted npm package dir (skips npm pack)")
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parent.parent
                    / "data" / "mnist")
    args = ap.parse_args()

    if args.pkg is not None:
        pkg = args.pkg
        images, labels = load_digit_arrays(pkg)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            pkg = fetch_package(Path(tmp))
            images, labels = load_digit_arrays(pkg)

    train_x, train_y, test_x, test_y = stratified_split(images, labels)
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx_images(args.out / "train-images-idx3-ubyte.gz", train_x)
    write_idx_labels(args.out / "train-labels-idx1-ubyte.gz", train_y)
    write_idx_images(args.out / "t10k-images-idx3-ubyte.gz", test_x)
    write_idx_labels(args.out / "t10k-labels-idx1-ubyte.gz", test_y)
    print(f"wrote {train_x.shape[0]} train / {test_x.shape[0]} test samples "
          f"to {args.out}")


if __name__ == "__main__":
    main()
