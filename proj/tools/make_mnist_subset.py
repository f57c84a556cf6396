#!/usr/bin/env python3
"""Rebuild data/mnist10k/ from the 10,000 MNIST digits bundled in the npm `mnist` package.

Usage: tools/make_mnist_subset.py [--package-dir DIR] [--out DIR]

Without --package-dir the package tarball is fetched with `npm pack mnist@1.1.0`.
Pixels are stored as round(v * 255) in the standard IDX layout, gzip-compressed.
"""
import argparse
import gzip
import json
import pathlib
import struct
import subprocess
import tarfile
import tempfile


def load_digits(package_dir: pathlib.Path):
    images, labels = bytearray(), bytearray()
    for digit in range(10):
        values = json.loads((package_dir / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(values) % 784 == 0
        images.extend(min(255, max(0, round(v * 255))) for v in values)
        labels.extend([digit] * (len(values) // 784))
    return bytes(images), bytes(labels)


def write_idx(out: pathlib.Path, images: bytes, labels: bytes) -> None:
    count = len(labels)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        f.write(images)
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, count))
        f.write(labels)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--package-dir", type=pathlib.Path)
    ap.add_argument("--out", type=pathlib.Path,
                    default=pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist10k")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.package_dir is not None:
        images, labels = load_digits(args.package_dir)
    else:
        with tempfile.TemporaryDirectory() as tmp:
            subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True)
            with tarfile.open(next(pathlib.Path(tmp).glob("mnist-*.tgz"))) as tar:
                tar.extractall(tmp)
            images, labels = load_digits(pathlib.Path(tmp) / "package")
    write_idx(args.out, images, labels)
    print(f"wrote {len(labels)} digits to {args.out}")


if __name__ == "__main__":
    main()
