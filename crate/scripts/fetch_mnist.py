#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the npm `mnist` package.

    python3 scripts/fetch_mnist.py [--out data/mnist] [--tarball mnist-1.1.0.tgz]

Without --tarball the package is fetched with `npm pack mnist@1.1.0`.
The 10,000 digits are shuffled with a fixed seed; the first 2,000 become
t10k-*, the rest train-*.
"""

import argparse
import json
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

SEED = 20240601
N_TEST = 2000
SIDE = 28


def npm_pack(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True, capture_output=True)
    return next(workdir.glob("mnist-*.tgz"))


def load_digits(tarball: Path):
    images, labels = [], []
    with tarfile.open(tarball) as tf:
        for d in range(10):
            raw = json.load(tf.extractfile(f"package/src/digits/{d}.json"))["data"]
            px = np.rint(np.asarray(raw, dtype=np.float64) * 255).clip(0, 255).astype(np.uint8)
            px = px.reshape(-1, SIDE * SIDE)
            images.append(px)
            labels.append(np.full(len(px), d, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(out: Path, stem: str, x: np.ndarray, y: np.ndarray):
    with open(out / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(x), SIDE, SIDE))
        f.write(x.tobytes())
    with open(out / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(y)))
        f.write(y.tobytes())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/mnist")
    ap.add_argument("--tarball")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tarball = Path(args.tarball) if args.tarball else npm_pack(Path(tmp))
        x, y = load_digits(tarball)
    perm = np.random.default_rng(SEED).permutation(len(y))
    x, y = x[perm], y[perm]
    write_idx(out, "t10k", x[:N_TEST], y[:N_TEST])
    write_idx(out, "train", x[N_TEST:], y[N_TEST:])
    print(f"wrote {len(y) - N_TEST} train / {N_TEST} test images to {out}")


if __name__ == "__main__":
    main()
