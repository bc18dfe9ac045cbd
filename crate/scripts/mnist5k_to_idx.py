#!/usr/bin/env python3
"""Convert the 5,000-sample MNIST subset bundled with mlxtend into IDX files.

Usage:
    pip download --no-deps mlxtend -d /tmp/mlx
    python3 scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-*.whl data/mnist5k

Writes `train-images-idx3-ubyte` and `train-labels-idx1-ubyte` in the
standard big-endian IDX layout (magic 0x00000803 / 0x00000801).
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel: str, out_dir: str) -> None:
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER)).decode("ascii")
    rows = [list(map(int, map(float, line.split(",")))) for line in io.StringIO(raw) if line.strip()]
    pixels = [r[:-1] for r in rows]
    labels = [r[-1] for r in rows]
    assert all(len(p) == 784 for p in pixels)
    assert all(0 <= v <= 255 for p in pixels for v in p)
    assert all(0 <= y <= 9 for y in labels)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(pixels), 28, 28))
        for p in pixels:
            f.write(bytes(p))
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(labels)} samples to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
