#!/usr/bin/env python3
# Copyright 2026 The smoothcert Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Convert the 10 000 MNIST digits bundled in the `mnist` npm package to IDX.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist10k

The digits ship grouped by class; they are interleaved with a fixed
permutation so that any prefix/suffix split is class-mixed.
"""

import argparse
import json
import random
import struct
from pathlib import Path

ROWS = COLS = 28


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()

    samples = []
    for label in range(10):
        data = json.loads((args.digits_dir / f"{label}.json").read_text())["data"]
        assert len(data) % (ROWS * COLS) == 0
        for off in range(0, len(data), ROWS * COLS):
            pix = bytes(min(255, max(0, round(v * 255))) for v in data[off:off + ROWS * COLS])
            samples.append((pix, label))

    random.Random(args.seed).shuffle(samples)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(samples), ROWS, COLS))
        for pix, _ in samples:
            f.write(pix)
    with open(args.out_dir / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(samples)))
        f.write(bytes(label for _, label in samples))
    print(f"wrote {len(samples)} samples to {args.out_dir}")


if __name__ == "__main__":
    main()
