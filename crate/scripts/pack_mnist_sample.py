"""Re-encode the 10,000-digit MNIST sample shipped with the npm `mnist`
package (MIT licensed, src/digits/{0..9}.json) into gzipped IDX files.

usage: python3 scripts/pack_mnist_sample.py <path-to-npm-package> <out-dir>
"""
import gzip
import json
import os
import struct
import sys

import numpy as np

N_TRAIN = 7000


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(">I", magic))
        for d in dims:
            fh.write(struct.pack(">I", d))
        fh.write(payload)


def main():
    src, out = sys.argv[1], sys.argv[2]
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, "src", "digits", f"{digit}.json")) as fh:
            data = np.asarray(json.load(fh)["data"], dtype=np.float64)
        data = data.reshape(-1, 784)
        images.append(np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8))
        labels.append(np.full(len(data), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(0).permutation(len(labels))
    images, labels = images[order], labels[order]

    os.makedirs(out, exist_ok=True)
    splits = {
        "train": slice(0, N_TRAIN),
        "t10k": slice(N_TRAIN, len(labels)),
    }
    for name, sl in splits.items():
        imgs, labs = images[sl], labels[sl]
        write_idx(os.path.join(out, f"{name}-images-idx3-ubyte.gz"), 0x803,
                  (len(imgs), 28, 28), imgs.tobytes())
        write_idx(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"), 0x801,
                  (len(labs),), labs.tobytes())
        print(name, len(labs), np.bincount(labs, minlength=10).tolist())


if __name__ == "__main__":
    main()
