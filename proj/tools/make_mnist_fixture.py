#!/usr/bin/env python3
"""Write an IDX image/label pair from the digit JSON files shipped in the
`mnist` npm package (https://www.npmjs.com/package/mnist).

Usage: make_mnist_fixture.py <package/src/digits> <out-prefix> [per_digit]

Images are interleaved by digit (0,1,...,9,0,1,...). Intensities in the
package are stored in [0,1] with three decimals; they are mapped back to
0..255 bytes.
"""
import json
import struct
import sys


def main():
    digits_dir, prefix = sys.argv[1], sys.argv[2]
    per_digit = int(sys.argv[3]) if len(sys.argv) > 3 else 100
    pixels = {}
    for d in range(10):
        with open(f"{digits_dir}/{d}.json") as fh:
            pixels[d] = json.load(fh)["data"]
    images, labels = bytearray(), bytearray()
    for i in range(per_digit):
        for d in range(10):
            img = pixels[d][i * 784:(i + 1) * 784]
            images.extend(min(255, max(0, round(v * 255))) for v in img)
            labels.append(d)
    n = per_digit * 10
    with open(prefix + "-images.idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        fh.write(images)
    with open(prefix + "-labels.idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels)


if __name__ == "__main__":
    main()
