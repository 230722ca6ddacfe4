"""Print the RF-branch Gabor banks and write them as image sheets.

    python demos/gabor_banks.py --out /tmp/banks --kernels 4
"""
import argparse

import numpy as np

from wnet import gabor, render


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="gabor_banks")
    ap.add_argument("--kernels", type=int, default=4)
    args = ap.parse_args()
    for branch in gabor.BRANCHES:
        print(f"branch {branch}: kernel {gabor.kernel_shape(branch)}")
        for spec, k in zip(gabor.bank_specs(branch, args.kernels), gabor.build_branch_bank(branch, args.kernels)):
            col = k[:, k.shape[1] // 2]
            peak = int(np.argmax(gabor.dominant_bin(col)[: len(col) // 2 + 1]))
            print(f"  f={spec.freq:.3f} phase={spec.phase:.3f}  sum={k.sum():+.1e}  "
                  f"norm={np.linalg.norm(k):.6f}  DFT peak bin {peak}/{len(col)}")
    paths = render.dump_gabor_banks(args.out, args.kernels)
    print("wrote", ", ".join(str(p) for p in paths))


if __name__ == "__main__":
    main()
