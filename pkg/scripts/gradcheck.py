"""Central-difference check of both loss gradients on a small network."""
import argparse
import time

import numpy as np

from neuroscore.nn.gradcheck import check_batch
from neuroscore.nn.model import Arch, ModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batches", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=3)
    ap.add_argument("--h", type=float, default=1e-5)
    args = ap.parse_args()
    arch = Arch(image_size=12, conv1=2, conv2=3, fc1=7, fc2=5, source_len=4)
    t0 = time.perf_counter()
    worst, kinks, coords = 0.0, 0, 0
    for seed in range(args.batches):
        rng = np.random.default_rng(seed)
        params = ModelParams.init(arch, seed)
        images = rng.random((args.batch_size, arch.image_size, arch.image_size))
        for which, targets in (("loss1", rng.normal(size=(args.batch_size, arch.source_len))),
                               ("loss2", rng.normal(size=args.batch_size))):
            r = check_batch(params, images, targets, which, args.h)
            worst = max(worst, r.max_rel_error)
            kinks += r.n_one_sided
            coords += r.n_coords
    print(f"max relative error {worst:.3e} over {args.batches} batches, "
          f"{coords} coordinates ({kinks} near a kink, checked one-sided) "
          f"in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
