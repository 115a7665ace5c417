"""Count SR-FM outputs over a noise corpus and compare with the closed-form window count.

Example:
    python3 scripts/srfm_count_ratio.py --recordings 50 --k 1 6
"""

import argparse

import numpy as np

from dialect_aug import augment
from dialect_aug.corpus import Waveform, segment_recording

RATE = 16000


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--recordings", type=int, default=50)
    ap.add_argument("--min-windows", type=int, default=30)
    ap.add_argument("--max-windows", type=int, default=50)
    ap.add_argument("--k", type=int, nargs="+", default=[1, 6])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    n_in, predicted = 0, 0
    produced = {k: 0 for k in args.k}
    for i in range(args.recordings):
        n = int(rng.integers(args.min_windows, args.max_windows + 1))
        x = Waveform(rng.standard_normal(int((10 * n + rng.uniform(0, 9.9)) * RATE)) * 0.1, RATE)
        segs = segment_recording(x, recording_id=f"r{i:03d}")
        n_in += len(segs)
        predicted += augment.srfm_window_count(len(segs))
        for k in args.k:
            produced[k] += sum(1 for _ in augment.iter_sr_fm_copies(segs, k, args.seed))
    print(f"input windows: {n_in} over {args.recordings} recordings")
    print(f"closed-form windows per pass: {predicted}")
    for k, n in produced.items():
        print(f"SR-FM-{k}: {n} outputs, {n / k:g} per pass, ratio {n / (k * n_in):.4f}")


if __name__ == "__main__":
    main()
