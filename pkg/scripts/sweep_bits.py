"""Quantize one synthetic layer at several bit widths and print errors.

Desk-scale view of how the relative reconstruction error falls as the
code width grows, for both granularities:

    python3 scripts/sweep_bits.py --bits 2 3 4 8 --seed 7
"""

import argparse

import numpy as np

from comq.grid import QuantConfig
from comq.perchannel import comq_per_channel
from comq.perlayer import comq_per_layer


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, nargs="+", default=[2, 3, 4, 8])
    ap.add_argument("--rows", type=int, default=64)
    ap.add_argument("--cols", type=int, default=32)
    ap.add_argument("--calib-rows", type=int, default=128)
    ap.add_argument("--iters", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    W = rng.standard_normal((args.rows, args.cols))
    X = rng.standard_normal((args.calib_rows, args.rows))
    ref = float(np.linalg.norm(X @ W)) + 1e-12

    print(f"{'bits':>4}  {'per-layer':>10}  {'per-channel':>12}")
    for bits in args.bits:
        rels = []
        for granularity, solve in (("per-layer", comq_per_layer),
                                   ("per-channel", comq_per_channel)):
            cfg = QuantConfig(bits=bits, iters=args.iters, granularity=granularity)
            rels.append(np.sqrt(solve(W, X, cfg).final_error) / ref)
        print(f"{bits:>4}  {rels[0]:>10.5f}  {rels[1]:>12.5f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
