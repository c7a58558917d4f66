"""Generate a synthetic manifest with random layers for CLI demos.

Writes weight and calibration tensors plus a manifest.json pointing at
them, so quantize jobs can run against something immediately:

    python3 scripts/make_synthetic_manifest.py --out /tmp/demo --layers 3
    comq quantize /tmp/demo/manifest.json --out /tmp/demo/artifacts
"""

import argparse
import json
from pathlib import Path

import numpy as np

from comq.tensor_io import save_tensor


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--layers", type=int, default=3)
    ap.add_argument("--rows", type=int, default=64, help="input features per layer")
    ap.add_argument("--cols", type=int, default=32, help="output channels per layer")
    ap.add_argument("--calib-rows", type=int, default=128)
    ap.add_argument("--bits", type=int, default=4, help="manifest default bit width")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--heavy-tails", action="store_true",
                    help="draw weights from a Student-t with 2 degrees of freedom")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    layers = []
    for idx in range(args.layers):
        name = f"layer{idx}"
        if args.heavy_tails:
            W = rng.standard_t(2, size=(args.rows, args.cols))
        else:
            W = rng.standard_normal((args.rows, args.cols))
        X = rng.standard_normal((args.calib_rows, args.rows))
        save_tensor(out / f"{name}_w.ct", W.astype(np.float32))
        save_tensor(out / f"{name}_x.ct", X.astype(np.float32))
        layers.append({"name": name, "weight": f"{name}_w.ct",
                       "calib": f"{name}_x.ct"})
    doc = {"defaults": {"bits": args.bits}, "layers": layers}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {len(layers)} layers to {out / 'manifest.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
