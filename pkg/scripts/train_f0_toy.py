"""Train the F0 predictor on the synthetic vowel set and summarise the loss curve.

    python3 scripts/train_f0_toy.py --steps 2000 --out runs/f0_toy
"""

import argparse
import json

import numpy as np

from mbexwn.config import PipelineConfig
from mbexwn.training import block_means, synthetic_dataset, train_f0_toy


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--clips", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--recon-every", type=int, default=0,
                   help="add the boundary reconstruction loss to every k-th step (0: report only)")
    p.add_argument("--out", default="runs/f0_toy")
    args = p.parse_args()

    cfg = PipelineConfig()
    cfg.train.seed = args.seed
    cfg.train.recon_every = args.recon_every
    res = train_f0_toy(synthetic_dataset(args.clips, seed=args.seed), cfg, out_dir=args.out,
                       steps=args.steps, log=print)
    print("block means:", np.round(block_means(res.losses, 100), 3).tolist())
    print(json.dumps(res.to_dict(), indent=2))


if __name__ == "__main__":
    main()
