"""Worst relative gradient error per block across probe seeds.

Shows how far each variant sits below the 1e-4 pass threshold.
"""

import argparse

from skipflow.diagnostics import SMALL, check_model_gradients
from skipflow.model import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--variants", default="tensor,bilinear")
    args = ap.parse_args()
    for variant in args.variants.split(","):
        for seed in range(args.seeds):
            rep = check_model_gradients(ModelConfig(**SMALL, variant=variant), seed=seed)
            name = max(rep.max_rel_error, key=rep.max_rel_error.get)
            print(f"{variant:9s} seed {seed}: worst {rep.worst:.2e} ({name}) {'pass' if rep.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
