"""5-fold CV on one ASAP prompt for several variants (hours on CPU).

    python scripts/run_asap_cv.py --data training_set_rel3.tsv --prompt 1 --out runs/asap
"""

import argparse
import json
from pathlib import Path

from skipflow.cli import main as skipflow


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--prompt", type=int, default=1)
    ap.add_argument("--variants", default="tensor,bilinear,lstm-mean")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--delta", type=int, default=50)
    ap.add_argument("--slices", type=int, default=4)
    ap.add_argument("--out", default="runs/asap")
    args = ap.parse_args()

    table = {}
    for variant in args.variants.split(","):
        out = Path(args.out) / f"prompt{args.prompt}" / variant
        code = skipflow(
            [
                "cv", "--data", args.data, "--prompt", str(args.prompt), "--variant", variant,
                "--delta", str(args.delta), "--slices", str(args.slices), "--epochs", str(args.epochs), "--out", str(out),
            ]
        )  # fmt: skip
        if code:
            raise SystemExit(code)
        table[variant] = json.loads((out / "cv_report.json").read_text())["mean_test_qwk"]
    print(json.dumps({"prompt": args.prompt, "mean_test_qwk": table}, indent=2))


if __name__ == "__main__":
    main()
