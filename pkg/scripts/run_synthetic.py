"""Synthetic coherence comparison: SkipFlow variants against the LSTM baselines.

Trains every requested variant on one 60/20/20 split of the synthetic corpus
for several seeds and prints a JSON summary (per-seed test QWK and medians).

    python scripts/run_synthetic.py --variants tensor,lstm-mean --seeds 0,1,2
"""

import argparse
import json
import statistics
import time

from skipflow.model import VARIANTS, ModelConfig
from skipflow.text import EncodedSet, build_vocab, split_folds, synth_coherence_dataset, tokenize, tokenize_essays
from skipflow.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", default="tensor,lstm-mean")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--length", type=int, default=80)
    ap.add_argument("--delta", type=int, default=10)
    ap.add_argument("--hidden-dim", type=int, default=32)
    ap.add_argument("--slices", type=int, default=4)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--no-decoys", action="store_true", help="plant only the scoring pairs")
    ap.add_argument("--out", help="also write the summary here")
    args = ap.parse_args()

    essays, scale = synth_coherence_dataset(args.n, args.length, args.delta, seed=args.data_seed, decoys=not args.no_decoys)
    fold = split_folds([e.id for e in essays], args.data_seed).folds[0]
    by_id = {e.id: e for e in essays}
    vocab = build_vocab([tokenize(by_id[i].text) for i in fold.train])
    sets = {
        name: EncodedSet.stack(tokenize_essays([by_id[i] for i in getattr(fold, name)], vocab, args.length), essays[0].prompt_id)
        for name in ("train", "dev", "test")
    }

    summary = {"settings": vars(args), "runs": [], "median_test_qwk": {}}
    for variant in args.variants.split(","):
        if variant not in VARIANTS:
            ap.error(f"unknown variant {variant}")
        cfg = ModelConfig(
            vocab_size=len(vocab), max_len=args.length, hidden_dim=args.hidden_dim, delta=args.delta, slices=args.slices, variant=variant
        )
        scores = []
        for seed in map(int, args.seeds.split(",")):
            t0 = time.perf_counter()
            rep, _ = train(cfg, sets["train"], sets["dev"], sets["test"], TrainConfig(epochs=args.epochs, seed=seed), scale)
            scores.append(rep.test_qwk)
            run = {"variant": variant, "seed": seed, "best_epoch": rep.best_epoch, "best_dev_qwk": rep.best_dev_qwk, "test_qwk": rep.test_qwk}
            print(json.dumps({**run, "seconds": round(time.perf_counter() - t0, 1)}), flush=True)
            summary["runs"].append(run)
        summary["median_test_qwk"][variant] = statistics.median(scores)

    text = json.dumps(summary, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
