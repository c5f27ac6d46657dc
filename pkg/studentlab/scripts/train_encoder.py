#!/usr/bin/env python3
"""Fine-tune a retrieval encoder on exported training pairs.

Example:
    python scripts/train_encoder.py --encoder models/encoder-base \\
        --pairs out/training_pairs.tsv --kb data/kb.tsv --out-dir models/encoder-ft
"""

import argparse
import json

from studentlab.encoder_train import EncoderTrainConfig, train_encoder


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--encoder", required=True, help="local encoder model directory")
    parser.add_argument("--pairs", required=True, help="training-pair TSV from the mining stage")
    parser.add_argument("--kb", required=True, help="knowledge-base TSV (resolves entity names)")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--learning-rate", type=float, default=2e-6)
    parser.add_argument("--epochs", type=int, default=40)
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--max-length", type=int, default=256)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    summary = train_encoder(EncoderTrainConfig(
        encoder_dir=args.encoder, pairs_path=args.pairs, kb_path=args.kb,
        output_dir=args.out_dir, learning_rate=args.learning_rate, epochs=args.epochs,
        batch_size=args.batch_size, max_length=args.max_length, seed=args.seed,
    ))
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
