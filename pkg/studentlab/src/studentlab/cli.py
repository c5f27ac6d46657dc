"""studentlab entry point: train adapters, serve the student, export embeddings."""

from __future__ import annotations

import argparse
import json
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="studentlab",
                                     description="Fine-tune, serve, and export the student side of the linking pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="LoRA fine-tune a local base model on a generated dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--base-model", required=True, help="local base model directory")
    p.add_argument("--dataset", required=True, help="instruction dataset JSONL")
    p.add_argument("--out-dir", required=True, help="adapter output directory")
    p.add_argument("--preset", choices=["bentsao-style", "llama2-style"], default=None,
                   help="learning-rate/epoch preset")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lora-rank", type=int, default=8)
    p.add_argument("--lora-alpha", type=float, default=16.0)
    p.add_argument("--lora-dropout", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve", help="serve base(+adapter) behind the chat-completion endpoint",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--base-model", required=True)
    p.add_argument("--adapter", default=None, help="adapter directory (omit to serve the bare base)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8040)
    p.add_argument("--served-model", default="student", help="model name echoed in responses")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-embeddings", help="encode a KB or mention file into a vector store",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--encoder", required=True, help="local encoder model directory")
    p.add_argument("--kb", default=None, help="knowledge-base TSV (entity rows)")
    p.add_argument("--mentions", default=None, help="mention TSV (mention rows)")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", required=True, help="basename for NAME.emb / NAME.manifest.json")
    p.add_argument("--max-length", type=int, default=None,
                   help="token budget (default: 256; 25 for mention-only encoders)")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_export)

    return parser


def cmd_train(args) -> int:
    from .train import PRESETS, TrainerConfig, train

    kwargs = dict(base_model=args.base_model, dataset_path=args.dataset, output_dir=args.out_dir,
                  batch_size=args.batch_size, lora_rank=args.lora_rank, lora_alpha=args.lora_alpha,
                  lora_dropout=args.lora_dropout, seed=args.seed)
    if args.preset:
        kwargs.update(PRESETS[args.preset])
    if args.learning_rate is not None:
        kwargs["learning_rate"] = args.learning_rate
    if args.epochs is not None:
        kwargs["epochs"] = args.epochs
    summary = train(TrainerConfig(**kwargs))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .serve import run_server

    run_server(args.base_model, args.adapter, host=args.host, port=args.port,
               served_model=args.served_model)
    return 0


def cmd_export(args) -> int:
    from pathlib import Path

    from .exporter import CONTEXT_MAX_TOKENS, CLSEncoder, export_entities, export_mentions

    if bool(args.kb) == bool(args.mentions):
        print("error: pass exactly one of --kb / --mentions", file=sys.stderr)
        return 2
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    blob = out_dir / f"{args.name}.emb"
    manifest = out_dir / f"{args.name}.manifest.json"
    encoder = CLSEncoder(args.encoder)
    max_length = args.max_length or CONTEXT_MAX_TOKENS
    if args.kb:
        count = export_entities(encoder, args.kb, blob, manifest, max_length=max_length,
                                batch_size=args.batch_size)
    else:
        count = export_mentions(encoder, args.mentions, args.split, blob, manifest,
                                max_length=max_length, batch_size=args.batch_size)
    print(f"wrote {manifest} ({count} vectors)")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
