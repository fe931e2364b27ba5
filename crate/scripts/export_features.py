#!/usr/bin/env python3
"""Export frozen transformer features for the pretrained adapter encoder.

Reads the cleaned pools written by `sentimtl preprocess` and writes

    <cache>/<asset_ref>/adapter.json
    <cache>/<asset_ref>/features.<pooling>.tsv

where every feature line is `sha256(text)<TAB>v1 v2 ... vD`.

Example:

    python scripts/export_features.py out/public/prepared \
        --model EMBEDDIA/crosloengual-bert \
        --cache "$SENTIMTL_ASSET_CACHE" --asset-ref crosloengual-bert
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import torch
from transformers import AutoModel, AutoTokenizer


def read_texts(prepared: Path):
    csv.field_size_limit(sys.maxsize)
    seen = set()
    for pool in sorted(prepared.glob("*-*.tsv")):
        with pool.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh, delimiter="\t"):
                text = row["text"]
                if text not in seen:
                    seen.add(text)
                    yield text


def pool(hidden, mask, how):
    if how == "first_token":
        return hidden[:, 0, :]
    mask = mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * mask).sum(1) / mask.sum(1).clamp(min=1.0)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("prepared", type=Path, help="directory holding the cleaned <pool>.tsv files")
    ap.add_argument("--model", required=True, help="Hugging Face model name or local path")
    ap.add_argument("--cache", type=Path, required=True)
    ap.add_argument("--asset-ref", required=True)
    ap.add_argument("--pooling", choices=["first_token", "mean"], default="first_token")
    ap.add_argument("--max-tokens", type=int, default=512)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    args = ap.parse_args()

    tok = AutoTokenizer.from_pretrained(args.model)
    model = AutoModel.from_pretrained(args.model).to(args.device).eval()
    out_dir = args.cache / args.asset_ref
    out_dir.mkdir(parents=True, exist_ok=True)

    texts = list(read_texts(args.prepared))
    print(f"{len(texts)} distinct texts", file=sys.stderr)
    with (out_dir / f"features.{args.pooling}.tsv").open("w", encoding="utf-8") as out:
        for start in range(0, len(texts), args.batch_size):
            batch = texts[start : start + args.batch_size]
            enc = tok(batch, truncation=True, max_length=args.max_tokens, padding=True, return_tensors="pt")
            enc = {k: v.to(args.device) for k, v in enc.items()}
            with torch.no_grad():
                hidden = model(**enc).last_hidden_state
            vectors = pool(hidden, enc["attention_mask"], args.pooling).cpu().tolist()
            for text, vec in zip(batch, vectors):
                key = hashlib.sha256(text.encode("utf-8")).hexdigest()
                out.write(key + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")

    meta = {
        "hidden_dim": model.config.hidden_size,
        "max_tokens": args.max_tokens,
        "model": args.model,
        "pooling": args.pooling,
    }
    (out_dir / "adapter.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
