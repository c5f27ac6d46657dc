"""Export entity / mention embeddings in the pipeline's store format.

Each text is encoded with a local encoder model; the final hidden state of the
leading [CLS] token is the representation. Entity rows encode the entity name
alone; mention rows encode "mention + context". Output is the binary blob
("EMB1" | u32 count | u32 dim | float32 rows, little endian) plus the JSON
manifest with row-order ids and the blob's SHA-256.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from . import records

MAGIC = b"EMB1"

# production budgets: short mention-only encoders vs context-bearing encoders
MENTION_ONLY_MAX_TOKENS = 25
CONTEXT_MAX_TOKENS = 256


def write_store(ids: list[str], vectors: np.ndarray, blob_path, manifest_path) -> None:
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2 or vectors.shape[0] != len(ids):
        raise ValueError(f"need one row per id: {vectors.shape} vs {len(ids)} ids")
    blob = struct.pack("<4sII", MAGIC, len(ids), vectors.shape[1]) + vectors.tobytes(order="C")
    blob_path = Path(blob_path)
    blob_path.write_bytes(blob)
    manifest = {
        "blob": blob_path.name,
        "count": len(ids),
        "dim": int(vectors.shape[1]),
        "ids": list(ids),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
        f.write("\n")


class CLSEncoder:
    def __init__(self, model_dir, device: str = "cpu"):
        self.tokenizer = AutoTokenizer.from_pretrained(str(model_dir))
        self.model = AutoModel.from_pretrained(str(model_dir))
        self.model.to(device)
        self.model.eval()
        self.device = device

    def encode(self, texts: list[str], max_length: int, batch_size: int = 16) -> np.ndarray:
        rows = []
        for start in range(0, len(texts), batch_size):
            batch = self.tokenizer(
                texts[start : start + batch_size],
                return_tensors="pt", padding=True, truncation=True, max_length=max_length,
            ).to(self.device)
            with torch.no_grad():
                hidden = self.model(**batch).last_hidden_state
            rows.append(hidden[:, 0, :].cpu().numpy())  # leading [CLS] position
        return np.concatenate(rows, axis=0).astype(np.float32)


def export_entities(encoder: CLSEncoder, kb_path, blob_path, manifest_path,
                    max_length: int = CONTEXT_MAX_TOKENS, batch_size: int = 16) -> int:
    names = records.load_kb_names(kb_path)
    ids = list(names)
    vectors = encoder.encode([names[i] for i in ids], max_length=max_length, batch_size=batch_size)
    write_store(ids, vectors, blob_path, manifest_path)
    return len(ids)


def export_mentions(encoder: CLSEncoder, mention_path, split, blob_path, manifest_path,
                    max_length: int = CONTEXT_MAX_TOKENS, batch_size: int = 16) -> int:
    rows = records.load_mention_texts(mention_path, split)
    ids = [uid for uid, _, _ in rows]
    texts = [f"{surface} {context}" if context else surface for _, surface, context in rows]
    vectors = encoder.encode(texts, max_length=max_length, batch_size=batch_size)
    write_store(ids, vectors, blob_path, manifest_path)
    return len(ids)
