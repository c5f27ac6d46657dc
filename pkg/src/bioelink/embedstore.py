"""Id-aligned dense vector storage.

On disk a store is a binary blob plus a JSON manifest. Blob layout:

    magic "EMB1" | u32 count | u32 dim | count*dim little-endian float32

The manifest carries the blob filename (relative to the manifest), count, dim,
the ids in row order, and the SHA-256 of the blob. A text import format
(``id<TAB>f1 f2 ...`` per line) exists so tests and small runs can hand-craft
stores.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, UnknownIdError, ValidationError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


class EmbeddingStore:
    def __init__(self, ids: list[str], vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be a 2-d matrix, got shape {vectors.shape}")
        if vectors.shape[0] != len(ids):
            raise ValidationError(f"{len(ids)} ids but {vectors.shape[0]} vector rows")
        if vectors.shape[1] < 1:
            raise ValidationError("vector dimensionality must be >= 1")
        if not np.isfinite(vectors).all():
            bad = int(np.where(~np.isfinite(vectors).all(axis=1))[0][0])
            raise ValidationError(f"non-finite value in row {bad} (id {ids[bad]!r})")
        pos: dict[str, int] = {}
        for i, owner in enumerate(ids):
            if owner in pos:
                raise ValidationError(f"duplicate id {owner!r} at rows {pos[owner]} and {i}")
            pos[owner] = i
        self.ids = list(ids)
        self.vectors = vectors
        self._pos = pos

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, owner_id: str) -> bool:
        return owner_id in self._pos

    def row(self, owner_id: str) -> int:
        try:
            return self._pos[owner_id]
        except KeyError:
            raise UnknownIdError(f"no vector for id {owner_id!r}") from None


def lookup(store: EmbeddingStore, owner_id: str) -> np.ndarray:
    return store.vectors[store.row(owner_id)]


def merge(*stores: EmbeddingStore) -> EmbeddingStore:
    """Union of stores (e.g. entity vectors + mention vectors). Ids must not overlap."""
    if not stores:
        raise ValidationError("merge needs at least one store")
    dims = {s.dim for s in stores}
    if len(dims) != 1:
        raise ValidationError(f"cannot merge stores of different dims {sorted(dims)}")
    ids = [i for s in stores for i in s.ids]
    return EmbeddingStore(ids, np.concatenate([s.vectors for s in stores], axis=0))


def save_store(store: EmbeddingStore, blob_path, manifest_path) -> None:
    blob_path, manifest_path = Path(blob_path), Path(manifest_path)
    payload = store.vectors.astype("<f4", copy=False).tobytes(order="C")
    blob = _HEADER.pack(MAGIC, len(store), store.dim) + payload
    blob_path.write_bytes(blob)
    manifest = {
        "blob": blob_path.name if blob_path.parent == manifest_path.parent else str(blob_path),
        "count": len(store),
        "dim": store.dim,
        "ids": store.ids,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2)
        f.write("\n")


def load_store(manifest_path) -> EmbeddingStore:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    for key in ("blob", "count", "dim", "ids", "sha256"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: manifest missing key {key!r}")
    count, dim = int(manifest["count"]), int(manifest["dim"])
    if dim < 1:
        raise ValidationError(f"{manifest_path}: dim must be >= 1, got {dim}")
    ids = list(manifest["ids"])
    if len(ids) != count:
        raise FormatError(f"{manifest_path}: count={count} but {len(ids)} ids")

    blob_path = Path(manifest["blob"])
    if not blob_path.is_absolute():
        blob_path = manifest_path.parent / blob_path
    blob = blob_path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["sha256"]:
        raise FormatError(f"{blob_path}: checksum mismatch (manifest {manifest['sha256'][:12]}…, blob {digest[:12]}…)")
    if len(blob) < _HEADER.size:
        raise FormatError(f"{blob_path}: truncated header")
    magic, blob_count, blob_dim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{blob_path}: bad magic {magic!r}")
    if (blob_count, blob_dim) != (count, dim):
        raise FormatError(f"{blob_path}: header says count={blob_count} dim={blob_dim}, manifest says count={count} dim={dim}")
    payload = blob[_HEADER.size:]
    expected = count * dim * 4
    if len(payload) != expected:
        raise FormatError(f"{blob_path}: payload is {len(payload)} bytes, expected {expected} (count*dim*4)")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()
    if not np.isfinite(vectors).all():
        bad = int(np.where(~np.isfinite(vectors).all(axis=1))[0][0])
        raise ValidationError(f"{blob_path}: non-finite value in row {bad} (id {ids[bad]!r})")
    return EmbeddingStore(ids, vectors)


def import_text(path) -> EmbeddingStore:
    """Read the test-friendly text format: ``id<TAB>f1 f2 ...`` per line."""
    ids: list[str] = []
    rows: list[list[float]] = []
    dim = None
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise FormatError(f"{path}:{line_no}: expected id<TAB>values, got {len(cols)} columns")
            owner, values = cols
            try:
                vec = [float(v) for v in values.split()]
            except ValueError as exc:
                raise FormatError(f"{path}:{line_no}: bad float: {exc}") from exc
            if not vec:
                raise FormatError(f"{path}:{line_no}: empty vector")
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise FormatError(f"{path}:{line_no}: dim {len(vec)} differs from first row dim {dim}")
            ids.append(owner)
            rows.append(vec)
    if dim is None:
        raise FormatError(f"{path}: no vectors")
    return EmbeddingStore(ids, np.array(rows, dtype=np.float32))


@dataclass
class AlignmentReport:
    missing: list[str] = field(default_factory=list)
    orphans: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        # orphan vectors (e.g. mention rows in a merged store) are non-fatal
        return not self.missing

    def to_dict(self) -> dict:
        return {"missing": self.missing, "orphans": self.orphans, "ok": self.ok}


def validate_alignment(store: EmbeddingStore, kb) -> AlignmentReport:
    """Every KB entity must have a vector; extra vectors are reported as orphans."""
    missing = [ent.id for ent in kb if ent.id not in store]
    orphans = [owner for owner in store.ids if owner not in kb]
    return AlignmentReport(missing=missing, orphans=orphans)
