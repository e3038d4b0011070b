"""Item universe and embedding tables.

The catalog owns the dense item indexing shared by every other module: item
``index`` is a position in ``[0, num_items)``, each item belongs to exactly
one of the two domains, and the index order is persisted because embedding
rows are meaningless without it.

Two embedding tables hang off the catalog: a learnable ID table (trained
end-to-end) and a frozen image table loaded from an embedding file produced
offline.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

EMBED_MAGIC = b"IFEV1\n"


class DomainTag(enum.IntEnum):
    X = 0
    Y = 1

    @classmethod
    def parse(cls, text: str) -> "DomainTag":
        try:
            return cls[text]
        except KeyError:
            raise DataError(f"unknown domain tag {text!r} (expected 'X' or 'Y')") from None


@dataclass(frozen=True)
class ItemCatalog:
    """Immutable catalog: external keys, domain tags, dense indices."""

    keys: tuple[str, ...]
    tags: np.ndarray  # int8 array of DomainTag values, len == num_items

    def __post_init__(self):
        if len(self.keys) != len(set(self.keys)):
            raise ValueError("catalog external keys must be unique")
        if len(self.keys) != len(self.tags):
            raise ValueError("keys and tags length mismatch")
        self.tags.setflags(write=False)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def num_items(self) -> int:
        return len(self.keys)

    def count(self, tag: DomainTag) -> int:
        return int(np.sum(self.tags == int(tag)))

    def indices(self, tag: DomainTag) -> np.ndarray:
        """Item indices belonging to one domain, in index order."""
        return np.flatnonzero(self.tags == int(tag))

    def key_to_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.keys)}

    @classmethod
    def from_items(cls, items: list[tuple[str, DomainTag]]) -> "ItemCatalog":
        keys = tuple(k for k, _ in items)
        tags = np.array([int(t) for _, t in items], dtype=np.int8)
        return cls(keys, tags)

    def subset(self, keep: set[str]) -> tuple["ItemCatalog", dict[int, int]]:
        """Compact the catalog to ``keep``, preserving index order.

        Returns the new catalog plus the old-index -> new-index map.
        """
        remap: dict[int, int] = {}
        items: list[tuple[str, DomainTag]] = []
        for old, key in enumerate(self.keys):
            if key in keep:
                remap[old] = len(items)
                items.append((key, DomainTag(int(self.tags[old]))))
        return ItemCatalog.from_items(items), remap

    def save(self, path: str | Path) -> None:
        lines = ["# index\tdomain\tkey"]
        for i, key in enumerate(self.keys):
            lines.append(f"{i}\t{DomainTag(int(self.tags[i])).name}\t{key}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ItemCatalog":
        items: list[tuple[str, DomainTag]] = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            idx, tag, key = parts
            if int(idx) != len(items):
                raise DataError(f"{path}:{lineno}: catalog indices must be dense and ordered")
            items.append((key, DomainTag.parse(tag)))
        return cls.from_items(items)


@dataclass
class EmbeddingTable:
    """Dense per-item vector table; one row per catalog item."""

    values: np.ndarray  # (num_items, dim) float64
    trainable: bool

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("embedding table must be a 2-D matrix")
        if not self.trainable:
            self.values.setflags(write=False)

    @property
    def num_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def init_id_table(num_items: int, dim: int, seed: int) -> EmbeddingTable:
    """Create the learnable ID table, uniform in [-1/sqrt(dim), +1/sqrt(dim)].

    The range keeps initial cosine logits small so the early softmax is
    close to uniform. Same (num_items, dim, seed) gives a bit-identical
    table.
    """
    if num_items < 1:
        raise ValueError(f"num_items must be >= 1, got {num_items}")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    from .rng import substream

    bound = 1.0 / np.sqrt(dim)
    rng = substream(seed, "init/id-table")
    values = rng.uniform(-bound, bound, size=(num_items, dim)).astype(np.float64)
    return EmbeddingTable(values=values, trainable=True)


def lookup(table: EmbeddingTable, ids) -> np.ndarray:
    """Gather rows: row i of the result is table row ids[i]. Returns a copy."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return np.empty((0, table.dim), dtype=np.float64)
    if ids.min() < 0 or ids.max() >= table.num_rows:
        bad = ids[(ids < 0) | (ids >= table.num_rows)][0]
        raise IndexError(f"item id {int(bad)} out of range for table with {table.num_rows} rows")
    return table.values[ids].copy()


def load_image_table(path: str | Path, catalog: ItemCatalog) -> EmbeddingTable:
    """Load the frozen image table for the catalog from an embedding file.

    Accepts the binary format (magic ``IFEV1\\n``) or the whitespace text
    variant, auto-detected. Rows are L2-normalized on load since scoring
    uses cosine similarity only; zero-norm rows for catalog items are
    rejected. Files may carry extra keys (e.g. for items later filtered
    out of the catalog); those rows are ignored.
    """
    path = Path(path)
    records = _read_embedding_records(path)
    by_key: dict[str, np.ndarray] = {}
    dim = None
    for key, vec in records:
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DataError(
                f"{path}: dimension mismatch: key {key!r} has {vec.shape[0]} values, expected {dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: non-finite value in row for key {key!r}")
        by_key[key] = vec
    missing = [k for k in catalog.keys if k not in by_key]
    if missing:
        raise DataError(f"{path}: embedding file is missing catalog key {missing[0]!r} "
                        f"({len(missing)} missing in total)")
    values = np.empty((catalog.num_items, dim), dtype=np.float64)
    for i, key in enumerate(catalog.keys):
        row = by_key[key]
        norm = float(np.linalg.norm(row))
        if norm == 0.0:
            raise DataError(f"{path}: zero-norm embedding for key {key!r}")
        values[i] = row / norm
    return EmbeddingTable(values=values, trainable=False)


def _read_embedding_records(path: Path) -> list[tuple[str, np.ndarray]]:
    raw = path.read_bytes()
    if raw.startswith(EMBED_MAGIC):
        return _read_binary_records(path, raw)
    return _read_text_records(path, raw)


def _read_binary_records(path: Path, raw: bytes) -> list[tuple[str, np.ndarray]]:
    off = len(EMBED_MAGIC)
    if len(raw) < off + 8:
        raise DataError(f"{path}: truncated embedding file header")
    count, dim = struct.unpack_from("<II", raw, off)
    off += 8
    if dim < 1:
        raise DataError(f"{path}: embedding dimension must be >= 1")
    records: list[tuple[str, np.ndarray]] = []
    for r in range(count):
        if len(raw) < off + 2:
            raise DataError(f"{path}: truncated at record {r}")
        (klen,) = struct.unpack_from("<H", raw, off)
        off += 2
        if len(raw) < off + klen + 4 * dim:
            raise DataError(f"{path}: truncated at record {r}")
        key = raw[off:off + klen].decode("utf-8")
        off += klen
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=off).astype(np.float64)
        off += 4 * dim
        records.append((key, vec))
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes after {count} records")
    return records


def _read_text_records(path: Path, raw: bytes) -> list[tuple[str, np.ndarray]]:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not a valid embedding file (bad magic, not UTF-8)") from exc
    records: list[tuple[str, np.ndarray]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected key followed by embedding values")
        try:
            vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric embedding value") from None
        records.append((parts[0], vec))
    if not records:
        raise DataError(f"{path}: no embedding records found")
    return records


def write_embedding_file(path: str | Path, keys: list[str], values: np.ndarray,
                         text: bool = False) -> None:
    """Write an embedding file in the binary (default) or text format.

    Values are written as f32 in the binary variant, matching what the
    offline extraction tool produces.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(keys):
        raise ValueError("values must be (len(keys), dim)")
    path = Path(path)
    if text:
        lines = [f"{key} " + " ".join(f"{v:.8e}" for v in row)
                 for key, row in zip(keys, values)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return
    out = bytearray()
    out += EMBED_MAGIC
    out += struct.pack("<II", len(keys), values.shape[1])
    for key, row in zip(keys, values):
        kb = key.encode("utf-8")
        out += struct.pack("<H", len(kb))
        out += kb
        out += row.astype("<f4").tobytes()
    path.write_bytes(bytes(out))
