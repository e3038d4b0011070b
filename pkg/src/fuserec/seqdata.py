"""Interaction logs, filtering, per-user sequences, dataset splits.

A user's history is kept as one merged chronological sequence plus two
index views (positions of the X items and of the Y items), so the three
sub-sequence encoders all read from a single source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import DomainTag, ItemCatalog
from .errors import DataError
from .rng import substream


@dataclass(frozen=True)
class Interaction:
    user: str
    item: int
    timestamp: int
    domain: DomainTag


@dataclass
class UserSequence:
    """One user's merged history plus per-domain views.

    ``items`` is the merged sequence in chronological order (ties keep
    input order); ``x_view``/``y_view`` are merged positions, disjoint and
    jointly covering the sequence.
    """

    user: str
    items: np.ndarray       # int64 item indices, merged order
    x_view: np.ndarray      # int64 merged positions with domain X
    y_view: np.ndarray      # int64 merged positions with domain Y
    last_timestamp: int

    def __len__(self) -> int:
        return len(self.items)

    def view(self, domain: str) -> np.ndarray:
        """Item ids of one view: 'X', 'Y', or 'XY' (merged)."""
        if domain == "XY":
            return self.items
        if domain == "X":
            return self.items[self.x_view]
        if domain == "Y":
            return self.items[self.y_view]
        raise ValueError(f"unknown view {domain!r}")

    def view_positions(self, domain: str) -> np.ndarray:
        if domain == "XY":
            return np.arange(len(self.items), dtype=np.int64)
        return self.x_view if domain == "X" else self.y_view

    def check(self, min_per_domain: int = 3) -> None:
        both = np.concatenate([self.x_view, self.y_view])
        if len(np.unique(both)) != len(self.items) or len(both) != len(self.items):
            raise ValueError(f"user {self.user}: views must partition the merged sequence")
        if len(self.x_view) < min_per_domain or len(self.y_view) < min_per_domain:
            raise ValueError(f"user {self.user}: fewer than {min_per_domain} items in a domain")


@dataclass
class DatasetSplit:
    train: list[UserSequence]
    valid: list[UserSequence]
    test: list[UserSequence]

    def all_sequences(self) -> list[UserSequence]:
        return self.train + self.valid + self.test


def ingest(path: str | Path, catalog: ItemCatalog) -> list[Interaction]:
    """Parse an interaction log: tab-separated user, item key, timestamp, domain.

    Lines starting with '#' are comments. Unknown item keys and malformed
    lines raise DataError naming the line number.
    """
    path = Path(path)
    key_to_idx = catalog.key_to_index()
    out: list[Interaction] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        user, item_key, ts_text, tag_text = parts
        if item_key not in key_to_idx:
            raise DataError(f"{path}:{lineno}: unknown item key {item_key!r}")
        try:
            ts = int(ts_text)
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad timestamp {ts_text!r}") from None
        tag = DomainTag.parse(tag_text)
        idx = key_to_idx[item_key]
        if DomainTag(int(catalog.tags[idx])) != tag:
            raise DataError(f"{path}:{lineno}: item {item_key!r} tagged {tag.name} "
                            f"but catalog says {DomainTag(int(catalog.tags[idx])).name}")
        out.append(Interaction(user=user, item=idx, timestamp=ts, domain=tag))
    return out


def scan_catalog(path: str | Path) -> ItemCatalog:
    """Build a catalog from a raw interaction log, first-appearance order."""
    path = Path(path)
    seen: dict[str, DomainTag] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        _, item_key, _, tag_text = parts
        tag = DomainTag.parse(tag_text)
        if item_key in seen:
            if seen[item_key] != tag:
                raise DataError(f"{path}:{lineno}: item {item_key!r} appears in both domains")
        else:
            seen[item_key] = tag
    return ItemCatalog.from_items(list(seen.items()))


def _build_sequence(user: str, rows: list[tuple[int, Interaction]]) -> UserSequence:
    # Stable sort on timestamp keeps input order for ties.
    ordered = sorted(rows, key=lambda r: r[1].timestamp)
    items = np.array([r[1].item for r in ordered], dtype=np.int64)
    doms = np.array([int(r[1].domain) for r in ordered], dtype=np.int8)
    return UserSequence(
        user=user,
        items=items,
        x_view=np.flatnonzero(doms == int(DomainTag.X)).astype(np.int64),
        y_view=np.flatnonzero(doms == int(DomainTag.Y)).astype(np.int64),
        last_timestamp=ordered[-1][1].timestamp if ordered else 0,
    )


def filter_protocol(interactions: list[Interaction], min_count: int = 10,
                    min_per_domain: int = 3) -> list[UserSequence]:
    """Apply the dataset filtering protocol and build user sequences.

    Users and items with fewer than ``min_count`` interactions are removed,
    iterating to a fixed point, and users with fewer than
    ``min_per_domain`` items in either domain are dropped. The per-domain
    drop feeds back into the counts so the whole operation is idempotent.
    """
    if min_count < 1 or min_per_domain < 1:
        raise ValueError("min_count and min_per_domain must be >= 1")
    rows = list(enumerate(interactions))
    while True:
        n_before = len(rows)
        item_counts: dict[int, int] = {}
        for _, r in rows:
            item_counts[r.item] = item_counts.get(r.item, 0) + 1
        rows = [(i, r) for i, r in rows if item_counts[r.item] >= min_count]

        user_counts: dict[str, int] = {}
        for _, r in rows:
            user_counts[r.user] = user_counts.get(r.user, 0) + 1
        rows = [(i, r) for i, r in rows if user_counts[r.user] >= min_count]

        per_domain: dict[str, list[int]] = {}
        for _, r in rows:
            per_domain.setdefault(r.user, [0, 0])[int(r.domain)] += 1
        ok_users = {u for u, c in per_domain.items()
                    if c[0] >= min_per_domain and c[1] >= min_per_domain}
        rows = [(i, r) for i, r in rows if r.user in ok_users]
        if len(rows) == n_before:
            break

    by_user: dict[str, list[tuple[int, Interaction]]] = {}
    order: list[str] = []
    for i, r in rows:
        if r.user not in by_user:
            by_user[r.user] = []
            order.append(r.user)
        by_user[r.user].append((i, r))
    sequences = [_build_sequence(u, by_user[u]) for u in order]
    for seq in sequences:
        seq.check(min_per_domain)
    return sequences


def split_train_valid_test(sequences: list[UserSequence], seed: int,
                           holdout_fraction: float = 0.2) -> DatasetSplit:
    """Hold out the latest sequences and divide them equally into valid/test.

    Sequences are ranked by last-interaction timestamp; the latest
    ``holdout_fraction`` of them (rounded half up) are shuffled with the
    seeded generator and assigned alternately to valid and test. The rest
    train, in input order.
    """
    if len(sequences) < 2:
        raise ValueError("need at least 2 sequences to split")
    if not 0.0 <= holdout_fraction <= 1.0:
        raise ValueError("holdout_fraction must be in [0, 1]")
    n_hold = int(np.floor(holdout_fraction * len(sequences) + 0.5))
    ranked = sorted(range(len(sequences)), key=lambda i: (sequences[i].last_timestamp, i))
    hold_idx = ranked[len(sequences) - n_hold:]
    hold_set = set(hold_idx)
    train = [sequences[i] for i in range(len(sequences)) if i not in hold_set]
    rng = substream(seed, "split/holdout")
    hold_idx = list(np.array(hold_idx, dtype=np.int64)[rng.permutation(n_hold)]) if n_hold else []
    valid = [sequences[int(i)] for i in hold_idx[0::2]]
    test = [sequences[int(i)] for i in hold_idx[1::2]]
    return DatasetSplit(train=train, valid=valid, test=test)


def training_targets(seq: UserSequence, domain: str) -> list[tuple[tuple[int, ...], int]]:
    """Next-item prediction pairs for one view.

    For each consecutive pair (anchor, next) within the view, emits the
    merged positions up to and including the anchor plus the target item.
    The per-view encoder then sees only its own items of that prefix.
    """
    positions = seq.view_positions(domain)
    out: list[tuple[tuple[int, ...], int]] = []
    for j in range(len(positions) - 1):
        anchor = int(positions[j])
        target = int(seq.items[positions[j + 1]])
        out.append((tuple(range(anchor + 1)), target))
    return out


def save_sequences(path: str | Path, sequences: list[UserSequence]) -> None:
    lines = ["# user\tlast_ts\titems (comma-separated indices, merged order)"]
    for s in sequences:
        lines.append(f"{s.user}\t{s.last_timestamp}\t" + ",".join(str(int(i)) for i in s.items))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sequences(path: str | Path, catalog: ItemCatalog) -> list[UserSequence]:
    out: list[UserSequence] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        user, last_ts, items_text = parts
        items = np.array([int(v) for v in items_text.split(",")], dtype=np.int64)
        if items.size and (items.min() < 0 or items.max() >= catalog.num_items):
            raise DataError(f"{path}:{lineno}: item index out of catalog range")
        doms = catalog.tags[items]
        out.append(UserSequence(
            user=user,
            items=items,
            x_view=np.flatnonzero(doms == int(DomainTag.X)).astype(np.int64),
            y_view=np.flatnonzero(doms == int(DomainTag.Y)).astype(np.int64),
            last_timestamp=int(last_ts),
        ))
    return out
