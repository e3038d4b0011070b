"""Shared fixtures: tiny catalogs, models, and random valid sequences."""

from __future__ import annotations

import numpy as np
import pytest

from fuserec.catalog import DomainTag, EmbeddingTable, ItemCatalog
from fuserec.model import CrossDomainModel
from fuserec.seqdata import UserSequence


def make_catalog(num_x: int = 4, num_y: int = 3) -> ItemCatalog:
    items = [(f"X{i:03d}", DomainTag.X) for i in range(num_x)]
    items += [(f"Y{i:03d}", DomainTag.Y) for i in range(num_y)]
    return ItemCatalog.from_items(items)


def make_img_table(num_items: int, dim: int, seed: int = 0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((num_items, dim))
    values /= np.linalg.norm(values, axis=1, keepdims=True)
    return EmbeddingTable(values=values, trainable=False)


def make_sequence(catalog: ItemCatalog, rng: np.random.Generator, length: int = 6,
                  user: str = "u0") -> UserSequence:
    """Random sequence with at least one item from each domain per 6 steps."""
    doms = np.concatenate([np.array([0, 1, 0, 1, 0, 1]),
                           rng.integers(0, 2, size=max(0, length - 6))])[:length]
    rng.shuffle(doms)
    items = []
    for d in doms:
        pool = catalog.indices(DomainTag.X if d == 0 else DomainTag.Y)
        items.append(int(pool[rng.integers(0, len(pool))]))
    items = np.array(items, dtype=np.int64)
    return UserSequence(user=user, items=items,
                        x_view=np.flatnonzero(doms == 0).astype(np.int64),
                        y_view=np.flatnonzero(doms == 1).astype(np.int64),
                        last_timestamp=int(length))


def make_batch(catalog: ItemCatalog, seed: int, num: int = 2, length: int = 6):
    rng = np.random.default_rng(seed)
    return [make_sequence(catalog, rng, length=length, user=f"u{i}") for i in range(num)]


def tiny_model(seed: int = 3, num_x: int = 4, num_y: int = 3, id_dim: int = 6,
               img_dim: int = 8, max_len: int = 4, **kwargs):
    """The desk-scale gradient-check model: |X|=4, |Y|=3, q=6, e=8, max_len=4."""
    catalog = make_catalog(num_x, num_y)
    img_table = make_img_table(catalog.num_items, img_dim, seed=seed + 100)
    defaults = dict(alpha=0.7, lambda1=0.1, lambda2=0.4, temperature=0.7, dropout=0.0)
    defaults.update(kwargs)
    model = CrossDomainModel.build(catalog, id_dim=id_dim, img_table=img_table,
                                   max_len=max_len, seed=seed, **defaults)
    return catalog, img_table, model


@pytest.fixture
def catalog43() -> ItemCatalog:
    return make_catalog(4, 3)
