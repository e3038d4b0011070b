"""Checkpoint files: version-tagged, name-keyed f64 tensors.

Layout (all little-endian):

    magic   6 bytes  b"IFCK1\\n"
    count   u32      number of tensors
    repeat count times:
        name_len  u16
        name      UTF-8 bytes
        ndim      u8
        dims      ndim x u32
        data      prod(dims) x f64, C order

Model metadata (dims, fusion weights, variant toggles) rides along as 0-d
tensors under ``meta/`` names. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .catalog import EmbeddingTable, ItemCatalog
from .errors import DataError
from .model import VIEWS, CrossDomainModel

CKPT_MAGIC = b"IFCK1\n"


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    out = bytearray()
    out += CKPT_MAGIC
    out += struct.pack("<I", len(tensors))
    for name, t in tensors.items():
        nb = name.encode("utf-8")
        arr = np.asarray(t, dtype="<f8")  # n.b. ascontiguousarray would promote 0-d to 1-d
        out += struct.pack("<H", len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        for d in arr.shape:
            out += struct.pack("<I", d)
        out += arr.tobytes()
    Path(path).write_bytes(bytes(out))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CKPT_MAGIC):
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    off = len(CKPT_MAGIC)
    if len(raw) < off + 4:
        raise DataError(f"{path}: truncated checkpoint header")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        try:
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", raw, off)
            off += 1
            dims = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
            off += 4 * ndim
            size = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(dims)
            off += 8 * size
        except (struct.error, ValueError) as exc:
            raise DataError(f"{path}: truncated checkpoint at tensor {i}") from exc
        tensors[name] = arr.astype(np.float64).copy()
    if off != len(raw):
        raise DataError(f"{path}: {len(raw) - off} trailing bytes")
    return tensors


def _meta(model: CrossDomainModel) -> dict[str, np.ndarray]:
    from .catalog import DomainTag

    s = lambda v: np.asarray(float(v))
    return {
        "meta/format": s(1),
        "meta/num_items": s(model.catalog.num_items),
        "meta/num_x": s(model.catalog.count(DomainTag.X)),
        "meta/num_y": s(model.catalog.count(DomainTag.Y)),
        "meta/id_dim": s(model.e_id.shape[1]),
        "meta/img_dim": s(model.e_img.shape[1] if model.e_img is not None else 0),
        "meta/max_len": s(model.max_len),
        "meta/alpha": s(model.alpha),
        "meta/lambda1": s(model.lambda1),
        "meta/lambda2": s(model.lambda2),
        "meta/temperature": s(model.temperature),
        "meta/dropout": s(model.dropout),
        "meta/use_image": s(1 if model.use_image else 0),
        "meta/multi_view": s(1 if model.views == VIEWS else 0),
        "meta/learn_scale": s(1 if model.learn_scale else 0),
    }


def save_checkpoint(path: str | Path, model: CrossDomainModel,
                    state: dict[str, np.ndarray] | None = None) -> None:
    """Write the model (or an explicit parameter snapshot) plus metadata."""
    tensors = dict(_meta(model))
    tensors.update(state if state is not None else model.trainable_tensors())
    save_tensors(path, tensors)


def load_checkpoint(path: str | Path, catalog: ItemCatalog,
                    img_table: EmbeddingTable | None) -> CrossDomainModel:
    """Rebuild a model from a checkpoint; validates against the catalog."""
    tensors = load_tensors(path)
    try:
        meta = {k.split("/", 1)[1]: float(v) for k, v in tensors.items()
                if k.startswith("meta/")}
        e_id = tensors["e_id"]
    except KeyError as exc:
        raise DataError(f"{path}: missing checkpoint entry {exc}") from None
    if int(meta["num_items"]) != catalog.num_items:
        raise DataError(
            f"{path}: checkpoint/catalog mismatch: checkpoint has "
            f"{int(meta['num_items'])} items, catalog has {catalog.num_items}")
    use_image = bool(int(meta["use_image"]))
    if use_image:
        if img_table is None:
            raise DataError(f"{path}: checkpoint uses image fusion but no image table given")
        if img_table.dim != int(meta["img_dim"]):
            raise DataError(f"{path}: image table dim {img_table.dim} does not match "
                            f"checkpoint dim {int(meta['img_dim'])}")
    views = VIEWS if int(meta["multi_view"]) else ("XY",)
    model = CrossDomainModel(
        catalog, EmbeddingTable(values=e_id.copy(), trainable=True), img_table,
        max_len=int(meta["max_len"]), alpha=meta["alpha"],
        lambda1=meta["lambda1"], lambda2=meta["lambda2"],
        temperature=meta["temperature"], dropout=meta["dropout"],
        views=views, use_image=use_image,
        learn_scale=bool(int(meta["learn_scale"])))
    from .attention import AttentionParams

    for view in model.views:
        for mod in model.modalities:
            prefix = f"enc/{view}/{mod}/"
            try:
                model.encoders[(view, mod)] = AttentionParams(
                    wq=tensors[prefix + "wq"].copy(), wk=tensors[prefix + "wk"].copy(),
                    wv=tensors[prefix + "wv"].copy(), wo=tensors[prefix + "wo"].copy(),
                    pos=tensors[prefix + "pos"].copy())
            except KeyError as exc:
                raise DataError(f"{path}: missing checkpoint entry {exc}") from None
            if model.learn_scale:
                model.log_scales[(view, mod)] = tensors[f"scale/{view}/{mod}"].copy()
    return model
