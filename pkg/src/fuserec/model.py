"""The cross-domain model: embedding tables, six encoders, scoring heads.

Three sub-sequence views (X, Y, merged) times two modalities (learnable ID
embeddings, frozen image embeddings) give six independent attention
encoders. Each view's head scores the encoder's final state against its
domain's candidate items by cosine similarity, softmaxes, and fuses the two
modality distributions with the alpha weight.

Training gradients are computed analytically in one batched pass per head;
``head_losses_and_grads`` returns SUM-reduced losses and gradients (the
training loop rescales to per-sequence means). The frozen image table never
receives a gradient.

Ablation variants are expressed by construction: ``views=("XY",)`` builds
the single-merged-encoder baseline and ``use_image=False`` drops the image
heads entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention, scoring
from .attention import AttentionParams, forward_batch, backward_batch
from .catalog import DomainTag, EmbeddingTable, ItemCatalog
from .errors import NumericalError
from .rng import substream
from .scoring import CandidateSet, ProbDist, candidate_set

VIEWS = ("X", "Y", "XY")
PROB_CLAMP = 1e-12


@dataclass
class HeadLosses:
    """SUM-reduced negative log-likelihood per view head, plus bookkeeping.

    ``by_view`` holds the raw per-head losses; ``weights`` the head weights
    the model actually optimizes (1/lambda1/lambda2 for the three-head
    model, 1 for a single-encoder variant). Gradients returned alongside
    this report differentiate ``objective()``.
    """

    by_view: dict[str, float]
    weights: dict[str, float]
    num_sequences: int
    num_cases: dict[str, int]
    clamp_events: int = 0

    def objective(self) -> float:
        return sum(self.weights[v] * self.by_view.get(v, 0.0) for v in self.weights)


class CrossDomainModel:
    """Holds all trainable state and implements the end-to-end math."""

    def __init__(self, catalog: ItemCatalog, id_table: EmbeddingTable,
                 img_table: EmbeddingTable | None, max_len: int,
                 alpha: float = 0.7, lambda1: float = 0.1, lambda2: float = 0.4,
                 temperature: float = 1.0, dropout: float = 0.3,
                 views: tuple[str, ...] = VIEWS, use_image: bool = True,
                 learn_scale: bool = False):
        if use_image and img_table is None:
            raise ValueError("use_image requires an image table")
        if img_table is not None and img_table.num_rows != catalog.num_items:
            raise ValueError("image table row count does not match catalog")
        if id_table.num_rows != catalog.num_items:
            raise ValueError("id table row count does not match catalog")
        for v in views:
            if v not in VIEWS:
                raise ValueError(f"unknown view {v!r}")
        self.catalog = catalog
        self.id_table = id_table
        self.img_table = img_table
        self.e_id = id_table.values
        self.e_img = img_table.values if img_table is not None else None
        self.max_len = int(max_len)
        self.alpha = float(alpha)
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.temperature = float(temperature)
        self.dropout = float(dropout)
        self.views = tuple(views)
        self.use_image = bool(use_image)
        self.learn_scale = bool(learn_scale)
        self.modalities = ("id", "img") if use_image else ("id",)
        self.encoders: dict[tuple[str, str], AttentionParams] = {}
        self.log_scales: dict[tuple[str, str], np.ndarray] = {}
        self.candidates: dict[str, CandidateSet] = {v: candidate_set(catalog, v)
                                                    for v in self.views}
        # global index -> position within the view's candidate array
        self._local: dict[str, np.ndarray] = {}
        for v in self.views:
            loc = np.full(catalog.num_items, -1, dtype=np.int64)
            loc[self.candidates[v].ids] = np.arange(len(self.candidates[v]))
            self._local[v] = loc

    @classmethod
    def build(cls, catalog: ItemCatalog, id_dim: int, img_table: EmbeddingTable | None,
              max_len: int, seed: int, **kwargs) -> "CrossDomainModel":
        """Initialize a fresh model; all randomness comes from named substreams of seed."""
        from .catalog import init_id_table

        id_table = init_id_table(catalog.num_items, id_dim, seed)
        m = cls(catalog, id_table, img_table, max_len, **kwargs)
        for view in m.views:
            for mod in m.modalities:
                dim = m.e_id.shape[1] if mod == "id" else m.e_img.shape[1]
                m.encoders[(view, mod)] = attention.init_attention_params(
                    dim, max_len, seed, name=f"enc/{view}/{mod}")
                if m.learn_scale:
                    m.log_scales[(view, mod)] = np.zeros(())
        return m

    def table(self, mod: str) -> np.ndarray:
        return self.e_id if mod == "id" else self.e_img

    def trainable_tensors(self) -> dict[str, np.ndarray]:
        """Name-keyed registry of every trainable array, in a fixed order."""
        out: dict[str, np.ndarray] = {"e_id": self.e_id}
        for view in self.views:
            for mod in self.modalities:
                for tname, t in self.encoders[(view, mod)].tensors().items():
                    out[f"enc/{view}/{mod}/{tname}"] = t
        for (view, mod), s in self.log_scales.items():
            out[f"scale/{view}/{mod}"] = s
        return out

    @property
    def head_weights(self) -> dict[str, float]:
        """Loss weight per view head; the merged-only variant optimizes plain L^XY."""
        if len(self.views) == 1:
            return {self.views[0]: 1.0}
        return {"X": 1.0, "Y": self.lambda1, "XY": self.lambda2}

    def _logit_gain(self, view: str, mod: str) -> float:
        gain = 1.0 / self.temperature
        if self.learn_scale:
            gain *= float(np.exp(self.log_scales[(view, mod)]))
        return gain

    # ----- training path ---------------------------------------------------

    def _view_batch(self, sequences, view: str):
        """Pad one view across the batch; window keeps the most recent max_len items."""
        windows = []
        for seq in sequences:
            v = seq.view(view)
            windows.append(v[-self.max_len:] if len(v) > self.max_len else v)
        L = max((len(w) for w in windows), default=0)
        B = len(sequences)
        ids = np.zeros((B, L), dtype=np.int64)
        valid = np.zeros((B, L), dtype=bool)
        for b, w in enumerate(windows):
            ids[b, :len(w)] = w
            valid[b, :len(w)] = True
        return ids, valid, windows

    def _cases(self, windows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(batch row, anchor position, target item) for every in-window pair."""
        bs, ts, targets = [], [], []
        for b, w in enumerate(windows):
            for j in range(len(w) - 1):
                bs.append(b)
                ts.append(j)
                targets.append(int(w[j + 1]))
        return (np.array(bs, dtype=np.int64), np.array(ts, dtype=np.int64),
                np.array(targets, dtype=np.int64))

    def head_losses_and_grads(self, sequences, training: bool = False,
                              dropout_rng: np.random.Generator | None = None,
                              compute_grads: bool = True,
                              ) -> tuple[HeadLosses, dict[str, np.ndarray]]:
        """One pass over a batch: per-head SUM losses and gradients.

        With ``training`` set, attention dropout masks are drawn from
        ``dropout_rng``. Gradients cover every trainable tensor; the frozen
        image table gets none by construction.
        """
        grads = {name: np.zeros_like(t) for name, t in self.trainable_tensors().items()} \
            if compute_grads else {}
        report = HeadLosses(by_view={v: 0.0 for v in self.views},
                            weights=self.head_weights,
                            num_sequences=len(sequences),
                            num_cases={v: 0 for v in self.views})
        if not sequences:
            return report, grads

        for view in self.views:
            ids, valid, windows = self._view_batch(sequences, view)
            if ids.shape[1] == 0:
                continue
            b_arr, t_arr, targets = self._cases(windows)
            if len(b_arr) == 0:
                continue
            report.num_cases[view] = len(b_arr)
            cand = self.candidates[view]
            tloc = self._local[view][targets]
            if np.any(tloc < 0):
                raise ValueError(f"target outside candidate set of view {view}")

            per_mod: dict[str, dict] = {}
            for mod in self.modalities:
                table = self.table(mod)
                F = table[ids]
                mask = None
                if training and self.dropout > 0.0:
                    if dropout_rng is None:
                        raise ValueError("training mode needs a dropout rng")
                    mask = dropout_rng.random((F.shape[0], F.shape[1], F.shape[1])) \
                        >= self.dropout
                H, _ = forward_batch(self.encoders[(view, mod)], F, mask, self.dropout)
                states = H[b_arr, t_arr]
                hn = np.linalg.norm(states, axis=1)
                if np.any(hn == 0.0):
                    raise NumericalError(f"zero-norm encoder state in head {view}/{mod}")
                rows = table[cand.ids]
                en = np.linalg.norm(rows, axis=1)
                U = states / hn[:, None]
                W = rows / en[:, None]
                cos = U @ W.T
                gain = self._logit_gain(view, mod)
                z = cos * gain
                z_shift = z - z.max(axis=1, keepdims=True)
                e = np.exp(z_shift)
                p = e / e.sum(axis=1, keepdims=True)
                per_mod[mod] = dict(F=F, mask=mask, states=states, hn=hn, en=en,
                                    U=U, W=W, cos=cos, z=z, p=p, gain=gain, ids=ids,
                                    valid=valid)

            if self.use_image:
                p_fused = self.alpha * per_mod["id"]["p"] + (1.0 - self.alpha) * per_mod["img"]["p"]
            else:
                p_fused = per_mod["id"]["p"]
            m_idx = np.arange(len(b_arr))
            pt = p_fused[m_idx, tloc]
            clamped = pt < PROB_CLAMP
            report.clamp_events += int(clamped.sum())
            report.by_view[view] = float(-np.log(np.maximum(pt, PROB_CLAMP)).sum())

            if not compute_grads:
                continue
            # upstream on the fused target probability, scaled by the head's
            # loss weight; clamped cases get none
            g = np.where(clamped, 0.0, -1.0 / np.maximum(pt, PROB_CLAMP))
            g = g * self.head_weights[view]
            for mod in self.modalities:
                w_mod = (self.alpha if mod == "id" else 1.0 - self.alpha) \
                    if self.use_image else 1.0
                ctx = per_mod[mod]
                c = g * w_mod
                p = ctx["p"]
                pt_mod = p[m_idx, tloc]
                coef = c * pt_mod
                dz = -coef[:, None] * p
                dz[m_idx, tloc] += coef
                if self.learn_scale:
                    grads[f"scale/{view}/{mod}"] += (dz * ctx["z"]).sum()
                dcos = dz * ctx["gain"]
                rowdot = (dcos * ctx["cos"]).sum(axis=1)
                dstates = (dcos @ ctx["W"] - ctx["U"] * rowdot[:, None]) / ctx["hn"][:, None]
                if mod == "id":
                    coldot = (dcos * ctx["cos"]).sum(axis=0)
                    d_rows = (dcos.T @ ctx["U"] - ctx["W"] * coldot[:, None]) / ctx["en"][:, None]
                    grads["e_id"][cand.ids] += d_rows
                dH = np.zeros_like(ctx["F"])
                np.add.at(dH, (b_arr, t_arr), dstates)
                enc_grads, dF = backward_batch(self.encoders[(view, mod)], ctx["F"], dH,
                                               ctx["mask"], self.dropout)
                for tname, tg in enc_grads.tensors().items():
                    grads[f"enc/{view}/{mod}/{tname}"] += tg
                if mod == "id":
                    np.add.at(grads["e_id"], ctx["ids"][ctx["valid"]], dF[ctx["valid"]])
        return report, grads

    # ----- evaluation path --------------------------------------------------

    def view_distribution(self, prefix_items: np.ndarray, view: str) -> ProbDist | None:
        """Fused next-item distribution of one head, evaluation mode.

        Returns None when the view's restriction of the prefix is empty
        (possible for the auxiliary domain at evaluation); the head then
        contributes nothing to the combined scores.
        """
        prefix_items = np.asarray(prefix_items, dtype=np.int64)
        if view == "XY":
            v = prefix_items
        else:
            tags = self.catalog.tags[prefix_items]
            v = prefix_items[tags == int(DomainTag[view])]
        if len(v) == 0:
            return None
        v = v[-self.max_len:]
        cand = self.candidates[view]
        dists: dict[str, ProbDist] = {}
        for mod in self.modalities:
            table = self.id_table if mod == "id" else self.img_table
            enc = attention.attend(self.encoders[(view, mod)], table.values[v])
            h = attention.last_state(enc)
            sims = scoring.cosine_scores(h, table, cand)
            gain = self._logit_gain(view, mod)
            dists[mod] = scoring.softmax_probs(sims, temperature=1.0 / gain)
        if self.use_image:
            return scoring.fuse_modalities(dists["id"], dists["img"], self.alpha)
        return dists["id"]

    def score_prefix(self, prefix_items: np.ndarray,
                     lambda1: float | None = None,
                     lambda2: float | None = None) -> np.ndarray:
        """Combined next-item scores over the full catalog for one prefix."""
        l1 = self.lambda1 if lambda1 is None else lambda1
        l2 = self.lambda2 if lambda2 is None else lambda2
        if self.views == ("XY",):
            p_xy = self.view_distribution(prefix_items, "XY")
            if p_xy is None:
                raise ValueError("empty prefix")
            return p_xy.probs.copy()
        zero = {v: ProbDist(probs=np.zeros(len(self.candidates[v])),
                            candidates=self.candidates[v]) for v in VIEWS}
        dists = {v: self.view_distribution(prefix_items, v) or zero[v] for v in VIEWS}
        return scoring.combine_domains(dists["X"], dists["Y"], dists["XY"],
                                       l1, l2, self.catalog.num_items)

    # ----- snapshot helpers ---------------------------------------------------

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.copy() for name, t in self.trainable_tensors().items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, t in self.trainable_tensors().items():
            t[...] = snap[name]
