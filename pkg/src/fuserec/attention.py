"""Causal self-attention sequence encoder.

One encoder instance per (sub-sequence view, modality) pair; the full model
holds six of them with no shared parameters. The encoder is deliberately
minimal: learned positional embeddings added to the input, single-head
scaled dot-product attention with a causal mask, an output projection, and
a residual connection back to the (input + position) rows. Dropout is
applied to the attention weights only, inverted, and only in training mode.

The backward pass is written analytically; ``attend_backward`` recomputes
the forward internals, so callers only need to replay the same dropout
mask. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import substream


@dataclass
class AttentionParams:
    """Trainable tensors of one encoder."""

    wq: np.ndarray   # (dim, dim)
    wk: np.ndarray   # (dim, dim)
    wv: np.ndarray   # (dim, dim)
    wo: np.ndarray   # (dim, dim)
    pos: np.ndarray  # (max_len, dim) learned positional table

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def max_len(self) -> int:
        return self.pos.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo, "pos": self.pos}


@dataclass
class AttentionGrads:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    pos: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo, "pos": self.pos}


@dataclass
class EncodedSequence:
    """Encoder output for one sequence: H is (L, dim), row t sees inputs <= t."""

    H: np.ndarray
    L: int
    dropout_mask: np.ndarray | None = None  # (L, L) keep-mask used in training mode


def init_attention_params(dim: int, max_len: int, seed: int, name: str = "enc") -> AttentionParams:
    """Glorot-style uniform init for projections, small normal for positions."""
    if dim < 1 or max_len < 1:
        raise ValueError("dim and max_len must be >= 1")
    rng = substream(seed, f"init/{name}")
    bound = np.sqrt(6.0 / (dim + dim))
    mk = lambda: rng.uniform(-bound, bound, size=(dim, dim)).astype(np.float64)
    pos = (0.01 * rng.standard_normal(size=(max_len, dim))).astype(np.float64)
    return AttentionParams(wq=mk(), wk=mk(), wv=mk(), wo=mk(), pos=pos)


def zero_grads(params: AttentionParams) -> AttentionGrads:
    return AttentionGrads(*(np.zeros_like(t) for t in
                            (params.wq, params.wk, params.wv, params.wo, params.pos)))


def _causal_softmax(scores: np.ndarray) -> np.ndarray:
    """Row softmax of (..., L, L) scores with positions > t masked out."""
    L = scores.shape[-1]
    mask = np.triu(np.ones((L, L), dtype=bool), k=1)
    s = np.where(mask, -np.inf, scores)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    e = np.where(mask, 0.0, e)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: AttentionParams, F: np.ndarray,
                  dropout_mask: np.ndarray | None = None,
                  dropout_rate: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward: F is (B, L, dim); returns (H, attention weights).

    ``dropout_mask`` is a boolean keep-mask of shape (B, L, L); when given,
    attention weights are scaled by mask/(1-rate) (inverted dropout).
    """
    B, L, d = F.shape
    if L < 1:
        raise ValueError("sequence length must be >= 1")
    if L > params.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {params.max_len}")
    if d != params.dim:
        raise ValueError(f"input dim {d} does not match encoder dim {params.dim}")
    G = F + params.pos[:L]
    Q = G @ params.wq
    K = G @ params.wk
    V = G @ params.wv
    S = (Q @ K.transpose(0, 2, 1)) / np.sqrt(d)
    A = _causal_softmax(S)
    A_used = A if dropout_mask is None else A * dropout_mask / (1.0 - dropout_rate)
    H = (A_used @ V) @ params.wo + G
    return H, A


def backward_batch(params: AttentionParams, F: np.ndarray, d_H: np.ndarray,
                   dropout_mask: np.ndarray | None = None,
                   dropout_rate: float = 0.0) -> tuple[AttentionGrads, np.ndarray]:
    """Batched backward: recomputes the forward, returns (param grads, dF).

    Gradients are exact vector-Jacobian products of ``forward_batch`` with
    the same dropout mask; rows of d_H that are zero contribute nothing, so
    padded batch rows are handled by zeroing their upstream gradient.
    """
    B, L, d = F.shape
    if d_H.shape != F.shape:
        raise ValueError(f"upstream gradient shape {d_H.shape} does not match input {F.shape}")
    scale = 1.0 / np.sqrt(d)
    G = F + params.pos[:L]
    Q = G @ params.wq
    K = G @ params.wk
    V = G @ params.wv
    S = (Q @ K.transpose(0, 2, 1)) * scale
    A = _causal_softmax(S)
    if dropout_mask is None:
        A_used = A
    else:
        A_used = A * dropout_mask / (1.0 - dropout_rate)
    C = A_used @ V

    dC = d_H @ params.wo.T
    d_wo = np.einsum("bld,ble->de", C, d_H)
    dG = d_H.copy()  # residual branch

    dA_used = dC @ V.transpose(0, 2, 1)
    dV = A_used.transpose(0, 2, 1) @ dC
    if dropout_mask is None:
        dA = dA_used
    else:
        dA = dA_used * dropout_mask / (1.0 - dropout_rate)
    # softmax rows: dS = A * (dA - sum(dA * A)); masked entries have A == 0
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
    dQ = (dS @ K) * scale
    dK = (dS.transpose(0, 2, 1) @ Q) * scale

    dG += dQ @ params.wq.T + dK @ params.wk.T + dV @ params.wv.T
    grads = AttentionGrads(
        wq=np.einsum("bld,ble->de", G, dQ),
        wk=np.einsum("bld,ble->de", G, dK),
        wv=np.einsum("bld,ble->de", G, dV),
        wo=d_wo,
        pos=np.zeros_like(params.pos),
    )
    grads.pos[:L] = dG.sum(axis=0)
    return grads, dG


def attend(params: AttentionParams, F: np.ndarray, training: bool = False,
           dropout_rate: float = 0.0,
           rng: np.random.Generator | None = None,
           dropout_mask: np.ndarray | None = None) -> EncodedSequence:
    """Encode one sequence-embedding matrix F of shape (L, dim).

    In training mode a dropout keep-mask is drawn from ``rng`` (or taken
    from ``dropout_mask``) and recorded on the result so the backward pass
    can replay it.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2:
        raise ValueError("F must be (L, dim)")
    L = F.shape[0]
    if L < 1:
        raise ValueError("sequence length must be >= 1")
    mask = None
    if training and dropout_rate > 0.0:
        if dropout_mask is not None:
            mask = dropout_mask
        else:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng or an explicit mask")
            mask = rng.random((L, L)) >= dropout_rate
    H, _ = forward_batch(params, F[None, :, :], None if mask is None else mask[None, :, :],
                         dropout_rate)
    return EncodedSequence(H=H[0], L=L, dropout_mask=mask)


def attend_backward(params: AttentionParams, F: np.ndarray, d_H: np.ndarray,
                    dropout_mask: np.ndarray | None = None,
                    dropout_rate: float = 0.0) -> tuple[AttentionGrads, np.ndarray]:
    """Backward for a single sequence; pass the forward call's dropout mask."""
    F = np.asarray(F, dtype=np.float64)
    d_H = np.asarray(d_H, dtype=np.float64)
    if F.ndim != 2 or d_H.shape != F.shape:
        raise ValueError(f"upstream gradient shape {d_H.shape} does not match input {F.shape}")
    grads, dF = backward_batch(params, F[None, :, :], d_H[None, :, :],
                               None if dropout_mask is None else dropout_mask[None, :, :],
                               dropout_rate)
    return grads, dF[0]


def attention_weights(params: AttentionParams, F: np.ndarray) -> np.ndarray:
    """Attention weight matrix (L, L) for one sequence, evaluation mode."""
    F = np.asarray(F, dtype=np.float64)
    _, A = forward_batch(params, F[None, :, :])
    return A[0]


def last_state(enc: EncodedSequence) -> np.ndarray:
    """Final-position row of H: the aggregated sequence representation."""
    return enc.H[enc.L - 1]


def state_at(enc: EncodedSequence, t: int) -> np.ndarray:
    """Row t of H, the representation of the prefix ending at position t."""
    if not 0 <= t < enc.L:
        raise IndexError(f"position {t} out of range for length {enc.L}")
    return enc.H[t]
