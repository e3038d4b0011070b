"""Synthetic interaction data with a controllable image signal.

Users draw their next item from a mixture: with probability ``signal`` an
image-cluster-affinity draw (uniform over the user's preferred cluster
within the step's domain), otherwise a Markov transition from the previous
item of the same domain. Preferred clusters are drawn independently per
domain, so the merged sequence mixes two visual tastes while each domain
view carries a single clean one. Item image embeddings are their cluster
centroid plus isotropic noise, so the frozen image table carries exactly as
much information about transitions as ``signal`` injects.

The cluster assignment, sequence sampling, and embedding noise use separate
seed substreams; at signal=0 the sequences are bit-identical no matter how
the clusters fall, which is how tests pin the "no image information"
control.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .catalog import write_embedding_file
from .rng import substream


@dataclass
class SyntheticSpec:
    num_users: int = 100
    items_per_domain: int = 50
    clusters: int = 8
    signal: float = 0.5          # mixture weight of the cluster-affinity process
    len_min: int = 8             # per-user sequence length range (inclusive)
    len_max: int = 16
    seed: int = 0
    img_dim: int = 32
    noise: float = 0.1           # embedding noise around the cluster centroid
    markov: str = "sparse"       # "sparse": 3-successor rows; "cycle": deterministic;
                                 # "uniform": next item independent of history
    markov_sharpness: tuple[float, float, float] = (0.7, 0.2, 0.1)
    pref_correlation: float = 0.5  # P(user's Y-domain taste equals the X-domain one)

    def __post_init__(self):
        if self.num_users < 1 or self.items_per_domain < 1 or self.clusters < 1:
            raise ValueError("num_users, items_per_domain, clusters must be >= 1")
        if not 0.0 <= self.signal <= 1.0:
            raise ValueError("signal must be in [0, 1]")
        if self.len_min < 6 or self.len_max < self.len_min:
            raise ValueError("need len_max >= len_min >= 6 (three items per domain)")
        if self.img_dim < 1 or self.noise < 0:
            raise ValueError("img_dim must be >= 1 and noise >= 0")
        if self.markov not in ("sparse", "cycle", "uniform"):
            raise ValueError("markov must be 'sparse', 'cycle', or 'uniform'")
        if self.clusters > self.items_per_domain:
            raise ValueError("clusters must not exceed items_per_domain "
                             "(every cluster must exist in both domains)")
        if not 0.0 <= self.pref_correlation <= 1.0:
            raise ValueError("pref_correlation must be in [0, 1]")


def item_keys(spec: SyntheticSpec) -> list[str]:
    n = spec.items_per_domain
    return [f"X{i:04d}" for i in range(n)] + [f"Y{i:04d}" for i in range(n)]


def _cluster_assignment(spec: SyntheticSpec) -> np.ndarray:
    """Balanced random assignment; every cluster appears in both domains."""
    rng = substream(spec.seed, "synth/clusters")
    n = spec.items_per_domain
    out = np.empty(2 * n, dtype=np.int64)
    for d in range(2):
        perm = rng.permutation(n)
        out[d * n + perm] = np.arange(n) % spec.clusters
    return out


def _markov_rows(spec: SyntheticSpec, domain: int) -> np.ndarray:
    """Per-item transition distributions within one domain."""
    n = spec.items_per_domain
    rows = np.zeros((n, n), dtype=np.float64)
    if spec.markov == "cycle":
        rows[np.arange(n), (np.arange(n) + 1) % n] = 1.0
        return rows
    if spec.markov == "uniform":
        rows[:] = 1.0 / n
        return rows
    rng = substream(spec.seed, f"synth/markov/{domain}")
    weights = np.asarray(spec.markov_sharpness, dtype=np.float64)
    weights = weights / weights.sum()
    for i in range(n):
        succ = rng.choice(n, size=min(len(weights), n), replace=False)
        rows[i, succ] = weights[:len(succ)]
    return rows


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    keys: list[str]
    clusters: np.ndarray             # cluster id per item (catalog order)
    markov: tuple[np.ndarray, np.ndarray]
    preferred: np.ndarray            # (num_users, 2): preferred cluster per domain
    interactions: list[tuple[str, str, int, str]]   # user, item key, ts, domain
    embeddings: np.ndarray           # (2n, img_dim)


def generate(spec: SyntheticSpec) -> SyntheticData:
    """Generate interactions, image embeddings, and the ground-truth manifest."""
    n = spec.items_per_domain
    keys = item_keys(spec)
    clusters = _cluster_assignment(spec)
    markov = (_markov_rows(spec, 0), _markov_rows(spec, 1))
    # item indices per (domain, cluster) for affinity draws
    members: dict[tuple[int, int], np.ndarray] = {}
    for d in range(2):
        dom_items = np.arange(d * n, (d + 1) * n)
        for c in range(spec.clusters):
            members[(d, c)] = dom_items[clusters[dom_items] == c]

    rng_user = substream(spec.seed, "synth/users")
    rng_seq = substream(spec.seed, "synth/sequences")
    preferred = rng_user.integers(0, spec.clusters, size=(spec.num_users, 2))
    shared = rng_user.random(spec.num_users) < spec.pref_correlation
    preferred[shared, 1] = preferred[shared, 0]

    interactions: list[tuple[str, str, int, str]] = []
    for u in range(spec.num_users):
        length = int(rng_seq.integers(spec.len_min, spec.len_max + 1))
        # domain slots: guarantee at least three per domain, order shuffled
        doms = np.concatenate([np.zeros(3, np.int64), np.ones(3, np.int64),
                               rng_seq.integers(0, 2, size=length - 6)])
        rng_seq.shuffle(doms)
        last: dict[int, int] = {}
        for step, d in enumerate(map(int, doms)):
            pool = members[(d, int(preferred[u, d]))]
            if spec.signal > 0.0 and len(pool) > 0 and rng_seq.random() < spec.signal:
                item = int(pool[rng_seq.integers(0, len(pool))])
            elif d in last:
                local = last[d] - d * n
                item = d * n + int(rng_seq.choice(n, p=markov[d][local]))
            else:
                item = d * n + int(rng_seq.integers(0, n))
            last[d] = item
            ts = u * 100000 + step
            interactions.append((f"user{u:05d}", keys[item], ts, "XY"[d]))

    rng_emb = substream(spec.seed, "synth/embeddings")
    centroids = rng_emb.standard_normal((spec.clusters, spec.img_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    emb = centroids[clusters] + spec.noise * rng_emb.standard_normal((2 * n, spec.img_dim))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return SyntheticData(spec=spec, keys=keys, clusters=clusters, markov=markov,
                         preferred=preferred, interactions=interactions, embeddings=emb)


def write_outputs(data: SyntheticData, out_dir: str | Path, text_embeddings: bool = False
                  ) -> tuple[Path, Path, Path]:
    """Write interactions.tsv, embeddings file, and the ground-truth manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inter_path = out_dir / "interactions.tsv"
    lines = ["# user\titem\ttimestamp\tdomain"]
    lines += [f"{u}\t{k}\t{ts}\t{d}" for u, k, ts, d in data.interactions]
    inter_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    emb_path = out_dir / ("embeddings.txt" if text_embeddings else "embeddings.bin")
    write_embedding_file(emb_path, data.keys, data.embeddings, text=text_embeddings)

    truth_path = out_dir / "truth.json"
    truth = {
        "spec": asdict(data.spec),
        "clusters": {k: int(c) for k, c in zip(data.keys, data.clusters)},
        "preferred_cluster": {f"user{u:05d}": {"X": int(cx), "Y": int(cy)}
                              for u, (cx, cy) in enumerate(data.preferred)},
        "markov_x": data.markov[0].tolist(),
        "markov_y": data.markov[1].tolist(),
    }
    truth_path.write_text(json.dumps(truth, indent=1, sort_keys=True), encoding="utf-8")
    return inter_path, emb_path, truth_path
