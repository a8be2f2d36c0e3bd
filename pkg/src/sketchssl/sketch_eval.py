"""Measuring learned sketch representations.

Frozen-feature linear probes, triplet-trained retrieval heads, retrieval
metrics, and label-fraction fine-tuning of a (pre)trained encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .data import LabeledSample, stack_rasters, stack_vectors
from .errors import (
    ClassMismatch,
    EmptyDataset,
    EmptyGallery,
    FractionTooSmall,
    InsufficientClassSamples,
    ModalityMismatch,
    UnknownDepth,
)
from .losses import classification_loss, triplet_loss
from .models import build_model, to_model_coords

MODALITY_OF_TASK = {"vectorization": "image", "rasterization": "vector"}


@dataclass
class FeatureTable:
    ids: list[str]
    features: np.ndarray
    labels: np.ndarray
    depth_tag: str = "final"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.ids) == len(self.features) == len(self.labels)):
            raise ValueError("ids, features and labels must align")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class RetrievalResult:
    ranked: list[list[str]]
    acc_at_top1: float
    map_at_top10: float
    per_query_ap: list[float] = field(default_factory=list)


# ---------------------------------------------------------------- encoder access


class EncoderView:
    """Uniform access to the encoder half of a translation model."""

    def __init__(self, model: nn.Module, t_max: int = 64, modality: str | None = None):
        natural = MODALITY_OF_TASK[model.task]
        if modality is not None and modality != natural:
            raise ModalityMismatch(
                f"a {model.task} checkpoint encodes {natural} inputs, not {modality} inputs"
            )
        self.model = model
        self.modality = natural
        self.t_max = t_max

    @property
    def encoder(self) -> nn.Module:
        return self.model.encoder

    @property
    def depth(self) -> int:
        return self.encoder.depth

    @property
    def out_dim(self) -> int:
        return self.encoder.out_dim

    def inputs(self, samples: Sequence[LabeledSample], raster_cfg=None) -> tuple[torch.Tensor, ...]:
        if self.modality == "image":
            return (torch.from_numpy(stack_rasters(samples, raster_cfg)),)
        seqs, masks = stack_vectors(samples, self.t_max)
        seqs = torch.from_numpy(seqs.astype(np.float32))
        return to_model_coords(seqs, self.model.cfg.coordinate_mode), torch.from_numpy(masks.astype(np.float32))

    def latent(self, *inputs) -> torch.Tensor:
        if self.modality == "image":
            _, z = self.encoder(*inputs)
            return z
        return self.encoder(*inputs)

    def depth_features(self, depth, *inputs) -> torch.Tensor:
        if depth in ("final", None):
            return self.latent(*inputs)
        if not isinstance(depth, (int, np.integer)) or not 1 <= depth <= self.depth:
            raise UnknownDepth(f"depth must be 'final' or 1..{self.depth}, got {depth!r}")
        return self.encoder.block_features(*inputs)[depth - 1]

    def freeze(self, freeze_depth) -> None:
        """Freeze depth groups ``1..freeze_depth`` (``"all"`` freezes everything)."""
        groups = self.encoder.depth_groups()
        k = len(groups) if freeze_depth == "all" else int(freeze_depth)
        if not 0 <= k <= len(groups):
            raise UnknownDepth(f"freeze depth must be 0..{len(groups)} or 'all'")
        for p in self.encoder.parameters():
            p.requires_grad_(True)
        for g in groups[:k]:
            for p in g:
                p.requires_grad_(False)


def random_model(task: str, model_cfg, seed: int) -> nn.Module:
    """A translation model with untrained, seeded weights (the random baseline)."""
    torch.manual_seed(seed)
    m = build_model(task, model_cfg)
    m.eval()
    return m


def extract_features(
    view: EncoderView,
    samples: Sequence[LabeledSample],
    depth="final",
    raster_cfg=None,
    batch_size: int = 256,
) -> FeatureTable:
    view.model.eval()
    chunks = []
    with torch.no_grad():
        for b in range(0, len(samples), batch_size):
            part = samples[b : b + batch_size]
            chunks.append(view.depth_features(depth, *view.inputs(part, raster_cfg)).double().numpy())
    feats = np.concatenate(chunks) if chunks else np.zeros((0, view.out_dim))
    labels = [-1 if s.label is None else s.label for s in samples]
    return FeatureTable([s.id for s in samples], feats, labels, depth_tag=str(depth))


# ---------------------------------------------------------------- linear probe


class LinearProbe(nn.Module):
    """Affine classifier over (optionally standardised) frozen features."""

    def __init__(self, dim: int, n_classes: int, mean=None, scale=None):
        super().__init__()
        self.fc = nn.Linear(dim, n_classes, dtype=torch.float64)
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)
        self.register_buffer("mean", torch.zeros(dim, dtype=torch.float64) if mean is None else torch.as_tensor(mean))
        self.register_buffer("scale", torch.ones(dim, dtype=torch.float64) if scale is None else torch.as_tensor(scale))

    @property
    def n_classes(self) -> int:
        return self.fc.out_features

    def forward(self, x):
        return self.fc((x - self.mean) / self.scale)


def train_linear_probe(
    table: FeatureTable,
    epochs: int = 100,
    lr: float = 1e-2,
    n_classes: int | None = None,
    standardize: bool = True,
) -> LinearProbe:
    """Full-batch Adam on softmax cross-entropy, starting from zero weights.

    Standardisation statistics come from ``table`` and are stored in the
    probe, so evaluation tables are transformed identically.
    """
    k = int(n_classes if n_classes is not None else table.labels.max() + 1)
    x = torch.from_numpy(table.features)
    y = torch.from_numpy(table.labels)
    mean = scale = None
    if standardize:
        mean = x.mean(0)
        scale = x.std(0, unbiased=False)
        scale = torch.where(scale > 1e-12, scale, torch.ones_like(scale))
    probe = LinearProbe(table.dim, k, mean, scale)
    opt = torch.optim.Adam(probe.parameters(), lr=lr)
    for _ in range(epochs):
        loss = classification_loss(probe(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return probe


def _check_compatible(probe: LinearProbe, table: FeatureTable) -> None:
    if table.dim != probe.fc.in_features:
        raise ClassMismatch(f"feature dim {table.dim} != probe input {probe.fc.in_features}")
    if len(table.labels) and (table.labels.min() < 0 or table.labels.max() >= probe.n_classes):
        raise ClassMismatch(f"labels outside the probe's {probe.n_classes} classes")


def rank_classes(logits: np.ndarray) -> np.ndarray:
    """Classes by descending logit; equal logits keep ascending class order."""
    return np.argsort(-logits, axis=1, kind="stable")


def eval_topk(probe: LinearProbe, table: FeatureTable, ks: Sequence[int] = (1, 5)) -> dict[int, float]:
    _check_compatible(probe, table)
    with torch.no_grad():
        logits = probe(torch.from_numpy(table.features)).numpy()
    order = rank_classes(logits)
    out = {}
    for k in ks:
        k_eff = min(k, probe.n_classes)
        hits = (order[:, :k_eff] == table.labels[:, None]).any(axis=1)
        out[k] = float(hits.mean()) if len(hits) else 0.0
    return out


def per_class_accuracy(probe: LinearProbe, table: FeatureTable) -> dict[int, float]:
    with torch.no_grad():
        pred = rank_classes(probe(torch.from_numpy(table.features)).numpy())[:, 0]
    return {int(c): float((pred[table.labels == c] == c).mean()) for c in np.unique(table.labels)}


# ---------------------------------------------------------------- retrieval


def eval_retrieval(
    query_emb: np.ndarray,
    query_labels: Sequence[int],
    query_ids: Sequence[str],
    gallery_emb: np.ndarray,
    gallery_labels: Sequence[int],
    gallery_ids: Sequence[str],
    top: int = 10,
    metric: str = "euclidean",
) -> RetrievalResult:
    """Acc@Top1 and mAP@Top``top`` with each query removed from its own gallery.

    Gallery items are ranked by ascending distance, ties by ascending id.
    AP over the top ranks divides by the number of relevant items retrieved
    there (AP is 0 when none are).
    """
    if len(gallery_ids) == 0:
        raise EmptyGallery("gallery is empty")
    q = np.asarray(query_emb, dtype=np.float64)
    g = np.asarray(gallery_emb, dtype=np.float64)
    if metric == "cosine":
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    g_ids = np.asarray(gallery_ids)
    g_labels = np.asarray(gallery_labels)
    id_rank = np.argsort(np.argsort(g_ids, kind="stable"), kind="stable")
    ranked, hits1, aps = [], [], []
    for qi in range(len(q)):
        dist = np.sqrt(((g - q[qi]) ** 2).sum(axis=1)) if metric == "euclidean" else 1.0 - g @ q[qi]
        keep = g_ids != query_ids[qi]
        order = np.flatnonzero(keep)[np.lexsort((id_rank[keep], dist[keep]))]
        ranked.append(g_ids[order].tolist())
        rel = g_labels[order[:top]] == query_labels[qi]
        hits1.append(bool(rel[:1].any()))
        if rel.any():
            precision = np.cumsum(rel) / np.arange(1, len(rel) + 1)
            aps.append(float(precision[rel].sum() / rel.sum()))
        else:
            aps.append(0.0)
    return RetrievalResult(ranked, float(np.mean(hits1)), float(np.mean(aps)), aps)


class RetrievalHead(nn.Module):
    """Linear embedding plus an auxiliary linear classifier on the embedding."""

    def __init__(self, dim: int, n_classes: int, embed_dim: int = 256):
        super().__init__()
        self.embed = nn.Linear(dim, embed_dim)
        self.classify = nn.Linear(embed_dim, n_classes)

    def forward(self, x):
        e = self.embed(x)
        return e, self.classify(e)


def sample_triplets(labels: np.ndarray, anchors: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """For each anchor index, a same-class positive (not itself) and a different-class negative."""
    pos, neg = np.empty(len(anchors), dtype=np.int64), np.empty(len(anchors), dtype=np.int64)
    for j, a in enumerate(anchors):
        same = np.flatnonzero((labels == labels[a]) & (np.arange(len(labels)) != a))
        other = np.flatnonzero(labels != labels[a])
        pos[j] = rng.choice(same)
        neg[j] = rng.choice(other)
    return pos, neg


def check_triplet_ready(labels: np.ndarray) -> None:
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise InsufficientClassSamples("need at least 2 classes with at least 2 samples each")


def triplet_objective(head, feats, labels_t, labels_np, idx, rng, margin):
    pos, neg = sample_triplets(labels_np, idx, rng)
    e_a, logits = head(feats[idx])
    e_p, _ = head(feats[pos])
    e_n, _ = head(feats[neg])
    return triplet_loss(e_a, e_p, e_n, margin) + classification_loss(logits, labels_t[idx])


def train_retrieval_head(
    table: FeatureTable,
    margin: float = 0.2,
    epochs: int = 100,
    lr: float = 1e-3,
    embed_dim: int = 256,
    batch_size: int = 64,
    seed: int = 0,
    n_classes: int | None = None,
) -> RetrievalHead:
    """Train on frozen features with triplet loss + classification loss."""
    check_triplet_ready(table.labels)
    k = int(n_classes if n_classes is not None else table.labels.max() + 1)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    head = RetrievalHead(table.dim, k, embed_dim).double()
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    x = torch.from_numpy(table.features)
    y = torch.from_numpy(table.labels)
    for _ in range(epochs):
        order = rng.permutation(len(table.ids))
        for b in range(0, len(order), batch_size):
            loss = triplet_objective(head, x, y, table.labels, order[b : b + batch_size], rng, margin)
            opt.zero_grad()
            loss.backward()
            opt.step()
    return head


def embed_table(head: RetrievalHead, table: FeatureTable) -> np.ndarray:
    with torch.no_grad():
        e, _ = head(torch.from_numpy(table.features).to(head.embed.weight.dtype))
    return e.double().numpy()


def retrieval_on_table(embeddings: np.ndarray, table: FeatureTable, **kw) -> RetrievalResult:
    """Every item queries all other items of the same table."""
    return eval_retrieval(embeddings, table.labels, table.ids, embeddings, table.labels, table.ids, **kw)


# ---------------------------------------------------------------- fine-tuning


def stratified_subset(samples: Sequence[LabeledSample], fraction: float, seed: int) -> list[LabeledSample]:
    """``round(fraction * n_c)`` samples of every class ``c`` (at least one each)."""
    if not 0 < fraction <= 1:
        raise FractionTooSmall("fraction must lie in (0, 1]")
    by_class: dict[int, list[LabeledSample]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    if fraction * len(samples) < len(by_class):
        raise FractionTooSmall(f"{fraction} of {len(samples)} samples cannot cover {len(by_class)} classes")
    rng = np.random.default_rng(seed)
    out = []
    for c in sorted(by_class):
        group = by_class[c]
        k = max(1, int(round(fraction * len(group))))
        out += [group[i] for i in sorted(rng.permutation(len(group))[:k])]
    return out


@dataclass
class FinetuneConfig:
    fraction: float = 0.1
    head: str = "probe"  # or "retrieval"
    freeze_depth: int | str = 0
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    margin: float = 0.2
    embed_dim: int = 256
    probe_epochs: int = 100
    probe_lr: float = 1e-2


def finetune(
    view: EncoderView,
    train: Sequence[LabeledSample],
    test: Sequence[LabeledSample],
    cfg: FinetuneConfig,
    n_classes: int,
    raster_cfg=None,
) -> dict:
    """Train encoder layers above ``freeze_depth`` jointly with a head on a label fraction.

    ``freeze_depth="all"`` with the probe head is the frozen-feature probe.
    The encoder inside ``view`` is updated in place.
    """
    if not train or not test:
        raise EmptyDataset("fine-tuning needs non-empty train and test sets")
    labeled = stratified_subset(train, cfg.fraction, cfg.seed)
    result = {"labeled": len(labeled), "fraction": cfg.fraction, "head": cfg.head, "freeze_depth": cfg.freeze_depth}
    if cfg.freeze_depth == "all" and cfg.head == "probe":
        tr = extract_features(view, labeled, raster_cfg=raster_cfg)
        te = extract_features(view, test, raster_cfg=raster_cfg)
        probe = train_linear_probe(tr, cfg.probe_epochs, cfg.probe_lr, n_classes=n_classes)
        acc = eval_topk(probe, te, (1, 5))
        result.update(top1=acc[1], top5=acc[5])
        return result

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    view.freeze(cfg.freeze_depth)
    if cfg.head == "probe":
        head = nn.Linear(view.out_dim, n_classes)
    else:
        head = RetrievalHead(view.out_dim, n_classes, cfg.embed_dim)
        check_triplet_ready(np.array([s.label for s in labeled]))
    params = [p for p in view.encoder.parameters() if p.requires_grad] + list(head.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    inputs = view.inputs(labeled, raster_cfg)
    labels_np = np.array([s.label for s in labeled])
    labels = torch.from_numpy(labels_np)
    for _ in range(cfg.epochs):
        view.model.train()
        order = rng.permutation(len(labeled))
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b : b + cfg.batch_size]
            if cfg.head == "probe":
                z = view.latent(*(t[idx] for t in inputs))
                loss = classification_loss(head(z), labels[idx])
            else:
                pos, neg = sample_triplets(labels_np, idx, rng)
                allidx = np.concatenate([idx, pos, neg])
                e, logits = head(view.latent(*(t[allidx] for t in inputs)))
                n = len(idx)
                loss = triplet_loss(e[:n], e[n : 2 * n], e[2 * n :], cfg.margin) + classification_loss(
                    logits[:n], labels[idx]
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
    view.model.eval()
    view.freeze(0)

    with torch.no_grad():
        z = view.latent(*view.inputs(test, raster_cfg))
        test_labels = np.array([s.label for s in test])
        if cfg.head == "probe":
            order = rank_classes(head(z).double().numpy())
            result["top1"] = float((order[:, 0] == test_labels).mean())
            result["top5"] = float((order[:, : min(5, n_classes)] == test_labels[:, None]).any(axis=1).mean())
        else:
            e, _ = head(z)
            r = eval_retrieval(e.double().numpy(), test_labels, [s.id for s in test],
                               e.double().numpy(), test_labels, [s.id for s in test])
            result["acc_at_top1"] = r.acc_at_top1
            result["map_at_top10"] = r.map_at_top10
    return result
