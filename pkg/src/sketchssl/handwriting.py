"""Word recognition on synthetic glyph words.

An offline recognizer reads word images through :class:`WordImageEncoder`;
an online recognizer reads pen trajectories through a stacked
:class:`BLSTMSequenceEncoder`. Both feed an attentional character decoder.
Accuracy is Word Recognition Accuracy (WRA), optionally after snapping every
prediction to its nearest lexicon word.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import raster as rz
from .checkpoint import load_checkpoint
from .data import LabeledSample, stack_rasters, stack_vectors
from .errors import (
    BadAspect,
    DataError,
    EmptyDataset,
    EmptyFeatures,
    EmptyLexicon,
    LengthMismatch,
    ModalityMismatch,
    ShapeMismatch,
    UsageError,
)
from .models import (
    BLSTMSequenceEncoder,
    ImageEncoderConfig,
    SeqEncoderConfig,
    WordImageEncoder,
    _build,
    to_model_coords,
)
from .pretrain import epoch_order, seed_everything

# ---------------------------------------------------------------- vocabulary


class CharVocab:
    PAD, START, END = "<pad>", "<start>", "<end>"

    def __init__(self, chars: Sequence[str]):
        chars = list(chars)
        if not chars:
            raise DataError("vocabulary needs at least one character")
        if len(set(chars)) != len(chars):
            raise DataError("vocabulary characters must be unique")
        if any(len(c) != 1 for c in chars):
            raise DataError("vocabulary entries must be single characters")
        self.chars = chars
        self.tokens = [self.PAD, self.START, self.END, *chars]
        self._index = {t: i for i, t in enumerate(self.tokens)}

    pad_id, start_id, end_id = 0, 1, 2

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        """Character ids followed by ``<end>``."""
        try:
            return [self._index[c] for c in text] + [self.end_id]
        except KeyError as e:
            raise DataError(f"character {e.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.end_id:
                break
            if i > self.end_id:
                out.append(self.tokens[i])
        return "".join(out)

    def batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Padded ``(N, L)`` target ids (each ending in ``<end>``) and their 0/1 mask."""
        enc = [self.encode(t) for t in texts]
        L = max(len(e) for e in enc)
        ids = torch.full((len(enc), L), self.pad_id, dtype=torch.long)
        mask = torch.zeros(len(enc), L)
        for n, e in enumerate(enc):
            ids[n, : len(e)] = torch.tensor(e)
            mask[n, : len(e)] = 1.0
        return ids, mask


# ---------------------------------------------------------------- decoder


class AttentionalDecoder(nn.Module):
    """BLSTM over encoder features, then a GRU cell with additive attention.

    Step t embeds the previous character, attends over the BLSTM memory with
    ``v^T tanh(W_m m_i + W_s s)`` and predicts the next character from
    ``[s_t, context_t]``.
    """

    def __init__(self, feat_dim: int, vocab_size: int, hidden: int = 128, embed_dim: int = 32, attn_dim: int = 64):
        super().__init__()
        if hidden % 2:
            raise UsageError("decoder hidden size must be even")
        self.hidden = hidden
        self.vocab_size = vocab_size
        self.memory_rnn = nn.LSTM(feat_dim, hidden // 2, batch_first=True, bidirectional=True)
        self.embed = nn.Embedding(vocab_size, embed_dim)
        self.init = nn.Linear(hidden, hidden)
        self.cell = nn.GRUCell(embed_dim + hidden, hidden)
        self.key = nn.Linear(hidden, attn_dim, bias=False)
        self.query = nn.Linear(hidden, attn_dim)
        self.score = nn.Linear(attn_dim, 1, bias=False)
        self.out = nn.Linear(2 * hidden, vocab_size)

    def prepare(self, features: torch.Tensor, mask: torch.Tensor | None):
        if features.dim() != 3 or features.shape[1] == 0:
            raise EmptyFeatures(f"need a nonempty (N, S, D) feature sequence, got {tuple(features.shape)}")
        if mask is None:
            mask = features.new_ones(features.shape[:2])
        mask = mask > 0
        if not bool(mask.any(dim=1).all()):
            raise EmptyFeatures("a feature sequence has no valid steps")
        memory, _ = self.memory_rnn(features)
        memory = memory * mask.unsqueeze(-1)
        pooled = memory.sum(1) / mask.sum(1, keepdim=True)
        state = torch.tanh(self.init(pooled))
        return memory, self.key(memory), mask, state

    def attend(self, state, memory, keys, mask):
        e = self.score(torch.tanh(keys + self.query(state).unsqueeze(1))).squeeze(-1)
        e = e.masked_fill(~mask, float("-inf"))
        w = torch.softmax(e, dim=1)
        return torch.bmm(w.unsqueeze(1), memory).squeeze(1), w

    def step(self, prev_ids, state, memory, keys, mask):
        ctx, w = self.attend(state, memory, keys, mask)
        state = self.cell(torch.cat([self.embed(prev_ids), ctx], dim=1), state)
        ctx, w = self.attend(state, memory, keys, mask)
        return self.out(torch.cat([state, ctx], dim=1)), state, w

    def forward(self, features, mask=None, targets: torch.Tensor | None = None, start_id: int = CharVocab.start_id):
        """Teacher-forced logits ``(N, L, V)`` and attention weights ``(N, L, S)``."""
        if targets is None:
            raise UsageError("teacher forcing needs target ids")
        memory, keys, mask, state = self.prepare(features, mask)
        prev = torch.full((features.shape[0],), start_id, dtype=torch.long)
        logits, weights = [], []
        for t in range(targets.shape[1]):
            out, state, w = self.step(prev, state, memory, keys, mask)
            logits.append(out)
            weights.append(w)
            prev = targets[:, t]
        return torch.stack(logits, 1), torch.stack(weights, 1)

    @torch.no_grad()
    def greedy(self, features, mask=None, max_len: int = 16, start_id: int = CharVocab.start_id,
               end_id: int = CharVocab.end_id):
        """Greedy ids ``(N, <=max_len)`` (``<end>``-terminated per row) and attention weights."""
        memory, keys, mask, state = self.prepare(features, mask)
        n = features.shape[0]
        prev = torch.full((n,), start_id, dtype=torch.long)
        done = torch.zeros(n, dtype=torch.bool)
        ids, weights = [], []
        for _ in range(max_len):
            out, state, w = self.step(prev, state, memory, keys, mask)
            prev = out.argmax(dim=1)
            prev = torch.where(done, torch.full_like(prev, end_id), prev)
            ids.append(prev)
            weights.append(w)
            done |= prev == end_id
            if bool(done.all()):
                break
        return torch.stack(ids, 1), torch.stack(weights, 1)


# ---------------------------------------------------------------- recognizer


def _word_image_defaults() -> ImageEncoderConfig:
    return ImageEncoderConfig(family="word-conv-blstm", widths=(16, 32, 64), rnn_hidden=64, rnn_layers=2)


def _online_defaults() -> SeqEncoderConfig:
    return SeqEncoderConfig(family="blstm", layers=4, hidden=64)


@dataclass
class RecognizerConfig:
    modality: str = "image"  # or "vector"
    alphabet: str = "lovwznuxct"
    height: int = 32
    image_encoder: ImageEncoderConfig = field(default_factory=_word_image_defaults)
    seq_encoder: SeqEncoderConfig = field(default_factory=_online_defaults)
    coordinate_mode: str = "absolute"
    decoder_hidden: int = 128
    embed_dim: int = 32
    attn_dim: int = 64
    max_len: int = 8
    T_max: int = 64

    def __post_init__(self):
        if self.modality not in ("image", "vector"):
            raise UsageError(f"unknown modality {self.modality!r}")
        if self.image_encoder.family != "word-conv-blstm":
            raise UsageError("the offline recognizer needs a word-conv-blstm image encoder")
        if self.seq_encoder.family != "blstm":
            raise UsageError("the online recognizer needs a blstm sequence encoder")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RecognizerConfig":
        return _build(cls, d)


class Recognizer(nn.Module):
    def __init__(self, cfg: RecognizerConfig):
        super().__init__()
        self.cfg = cfg
        self.vocab = CharVocab(cfg.alphabet)
        if cfg.modality == "image":
            self.encoder = WordImageEncoder(cfg.image_encoder)
        else:
            self.encoder = BLSTMSequenceEncoder(cfg.seq_encoder)
        self.decoder = AttentionalDecoder(self.encoder.out_dim, len(self.vocab), cfg.decoder_hidden, cfg.embed_dim,
                                          cfg.attn_dim)

    def features(self, *inputs) -> tuple[torch.Tensor, torch.Tensor]:
        """Encoder feature sequence ``(N, S, D)`` and its validity mask ``(N, S)``."""
        if self.cfg.modality == "image":
            (images,) = inputs
            if images.dim() != 4:
                raise ShapeMismatch(f"expected (N, C, H, W) images, got {tuple(images.shape)}")
            h, w = images.shape[-2:]
            if h != self.cfg.height:
                raise BadAspect(f"image height {h} != {self.cfg.height}")
            if w % self.encoder.stride:
                raise BadAspect(f"image width {w} is not a multiple of the stride {self.encoder.stride}")
            feats, _ = self.encoder(images)
            return feats, feats.new_ones(feats.shape[:2])
        seqs, mask = inputs
        feats, _ = self.encoder.encode(to_model_coords(seqs, self.cfg.coordinate_mode), mask)
        return feats, mask

    def forward(self, inputs: tuple, targets: torch.Tensor):
        feats, mask = self.features(*inputs)
        return self.decoder(feats, mask, targets, self.vocab.start_id)

    def predict(self, inputs: tuple, max_len: int | None = None) -> list[str]:
        with torch.no_grad():
            feats, mask = self.features(*inputs)
            ids, _ = self.decoder.greedy(feats, mask, max_len or self.cfg.max_len, self.vocab.start_id,
                                         self.vocab.end_id)
        return [self.vocab.decode(row) for row in ids.tolist()]

    def inputs(self, samples: Sequence[LabeledSample], raster_cfg: rz.RasterConfig | None = None) -> tuple:
        if self.cfg.modality == "image":
            return (torch.from_numpy(stack_rasters(samples, raster_cfg)),)
        seqs, masks = stack_vectors(samples, self.cfg.T_max)
        return torch.from_numpy(seqs.astype(np.float32)), torch.from_numpy(masks.astype(np.float32))


def build_recognizer(cfg: RecognizerConfig, seed: int = 0) -> Recognizer:
    torch.manual_seed(seed)
    return Recognizer(cfg)


def init_encoder_from_checkpoint(rec: Recognizer, path) -> int:
    """Copy the pretext encoder weights of a checkpoint into ``rec.encoder``.

    Offline recognizers take a vectorization checkpoint, online ones a
    rasterization checkpoint. Returns the number of tensors copied.
    """
    store, manifest = load_checkpoint(path)
    want = "vectorization" if rec.cfg.modality == "image" else "rasterization"
    if manifest.get("task") != want:
        raise ModalityMismatch(f"a {rec.cfg.modality} recognizer needs a {want} checkpoint, got {manifest.get('task')}")
    own = rec.encoder.state_dict()
    state = {k[len("encoder."):]: v for k, v in store.model_state().items() if k.startswith("encoder.")}
    if set(state) != set(own) or any(state[k].shape != own[k].shape for k in own):
        raise ShapeMismatch("checkpoint encoder does not match the recognizer encoder configuration")
    rec.encoder.load_state_dict(state)
    return len(state)


# ---------------------------------------------------------------- training


@dataclass
class RecognizerTrainConfig:
    epochs: int = 60
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    grad_clip: float | None = 1.0
    deterministic: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RecognizerTrainConfig":
        return _build(cls, d)


def sequence_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Cross-entropy per character, averaged over real (non-pad) positions."""
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none")
    m = mask.reshape(-1).to(ce.dtype)
    return (ce * m).sum() / m.sum()


def train_recognizer(
    rec: Recognizer,
    samples: Sequence[LabeledSample],
    cfg: RecognizerTrainConfig,
    raster_cfg: rz.RasterConfig | None = None,
) -> list[dict]:
    """Teacher-forced training with Adam; returns per-epoch ``{"epoch", "loss"}``."""
    if not samples:
        raise EmptyDataset("no labelled words")
    if any(not s.text for s in samples):
        raise DataError("every training word needs a nonempty text")
    seed_everything(cfg.seed, cfg.deterministic)
    inputs = rec.inputs(samples, raster_cfg)
    targets, tmask = rec.vocab.batch([s.text for s in samples])
    opt = torch.optim.Adam(rec.parameters(), lr=cfg.lr)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        rec.train()
        order = epoch_order(len(samples), cfg.seed, epoch)
        total = 0.0
        for b in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[b : b + cfg.batch_size])
            logits, _ = rec(tuple(x[idx] for x in inputs), targets[idx])
            loss = sequence_loss(logits, targets[idx], tmask[idx])
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                nn.utils.clip_grad_norm_(rec.parameters(), cfg.grad_clip)
            opt.step()
            total += float(loss.detach()) * len(idx)
        history.append({"epoch": epoch, "loss": total / len(samples)})
    rec.eval()
    return history


def teacher_forced_accuracy(rec: Recognizer, samples: Sequence[LabeledSample], raster_cfg=None) -> float:
    """Fraction of real target positions whose argmax equals the target."""
    targets, tmask = rec.vocab.batch([s.text for s in samples])
    rec.eval()
    with torch.no_grad():
        logits, _ = rec(rec.inputs(samples, raster_cfg), targets)
    hit = (logits.argmax(-1) == targets).float() * tmask
    return float(hit.sum() / tmask.sum())


def recognize(rec: Recognizer, samples: Sequence[LabeledSample], raster_cfg=None) -> list[str]:
    rec.eval()
    return rec.predict(rec.inputs(samples, raster_cfg))


# ---------------------------------------------------------------- metrics


def levenshtein(a: str, b: str) -> int:
    """Unit-cost insert/delete/substitute edit distance."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lexicon_correct(prediction: str, lexicon: Sequence[str]) -> str:
    """Nearest lexicon word by edit distance; ties go to the word listed first."""
    if not lexicon:
        raise EmptyLexicon("lexicon is empty")
    return min(lexicon, key=lambda w: levenshtein(prediction, w))


def evaluate_wra(predictions: Sequence[str], references: Sequence[str], lexicon: Sequence[str] | None = None) -> float:
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(references)} references")
    if not references:
        raise EmptyDataset("nothing to evaluate")
    if lexicon is not None:
        lexicon = list(dict.fromkeys(lexicon))
        predictions = [lexicon_correct(p, lexicon) for p in predictions]
    return sum(p == r for p, r in zip(predictions, references)) / len(references)


def recognition_report(
    ids: Sequence[str], references: Sequence[str], predictions: Sequence[str], lexicon: Sequence[str] | None = None
) -> dict:
    """JSON-ready per-sample report plus both WRA figures."""
    lex = list(dict.fromkeys(lexicon)) if lexicon is not None else None
    rows = []
    for i, ref, pred in zip(ids, references, predictions):
        corrected = lexicon_correct(pred, lex) if lex is not None else None
        rows.append({
            "id": i,
            "reference": ref,
            "prediction": pred,
            "lexicon_prediction": corrected,
            "edit_distance": levenshtein(pred, ref),
        })
    report = {"wra": evaluate_wra(predictions, references), "samples": rows}
    if lex is not None:
        report["wra_lexicon"] = evaluate_wra(predictions, references, lex)
        report["lexicon_size"] = len(lex)
    return report


# ---------------------------------------------------------------- label-fraction protocol


def label_subset(samples: Sequence[LabeledSample], fraction: float, seed: int) -> list[LabeledSample]:
    """Seeded random ``fraction`` of ``samples`` (at least one)."""
    if not 0 < fraction <= 1:
        raise UsageError("fraction must be in (0, 1]")
    k = max(1, int(round(fraction * len(samples))))
    idx = np.sort(np.random.default_rng(seed).permutation(len(samples))[:k])
    return [samples[int(i)] for i in idx]


def run_recognition(
    train: Sequence[LabeledSample],
    test: Sequence[LabeledSample],
    cfg: RecognizerConfig,
    train_cfg: RecognizerTrainConfig,
    checkpoint=None,
    lexicon: Sequence[str] | None = None,
    raster_cfg: rz.RasterConfig | None = None,
) -> dict:
    """Train a recognizer (from ``checkpoint`` encoder weights if given) and score it on ``test``."""
    rec = build_recognizer(cfg, train_cfg.seed)
    if checkpoint is not None:
        init_encoder_from_checkpoint(rec, checkpoint)
    history = train_recognizer(rec, train, train_cfg, raster_cfg)
    preds = recognize(rec, test, raster_cfg)
    report = recognition_report([s.id for s in test], [s.text for s in test], preds, lexicon)
    report.update(init="pretrained" if checkpoint is not None else "random", n_train=len(train),
                  final_loss=history[-1]["loss"])
    return report
