"""Corpora of paired raster/vector samples.

Sources are QuickDraw-style newline-delimited JSON files and two seeded
synthetic generators (parametric sketches, glyph words) used for desk-scale
experiments. Corpora are persisted as a directory holding ``manifest.json``
and one binary stroke file per sample.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import raster as rz
from .errors import (
    DataError,
    EmptyAlphabet,
    EmptyFile,
    MalformedRecord,
    TooFewClasses,
    UnknownClassName,
    VersionMismatch,
)
from .strokes import StrokeSequence, from_polylines, normalize, pad_or_truncate, rdp_simplify

CORPUS_FORMAT_VERSION = 1
DEFAULT_RDP_EPSILON = 0.01


@dataclass
class LabeledSample:
    id: str
    vector: StrokeSequence
    raster: np.ndarray | None = None
    label: int | None = None
    text: str | None = None


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    class_universe: list[str]
    seed: int

    def __post_init__(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise DataError("split id sets overlap")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Corpus:
    samples: list[LabeledSample]
    split: DatasetSplit
    raster_cfg: rz.RasterConfig
    kind: str = "sketches"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {s.id: s for s in self.samples}
        missing = [i for i in self.split.train + self.split.val + self.split.test if i not in self._by_id]
        if missing:
            raise DataError(f"split references unknown ids, e.g. {missing[0]}")

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, sample_id: str) -> LabeledSample:
        return self._by_id[sample_id]

    @property
    def class_names(self) -> list[str]:
        return self.split.class_universe

    def subset(self, part: str) -> list[LabeledSample]:
        return [self._by_id[i] for i in getattr(self.split, part)]

    def ensure_rasters(self) -> None:
        for s in self.samples:
            if s.raster is None:
                s.raster = rz.render(s.vector, self.raster_cfg)


# ---------------------------------------------------------------- batching


def stack_rasters(samples: Sequence[LabeledSample], cfg: rz.RasterConfig | None = None) -> np.ndarray:
    """``(N, C, H, W)`` float32 array, rendering on demand when ``cfg`` is given."""
    imgs = []
    for s in samples:
        img = s.raster
        if img is None:
            if cfg is None:
                raise DataError(f"sample {s.id} has no raster and no config to render one")
            img = rz.render(s.vector, cfg)
        imgs.append(np.transpose(img, (2, 0, 1)))
    return np.stack(imgs).astype(np.float32)


def stack_vectors(samples: Sequence[LabeledSample], t_max: int) -> tuple[np.ndarray, np.ndarray]:
    """``(N, t_max, 5)`` padded sequences and ``(N, t_max)`` masks."""
    seqs, masks = zip(*(pad_or_truncate(s.vector, t_max) for s in samples))
    return np.stack(seqs), np.stack(masks)


# ---------------------------------------------------------------- QuickDraw


@dataclass
class QuickDrawParse:
    records: list[tuple[str, StrokeSequence]]
    too_short: int = 0
    malformed: list[MalformedRecord] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return self.too_short + len(self.malformed)


def parse_quickdraw_lines(data: bytes | Iterable[bytes | str], canvas: int = 256) -> QuickDrawParse:
    """Parse newline-delimited ``{"word": ..., "drawing": [[xs, ys], ...]}`` records.

    Malformed lines are collected (with their 1-based line number) rather than
    raised; records with fewer than two points in total are skipped.
    """
    lines = data.splitlines() if isinstance(data, (bytes, str)) else list(data)
    if not any(str(l if isinstance(l, str) else l.decode("utf-8", "replace")).strip() for l in lines):
        raise EmptyFile("no records")
    out = QuickDrawParse(records=[])
    for n, raw in enumerate(lines, start=1):
        line = raw.decode("utf-8", "replace") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            word = rec["word"]
            drawing = rec["drawing"]
            if not isinstance(word, str) or not isinstance(drawing, list):
                raise TypeError("word must be a string and drawing a list")
            strokes = []
            for stroke in drawing:
                xs, ys = stroke[0], stroke[1]
                if len(xs) != len(ys):
                    raise ValueError("x and y arrays differ in length")
                strokes.append([(float(x), float(y)) for x, y in zip(xs, ys)])
        except (ValueError, KeyError, TypeError, IndexError) as e:
            out.malformed.append(MalformedRecord(n, str(e)))
            continue
        strokes = [s for s in strokes if s]
        if sum(len(s) for s in strokes) < 2:
            out.too_short += 1
            continue
        try:
            seq = normalize(from_polylines(strokes), canvas, canvas)
        except DataError as e:
            out.malformed.append(MalformedRecord(n, str(e)))
            continue
        out.records.append((word, seq))
    return out


def corpus_from_records(
    records: Sequence[tuple[str, StrokeSequence]],
    raster_cfg: rz.RasterConfig,
    seed: int = 0,
    rdp_epsilon: float = DEFAULT_RDP_EPSILON,
    t_max: int = 64,
) -> Corpus:
    classes = sorted({w for w, _ in records})
    index = {c: i for i, c in enumerate(classes)}
    samples = []
    for i, (word, seq) in enumerate(records):
        vec = _finish(seq, rdp_epsilon, t_max)
        samples.append(LabeledSample(f"s{i:06d}", vec, rz.render(vec, raster_cfg), label=index[word]))
    split = _stratified_split(samples, classes, seed)
    meta = {"source": "quickdraw", "rdp_epsilon": rdp_epsilon, "T_max": t_max}
    return Corpus(samples, split, raster_cfg, kind="sketches", meta=meta)


# ---------------------------------------------------------------- synthetic sketches


def _ngon(n: int, r: float = 0.35, phase: float = -math.pi / 2) -> list[tuple[float, float]]:
    pts = [(0.5 + r * math.cos(phase + 2 * math.pi * k / n), 0.5 + r * math.sin(phase + 2 * math.pi * k / n)) for k in range(n)]
    return pts + [pts[0]]


def _star() -> list[tuple[float, float]]:
    pts = []
    for k in range(10):
        r = 0.38 if k % 2 == 0 else 0.16
        a = -math.pi / 2 + math.pi * k / 5
        pts.append((0.5 + r * math.cos(a), 0.5 + r * math.sin(a)))
    return pts + [pts[0]]


def _spiral() -> list[tuple[float, float]]:
    pts = []
    for k in range(33):
        a = 4 * math.pi * k / 32
        r = 0.03 + 0.33 * k / 32
        pts.append((0.5 + r * math.cos(a), 0.5 + r * math.sin(a)))
    return pts


def _heart() -> list[tuple[float, float]]:
    pts = []
    for k in range(21):
        t = 2 * math.pi * k / 20
        x = 16 * math.sin(t) ** 3
        y = 13 * math.cos(t) - 5 * math.cos(2 * t) - 2 * math.cos(3 * t) - math.cos(4 * t)
        pts.append((0.5 + 0.021 * x, 0.47 - 0.021 * y))
    return pts


def _densify(stroke: list[tuple[float, float]], spacing: float = 0.1) -> list[tuple[float, float]]:
    """Subdivide segments longer than ``spacing`` so point count tracks arc length."""
    out = [stroke[0]]
    for (ax, ay), (bx, by) in zip(stroke[:-1], stroke[1:]):
        n = max(1, math.ceil(math.hypot(bx - ax, by - ay) / spacing))
        out += [(ax + (bx - ax) * k / n, ay + (by - ay) * k / n) for k in range(1, n + 1)]
    return out


# Densified so that point counts overlap across classes: sequence length alone
# must not give the class away.
_RAW_TEMPLATES: dict[str, list[list[tuple[float, float]]]] = {
    "circle": [_ngon(24)],
    "square": [[(0.2, 0.2), (0.8, 0.2), (0.8, 0.8), (0.2, 0.8), (0.2, 0.2)]],
    "triangle": [[(0.5, 0.15), (0.85, 0.8), (0.15, 0.8), (0.5, 0.15)]],
    "star": [_star()],
    "zigzag": [[(0.1, 0.3), (0.26, 0.7), (0.42, 0.3), (0.58, 0.7), (0.74, 0.3), (0.9, 0.7)]],
    "spiral": [_spiral()],
    "arrow": [[(0.15, 0.5), (0.85, 0.5)], [(0.6, 0.3), (0.85, 0.5), (0.6, 0.7)]],
    "cross": [[(0.2, 0.2), (0.8, 0.8)], [(0.8, 0.2), (0.2, 0.8)]],
    "heart": [_heart()],
    "house": [
        [(0.25, 0.45), (0.25, 0.85), (0.75, 0.85), (0.75, 0.45), (0.25, 0.45)],
        [(0.2, 0.48), (0.5, 0.15), (0.8, 0.48)],
    ],
}
SKETCH_TEMPLATES = {k: [_densify(s) for s in v] for k, v in _RAW_TEMPLATES.items()}


@dataclass(frozen=True)
class SyntheticSketchSpec:
    """Seeded parametric sketch corpus.

    ``jitter`` scales all randomness: per-point Gaussian noise has standard
    deviation ``jitter``; each sample also receives a random pose (rotation
    std ``10*jitter`` rad, scale and translation std ``5*jitter``). With
    ``jitter=0`` every sample of a class is the bare template.
    """

    classes: tuple[str, ...] = ("circle", "square", "triangle", "star", "zigzag")
    per_class: int = 100
    jitter: float = 0.02
    T_max: int = 64
    seed: int = 0
    rdp_epsilon: float = DEFAULT_RDP_EPSILON

    def __post_init__(self):
        if self.per_class < 1:
            raise DataError("per_class must be >= 1")
        if self.jitter < 0:
            raise DataError("jitter must be >= 0")
        unknown = [c for c in self.classes if c not in SKETCH_TEMPLATES]
        if unknown:
            raise UnknownClassName(f"unknown class name(s): {', '.join(unknown)}")
        if len(set(self.classes)) != len(self.classes):
            raise DataError("duplicate class names")


def _pose(rng: np.random.Generator, jitter: float, strokes: list[np.ndarray]) -> list[np.ndarray]:
    if jitter == 0:
        return strokes
    angle = rng.normal(0.0, 10 * jitter)
    scale = 1.0 + rng.normal(0.0, 5 * jitter)
    shift = rng.normal(0.0, 5 * jitter, size=2)
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]]) * scale
    out = []
    for st in strokes:
        p = (st - 0.5) @ rot.T + 0.5 + shift
        p = p + rng.normal(0.0, jitter, size=p.shape)
        out.append(p)
    return out


def _finish(seq: StrokeSequence, rdp_epsilon: float, t_max: int) -> StrokeSequence:
    seq = rdp_simplify(seq, rdp_epsilon)
    if len(seq) > t_max:
        padded, _ = pad_or_truncate(seq, t_max)
        seq = StrokeSequence(padded)
    return seq.as_float32()


def _stratified_split(samples: Sequence[LabeledSample], classes: Sequence[str], seed: int) -> DatasetSplit:
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    for s in samples:
        by_class.setdefault(-1 if s.label is None else s.label, []).append(s.id)
    train, val, test = [], [], []
    for label in sorted(by_class):
        ids = list(by_class[label])
        rng.shuffle(ids)
        n_val = n_test = len(ids) // 10
        val += ids[:n_val]
        test += ids[n_val : n_val + n_test]
        train += ids[n_val + n_test :]
    return DatasetSplit(sorted(train), sorted(val), sorted(test), list(classes), seed)


def make_synthetic_sketches(spec: SyntheticSketchSpec, raster_cfg: rz.RasterConfig | None = None) -> Corpus:
    raster_cfg = raster_cfg or rz.RasterConfig()
    rng = np.random.default_rng(spec.seed)
    samples = []
    for label, name in enumerate(spec.classes):
        template = [np.asarray(s, dtype=np.float64) for s in SKETCH_TEMPLATES[name]]
        for _ in range(spec.per_class):
            strokes = [np.clip(s, 0.0, 1.0) for s in _pose(rng, spec.jitter, template)]
            vec = _finish(from_polylines(strokes), spec.rdp_epsilon, spec.T_max)
            sid = f"s{len(samples):06d}"
            samples.append(LabeledSample(sid, vec, rz.render(vec, raster_cfg), label=label))
    split = _stratified_split(samples, spec.classes, spec.seed)
    meta = {"source": "synthetic-sketches", "spec": _spec_echo(spec)}
    return Corpus(samples, split, raster_cfg, kind="sketches", meta=meta)


def _spec_echo(spec) -> dict:
    d = asdict(spec)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# ---------------------------------------------------------------- synthetic words

# Glyphs live in a unit box; y grows downward.
GLYPHS: dict[str, list[list[tuple[float, float]]]] = {
    "l": [[(0.5, 0.1), (0.5, 0.9)]],
    "o": [_ngon(12, r=0.3, phase=-math.pi / 2)],
    "v": [[(0.2, 0.2), (0.5, 0.85), (0.8, 0.2)]],
    "w": [[(0.1, 0.2), (0.3, 0.85), (0.5, 0.4), (0.7, 0.85), (0.9, 0.2)]],
    "z": [[(0.2, 0.2), (0.8, 0.2), (0.2, 0.85), (0.8, 0.85)]],
    "n": [[(0.2, 0.85), (0.2, 0.3), (0.5, 0.2), (0.8, 0.3), (0.8, 0.85)]],
    "u": [[(0.2, 0.2), (0.2, 0.75), (0.5, 0.85), (0.8, 0.75), (0.8, 0.2)]],
    "x": [[(0.2, 0.2), (0.8, 0.85)], [(0.8, 0.2), (0.2, 0.85)]],
    "c": [[(0.8, 0.25), (0.5, 0.15), (0.2, 0.35), (0.2, 0.65), (0.5, 0.85), (0.8, 0.75)]],
    "t": [[(0.5, 0.1), (0.5, 0.9)], [(0.2, 0.35), (0.8, 0.35)]],
}
DEFAULT_ALPHABET = "lovwznuxct"


def word_strokes(word: str, alphabet: dict[str, list], max_len: int, rng=None, jitter: float = 0.0) -> list[np.ndarray]:
    """Concatenate glyph strokes left to right, one unit advance per glyph.

    x is divided by ``max_len`` so a ``max_len`` word spans the unit square.
    """
    strokes = []
    for i, ch in enumerate(word):
        glyph = [np.asarray(s, dtype=np.float64) for s in alphabet[ch]]
        if rng is not None and jitter > 0:
            glyph = _pose(rng, jitter, glyph)
        for s in glyph:
            p = np.array(s)
            p[:, 0] = (p[:, 0] + i) / max_len
            strokes.append(np.clip(p, 0.0, 1.0))
    return strokes


def make_synthetic_words(
    alphabet: str | Sequence[str] = DEFAULT_ALPHABET,
    word_length: tuple[int, int] = (2, 4),
    count: int = 200,
    seed: int = 0,
    jitter: float = 0.01,
    height: int = 32,
    rdp_epsilon: float = DEFAULT_RDP_EPSILON,
    T_max: int = 64,
    glyphs: dict[str, list] | None = None,
) -> Corpus:
    """Random words over ``alphabet``; canvas is ``height x height*max_len``."""
    glyphs = glyphs or GLYPHS
    chars = list(alphabet)
    if not chars:
        raise EmptyAlphabet("alphabet is empty")
    unknown = [c for c in chars if c not in glyphs]
    if unknown:
        raise UnknownClassName(f"no glyph template for {unknown}")
    lo, hi = word_length
    if not 1 <= lo <= hi:
        raise DataError("word_length must satisfy 1 <= min <= max")
    cfg = rz.RasterConfig(H=height, W=height * hi)
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        n = int(rng.integers(lo, hi + 1))
        text = "".join(chars[int(k)] for k in rng.integers(0, len(chars), size=n))
        vec = _finish(from_polylines(word_strokes(text, glyphs, hi, rng, jitter)), rdp_epsilon, T_max)
        samples.append(LabeledSample(f"w{i:06d}", vec, rz.render(vec, cfg), text=text))
    split = _stratified_split(samples, chars, seed)
    meta = {
        "source": "synthetic-words",
        "spec": {"alphabet": "".join(chars), "word_length": [lo, hi], "count": count, "seed": seed,
                 "jitter": jitter, "height": height, "rdp_epsilon": rdp_epsilon, "T_max": T_max},
    }
    return Corpus(samples, split, cfg, kind="words", meta=meta)


# ---------------------------------------------------------------- class splits


def split_disjoint_classes(corpus: Corpus, n_pretrain_classes: int, seed: int) -> tuple[Corpus, Corpus]:
    """Partition by class into a pretraining corpus and a disjoint evaluation corpus.

    Labels in each part are re-indexed to that part's own class list.
    """
    names = corpus.class_names
    if not 1 <= n_pretrain_classes < len(names):
        raise TooFewClasses(f"need more than {n_pretrain_classes} classes, corpus has {len(names)}")
    order = np.random.default_rng(seed).permutation(len(names))
    pre = sorted(int(i) for i in order[:n_pretrain_classes])
    post = sorted(int(i) for i in order[n_pretrain_classes:])

    def part(labels: list[int], tag: str) -> Corpus:
        remap = {old: new for new, old in enumerate(labels)}
        samples = [
            LabeledSample(s.id, s.vector, s.raster, label=remap[s.label])
            for s in corpus.samples
            if s.label in remap
        ]
        classes = [names[i] for i in labels]
        meta = dict(corpus.meta, disjoint_part=tag, parent_classes=list(names))
        return Corpus(samples, _stratified_split(samples, classes, seed), corpus.raster_cfg, corpus.kind, meta)

    return part(pre, "pretrain"), part(post, "eval")


# ---------------------------------------------------------------- persistence


def write_strokes(seq: StrokeSequence, path: Path) -> None:
    rows = seq.points.astype("<f4")
    path.write_bytes(struct.pack("<I", rows.shape[0]) + rows.tobytes())


def read_strokes(path: Path) -> StrokeSequence:
    buf = path.read_bytes()
    if len(buf) < 4:
        raise DataError(f"{path}: truncated stroke file")
    (n,) = struct.unpack("<I", buf[:4])
    if len(buf) != 4 + 20 * n:
        raise DataError(f"{path}: expected {n} rows, file size {len(buf)}")
    rows = np.frombuffer(buf[4:], dtype="<f4").reshape(n, 5)
    return StrokeSequence(rows.astype(np.float64))


def save_corpus(corpus: Corpus, root: str | Path) -> Path:
    root = Path(root)
    (root / "strokes").mkdir(parents=True, exist_ok=True)
    split_of = {}
    for part in ("train", "val", "test"):
        for i in getattr(corpus.split, part):
            split_of[i] = part
    entries = []
    for s in corpus.samples:
        rel = f"strokes/{s.id}.bin"
        write_strokes(s.vector, root / rel)
        entries.append({"id": s.id, "label": s.label, "text": s.text, "split": split_of.get(s.id), "file": rel})
    manifest = {
        "format_version": CORPUS_FORMAT_VERSION,
        "kind": corpus.kind,
        "class_universe": corpus.class_names,
        "seed": corpus.split.seed,
        "raster": corpus.raster_cfg.to_dict(),
        "meta": corpus.meta,
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return root


def load_corpus(root: str | Path, render: bool = True) -> Corpus:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise DataError(f"{root} is not a corpus directory (no manifest.json)") from e
    if manifest.get("format_version") != CORPUS_FORMAT_VERSION:
        raise VersionMismatch(f"corpus format {manifest.get('format_version')} != {CORPUS_FORMAT_VERSION}")
    cfg = rz.RasterConfig(**manifest["raster"])
    samples, parts = [], {"train": [], "val": [], "test": []}
    for e in manifest["samples"]:
        vec = read_strokes(root / e["file"])
        img = rz.render(vec, cfg) if render else None
        samples.append(LabeledSample(e["id"], vec, img, label=e["label"], text=e["text"]))
        if e["split"] in parts:
            parts[e["split"]].append(e["id"])
    split = DatasetSplit(parts["train"], parts["val"], parts["test"], manifest["class_universe"], manifest["seed"])
    return Corpus(samples, split, cfg, kind=manifest["kind"], meta=manifest["meta"])
