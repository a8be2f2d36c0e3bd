"""``sketchssl`` command line.

Every subcommand resolves one JSON run configuration (built-in defaults,
then ``--config``, then flags), creates a run directory named
``<UTC timestamp>-seed<seed>`` under the output root and writes
``config.json``, ``metrics.ndjson`` and ``report.json`` there.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch

from . import raster as rz
from .data import (
    Corpus,
    SyntheticSketchSpec,
    corpus_from_records,
    load_corpus,
    make_synthetic_sketches,
    make_synthetic_words,
    parse_quickdraw_lines,
    read_strokes,
    save_corpus,
)
from .errors import DataError, NumericalError, SketchSSLError, UsageError
from .handwriting import (
    RecognizerConfig,
    RecognizerTrainConfig,
    label_subset,
    run_recognition,
)
from .models import ModelConfig
from .pretrain import PretrainConfig, load_pretrained, pretrain
from .sketch_eval import (
    EncoderView,
    FinetuneConfig,
    embed_table,
    eval_topk,
    extract_features,
    finetune,
    per_class_accuracy,
    random_model,
    retrieval_on_table,
    train_linear_probe,
    train_retrieval_head,
)

log = logging.getLogger("sketchssl")

ENV_OUT = "SKETCHSSL_OUT"

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "deterministic": True,
    "data": {
        "source": "synthetic-sketches",  # | synthetic-words | quickdraw | corpus
        "path": None,
        "classes": ["circle", "square", "triangle", "star", "zigzag"],
        "per_class": 100,
        "jitter": 0.02,
        "alphabet": "lovwznuxct",
        "word_length": [2, 4],
        "count": 500,
        "word_jitter": 0.01,
        "word_height": 32,
        "T_max": 64,
        "rdp_epsilon": 0.01,
        "canvas": 256,
        "raster": {"H": 64, "W": 64, "channels": 1, "stroke_width": 1, "background": 1.0, "ink": 0.0},
    },
    "model": ModelConfig().to_dict(),
    "pretrain": {
        "task": "vectorization",
        "lr": 1e-4,
        "batch_size": 64,
        "epochs": 10,
        "teacher_forcing": True,
        "grad_clip": 1.0,
        "augment": False,
        "coord_error": "squared",
        "keep_epoch_checkpoints": False,
    },
    "downstream": {
        "checkpoint": None,
        "modality": None,
        "depth": "final",
        "fraction": 0.1,
        "freeze_depth": 0,
        "head": "probe",
        "epochs": 30,
        "lr": 1e-3,
        "batch_size": 32,
        "probe_epochs": 100,
        "probe_lr": 1e-2,
        "margin": 0.2,
        "embed_dim": 256,
        "lexicon": None,
        "recognizer": RecognizerConfig().to_dict(),
        "recognizer_train": {"epochs": 60, "lr": 1e-3, "batch_size": 16, "grad_clip": 1.0},
    },
    "output": {"root": None},
}

# sub-trees whose keys are validated by their own dataclass rather than by DEFAULTS
_OPEN_SECTIONS = {("model",), ("downstream", "recognizer")}


def merge_config(base: dict, override: dict, path: tuple[str, ...] = ()) -> dict:
    """Deep-merge ``override`` into a copy of ``base``, rejecting unknown keys."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = ".".join((*path, key))
        if key not in base:
            raise UsageError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and (*path, key) not in _OPEN_SECTIONS:
            if not isinstance(value, dict):
                raise UsageError(f"config key {where!r} must be an object")
            out[key] = merge_config(base[key], value, (*path, key))
        elif isinstance(base[key], dict):
            out[key] = _deep_update(base[key], value)
        else:
            out[key] = value
    return out


def _deep_update(base: dict, value: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in value.items():
        out[k] = _deep_update(out[k], v) if isinstance(out.get(k), dict) and isinstance(v, dict) else v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as e:
            raise UsageError(f"cannot read config {args.config}: {e.strerror}") from e
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as e:
            raise UsageError(f"config {args.config} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = merge_config(cfg, loaded)
    flags: dict[str, Any] = {}

    def put(section: str | None, key: str, value):
        if value is None:
            return
        if section is None:
            flags[key] = value
        else:
            flags.setdefault(section, {})[key] = value

    put(None, "seed", args.seed)
    if args.deterministic:
        put(None, "deterministic", True)
    put("output", "root", args.out)
    for name, section, key in (
        ("task", "pretrain", "task"),
        ("corpus", "data", "path"),
        ("checkpoint", "downstream", "checkpoint"),
        ("modality", "downstream", "modality"),
        ("depth", "downstream", "depth"),
        ("fraction", "downstream", "fraction"),
        ("freeze_depth", "downstream", "freeze_depth"),
        ("head", "downstream", "head"),
        ("lexicon", "downstream", "lexicon"),
        ("epochs", "pretrain", "epochs"),
    ):
        put(section, key, getattr(args, name, None))
    if getattr(args, "corpus", None):
        put("data", "source", "corpus")
    if getattr(args, "no_teacher_forcing", False):
        put("pretrain", "teacher_forcing", False)
    if getattr(args, "coordinate_mode", None):
        flags.setdefault("model", {})["coordinate_mode"] = args.coordinate_mode
    cfg = merge_config(cfg, flags)
    ModelConfig.from_dict(cfg["model"])
    RecognizerConfig.from_dict(cfg["downstream"]["recognizer"])
    return cfg


# ---------------------------------------------------------------- run directories


class Run:
    def __init__(self, cfg: dict, command: str):
        root = Path(cfg["output"]["root"] or os.environ.get(ENV_OUT) or "runs")
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
        base = f"{stamp}-seed{cfg['seed']}"
        path, n = root / base, 1
        while path.exists():
            n += 1
            path = root / f"{base}-{n}"
        path.mkdir(parents=True)
        self.path = path
        self.cfg = cfg
        self.command = command
        (path / "config.json").write_text(json.dumps({"command": command, **cfg}, indent=1, sort_keys=True) + "\n")
        self.metrics = path / "metrics.ndjson"
        self.metrics.touch()

    def log(self, record: dict) -> None:
        with open(self.metrics, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def report(self, payload: dict) -> Path:
        out = self.path / "report.json"
        out.write_text(json.dumps({"command": self.command, **payload}, indent=1, sort_keys=True) + "\n")
        return out


# ---------------------------------------------------------------- helpers


def _raster_cfg(cfg: dict) -> rz.RasterConfig:
    return rz.RasterConfig(**cfg["data"]["raster"])


def build_corpus(cfg: dict) -> Corpus:
    d = cfg["data"]
    src = d["source"]
    if src == "corpus":
        if not d["path"]:
            raise UsageError("data.source 'corpus' needs data.path (or --corpus)")
        return load_corpus(d["path"])
    if src == "synthetic-sketches":
        spec = SyntheticSketchSpec(tuple(d["classes"]), d["per_class"], d["jitter"], d["T_max"], cfg["seed"],
                                   d["rdp_epsilon"])
        return make_synthetic_sketches(spec, _raster_cfg(cfg))
    if src == "synthetic-words":
        return make_synthetic_words(d["alphabet"], tuple(d["word_length"]), d["count"], cfg["seed"],
                                    d["word_jitter"], d["word_height"], d["rdp_epsilon"], d["T_max"])
    if src == "quickdraw":
        if not d["path"]:
            raise UsageError("data.source 'quickdraw' needs data.path")
        try:
            raw = Path(d["path"]).read_bytes()
        except OSError as e:
            raise DataError(f"cannot read {d['path']}: {e.strerror}") from e
        parsed = parse_quickdraw_lines(raw, d["canvas"])
        for m in parsed.malformed:
            log.warning("skipping %s", m)
        return corpus_from_records(parsed.records, _raster_cfg(cfg), cfg["seed"], d["rdp_epsilon"], d["T_max"])
    raise UsageError(f"unknown data.source {src!r}")


def _pretrain_config(cfg: dict) -> PretrainConfig:
    p = cfg["pretrain"]
    return PretrainConfig(model=ModelConfig.from_dict(cfg["model"]), seed=cfg["seed"], T_max=cfg["data"]["T_max"],
                          deterministic=cfg["deterministic"], **p)


def _view(cfg: dict) -> EncoderView:
    """Encoder of the configured checkpoint, or a seeded random model when none is given."""
    ds = cfg["downstream"]
    if ds["checkpoint"]:
        model, pcfg, _ = load_pretrained(ds["checkpoint"])
        return EncoderView(model, pcfg.T_max, ds["modality"])
    task = {"image": "vectorization", "vector": "rasterization"}.get(ds["modality"] or "image")
    if task is None:
        raise UsageError(f"unknown modality {ds['modality']!r}")
    return EncoderView(random_model(task, ModelConfig.from_dict(cfg["model"]), cfg["seed"]), cfg["data"]["T_max"])


def _depth(value):
    if value in (None, "final"):
        return "final"
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"depth must be 'final' or an integer, got {value!r}") from None


def _freeze(value):
    if value == "all":
        return "all"
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"freeze depth must be 'all' or an integer, got {value!r}") from None


def _split_tables(view: EncoderView, corpus: Corpus, depth):
    corpus.ensure_rasters()
    train = extract_features(view, corpus.subset("train"), depth, corpus.raster_cfg)
    test = extract_features(view, corpus.subset("test"), depth, corpus.raster_cfg)
    return train, test


# ---------------------------------------------------------------- subcommands


def cmd_prepare_data(cfg: dict, run: Run, args) -> dict:
    corpus = build_corpus(cfg)
    dest = save_corpus(corpus, run.path / "corpus")
    counts = {p: len(getattr(corpus.split, p)) for p in ("train", "val", "test")}
    run.log({"samples": len(corpus), **counts})
    return {"corpus": str(dest), "kind": corpus.kind, "classes": corpus.class_names, "counts": counts}


def cmd_pretrain(cfg: dict, run: Run, args) -> dict:
    corpus = build_corpus(cfg)
    pcfg = _pretrain_config(cfg)
    result = pretrain(corpus.subset("train"), pcfg, run.path, raster_cfg=corpus.raster_cfg, resume=args.resume)
    return {"task": pcfg.task, "checkpoint": str(result.checkpoint), "final": result.metrics[-1] if result.metrics else None}


def cmd_probe(cfg: dict, run: Run, args) -> dict:
    ds = cfg["downstream"]
    view = _view(cfg)
    corpus = build_corpus(cfg)
    depth = _depth(ds["depth"])
    train, test = _split_tables(view, corpus, depth)
    probe = train_linear_probe(train, ds["probe_epochs"], ds["probe_lr"], n_classes=len(corpus.class_names))
    acc = eval_topk(probe, test, (1, 5))
    per_class = {corpus.class_names[c]: a for c, a in per_class_accuracy(probe, test).items()}
    run.log({"top1": acc[1], "top5": acc[5]})
    return {"modality": view.modality, "depth": depth, "top1": acc[1], "top5": acc[5], "per_class": per_class,
            "checkpoint": ds["checkpoint"]}


def cmd_retrieve(cfg: dict, run: Run, args) -> dict:
    ds = cfg["downstream"]
    view = _view(cfg)
    corpus = build_corpus(cfg)
    train, test = _split_tables(view, corpus, _depth(ds["depth"]))
    head = train_retrieval_head(train, ds["margin"], ds["probe_epochs"], ds["lr"], ds["embed_dim"], ds["batch_size"],
                                cfg["seed"], n_classes=len(corpus.class_names))
    res = retrieval_on_table(embed_table(head, test), test)
    run.log({"acc_at_top1": res.acc_at_top1, "map_at_top10": res.map_at_top10})
    return {"modality": view.modality, "acc_at_top1": res.acc_at_top1, "map_at_top10": res.map_at_top10,
            "checkpoint": ds["checkpoint"]}


def cmd_finetune(cfg: dict, run: Run, args) -> dict:
    ds = cfg["downstream"]
    view = _view(cfg)
    corpus = build_corpus(cfg)
    corpus.ensure_rasters()
    fcfg = FinetuneConfig(ds["fraction"], ds["head"], _freeze(ds["freeze_depth"]), ds["epochs"], ds["lr"],
                          ds["batch_size"], cfg["seed"], ds["margin"], ds["embed_dim"], ds["probe_epochs"],
                          ds["probe_lr"])
    res = finetune(view, corpus.subset("train"), corpus.subset("test"), fcfg, len(corpus.class_names),
                   corpus.raster_cfg)
    run.log({k: v for k, v in res.items() if isinstance(v, float)})
    return {"modality": view.modality, "checkpoint": ds["checkpoint"], **res}


def _read_lexicon(path) -> list[str]:
    try:
        words = Path(path).read_text().split()
    except OSError as e:
        raise DataError(f"cannot read lexicon {path}: {e.strerror}") from e
    return sorted(set(words))


def cmd_recognize(cfg: dict, run: Run, args) -> dict:
    ds = cfg["downstream"]
    if cfg["data"]["source"] == "synthetic-sketches":
        cfg = merge_config(cfg, {"data": {"source": "synthetic-words"}})
    corpus = build_corpus(cfg)
    if corpus.kind != "words":
        raise DataError("recognition needs a word corpus")
    rcfg_d = dict(ds["recognizer"])
    if ds["modality"]:
        rcfg_d["modality"] = ds["modality"]
    rcfg = RecognizerConfig.from_dict(rcfg_d)
    tcfg = RecognizerTrainConfig(seed=cfg["seed"], deterministic=cfg["deterministic"], **ds["recognizer_train"])
    lexicon = _read_lexicon(ds["lexicon"]) if ds["lexicon"] else sorted({s.text for s in corpus.samples})
    train = label_subset(corpus.subset("train"), ds["fraction"], cfg["seed"])
    report = run_recognition(train, corpus.subset("test"), rcfg, tcfg, ds["checkpoint"], lexicon, corpus.raster_cfg)
    run.log({"wra": report["wra"], "wra_lexicon": report["wra_lexicon"]})
    return {"modality": rcfg.modality, "checkpoint": ds["checkpoint"], "fraction": ds["fraction"], **report}


def cmd_render(cfg: dict, run: Run, args) -> dict:
    rcfg = _raster_cfg(cfg)
    out = run.path / "images"
    out.mkdir()
    if args.input:
        src = Path(args.input)
        if not src.is_file():
            raise DataError(f"{src} is not a stroke file")
        items = [(src.stem, read_strokes(src))]
    else:
        corpus = build_corpus(cfg)
        rcfg = corpus.raster_cfg
        items = [(s.id, s.vector) for s in corpus.samples[: args.limit]]
    written = []
    for name, seq in items:
        img = rz.render(seq, rcfg)
        rz.save_pgm(img, out / f"{name}.pgm")
        if args.png:
            rz.save_png(img, out / f"{name}.png")
        written.append(name)
    run.log({"rendered": len(written)})
    return {"images": written, "raster": rcfg.to_dict()}


# ---------------------------------------------------------------- report


_DOWNSTREAM = ("probe", "retrieve", "finetune", "recognize")
_SUMMARY_COLUMNS = ("top1", "top5", "acc_at_top1", "map_at_top10", "wra", "wra_lexicon")


def summarize(run_dirs: Sequence[Path]) -> tuple[dict, str]:
    """Table of the headline numbers of each run; depends only on the run directories' files."""
    rows = []
    for d in sorted(Path(p) for p in run_dirs):
        try:
            cfg = json.loads((d / "config.json").read_text())
            rep = json.loads((d / "report.json").read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"{d} is not a complete run directory: {e}") from e
        row = {
            "run": d.name,
            "status": rep.get("status"),
            "command": rep.get("command", cfg.get("command")),
            "seed": cfg.get("seed"),
            "task": cfg.get("pretrain", {}).get("task") if rep.get("command") == "pretrain" else None,
            "modality": rep.get("modality"),
            "init": ("pretrained" if rep.get("checkpoint") else "random") if rep.get("command") in _DOWNSTREAM else None,
        }
        if rep.get("command") == "pretrain" and rep.get("final"):
            row["loss"] = rep["final"].get("loss")
        for k in _SUMMARY_COLUMNS:
            if isinstance(rep.get(k), (int, float)):
                row[k] = rep[k]
        rows.append(row)
    cols = ["run", "status", "command", "seed", "task", "modality", "init", "loss", *_SUMMARY_COLUMNS]
    cols = [c for c in cols if any(r.get(c) is not None for r in rows)]

    def cell(v):
        if v is None:
            return ""
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(cell(r.get(c)) for c in cols) + " |" for r in rows]
    return {"runs": rows}, "# Run summary\n\n" + "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    if not args.runs:
        raise UsageError("report needs at least one run directory")
    data, md = summarize(args.runs)
    dest = Path(args.out) if args.out else Path(args.runs[0])
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "summary.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
    (dest / "summary.md").write_text(md)
    print(dest / "summary.md")
    return 0


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./runs)")
    p.add_argument("--deterministic", action="store_true", help="force deterministic kernels")
    p.add_argument("--corpus", help="corpus directory written by prepare-data")


def _downstream(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="pretext checkpoint (omit for random initialisation)")
    p.add_argument("--modality", choices=["image", "vector"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sketchssl", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("prepare-data", help="build and save a corpus")
    _common(p)

    p = sub.add_parser("pretrain", help="train a pretext task")
    _common(p)
    p.add_argument("--task", choices=["vectorization", "rasterization"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-teacher-forcing", action="store_true")
    p.add_argument("--coordinate-mode", choices=["absolute", "offset"])
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("probe", help="linear probe on frozen features")
    _common(p)
    _downstream(p)
    p.add_argument("--depth", help="'final' or an encoder depth index")

    p = sub.add_parser("retrieve", help="retrieval head on frozen features")
    _common(p)
    _downstream(p)
    p.add_argument("--depth")

    p = sub.add_parser("finetune", help="fine-tune on a label fraction")
    _common(p)
    _downstream(p)
    p.add_argument("--fraction", type=float)
    p.add_argument("--freeze-depth")
    p.add_argument("--head", choices=["probe", "retrieval"])

    p = sub.add_parser("recognize", help="train and evaluate a word recognizer")
    _common(p)
    _downstream(p)
    p.add_argument("--fraction", type=float)
    p.add_argument("--lexicon", help="file of lexicon words, whitespace separated")

    p = sub.add_parser("render", help="rasterize stroke files or a corpus to PGM/PNG")
    _common(p)
    p.add_argument("--input", help="a single stroke file (.bin)")
    p.add_argument("--limit", type=int, default=16)
    p.add_argument("--png", action="store_true", help="also write PNG files")

    p = sub.add_parser("report", help="summarize run directories")
    p.add_argument("runs", nargs="*")
    p.add_argument("--out", help="destination directory (default: the first run)")
    return parser


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "retrieve": cmd_retrieve,
    "finetune": cmd_finetune,
    "recognize": cmd_recognize,
    "render": cmd_render,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
        if args.command == "report":
            return cmd_report(args)
        cfg = resolve_config(args)
        if cfg["deterministic"]:
            torch.use_deterministic_algorithms(True)
        torch.manual_seed(cfg["seed"])
        np.random.seed(cfg["seed"])
        run = Run(cfg, args.command)
        try:
            payload = COMMANDS[args.command](cfg, run, args)
        except SketchSSLError as e:
            run.report({"status": "failed", "error": f"{type(e).__name__}: {e}"})
            raise
        run.report({"status": "ok", **payload})
        print(run.path)
        return 0
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except SketchSSLError as e:  # pragma: no cover - every subclass is mapped above
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
