"""Encoders and decoders for the two translation directions.

* image -> sequence: :class:`ImageEncoder` (or :class:`WordImageEncoder`)
  followed by the recurrent :class:`SequenceDecoder`.
* sequence -> image: :class:`RNNSequenceEncoder`, :class:`BLSTMSequenceEncoder`
  or :class:`TransformerSequenceEncoder` followed by :class:`ConvDecoder`.

Every component is a ``torch.nn.Module``; tensors are batch-first. Images are
``(N, C, H, W)``, stroke sequences ``(N, T, 5)`` with a ``(N, T)`` 0/1 mask.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any

import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .errors import EmptyMask, MissingTargets, SequenceTooLong, ShapeMismatch, UsageError

PEN_DOWN, PEN_UP, PEN_END = 0, 1, 2


# ---------------------------------------------------------------- configuration


@dataclass
class ImageEncoderConfig:
    family: str = "residual-conv"  # or "word-conv-blstm"
    in_channels: int = 1
    widths: tuple[int, ...] = (16, 32, 64, 128)
    pooling: str = "max"  # or "avg"
    rnn_hidden: int = 64  # word-conv-blstm only
    rnn_layers: int = 2
    invert_input: bool = True  # feed 1 - x, so blank paper is zero and ink is signal


@dataclass
class SeqDecoderConfig:
    cell: str = "gru"  # or "lstm"
    hidden: int = 128


@dataclass
class SeqEncoderConfig:
    family: str = "transformer"  # "lstm" | "gru" | "blstm" | "transformer"
    layers: int = 2
    hidden: int = 128
    heads: int = 4
    mlp_dim: int = 256
    max_positions: int = 65


@dataclass
class ConvDecoderConfig:
    start_resolution: tuple[int, int] = (4, 4)
    upsample_stages: int = 4
    base_channels: int = 64
    min_channels: int = 4
    out_channels: int = 1


@dataclass
class ModelConfig:
    image_encoder: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    seq_decoder: SeqDecoderConfig = field(default_factory=SeqDecoderConfig)
    seq_encoder: SeqEncoderConfig = field(default_factory=SeqEncoderConfig)
    conv_decoder: ConvDecoderConfig = field(default_factory=ConvDecoderConfig)
    coordinate_mode: str = "absolute"  # or "offset"
    d: int = 128

    def image_latent_dim(self) -> int:
        ie = self.image_encoder
        return 2 * ie.rnn_hidden if ie.family == "word-conv-blstm" else ie.widths[-1]

    def seq_latent_dim(self) -> int:
        se = self.seq_encoder
        return 2 * se.hidden if se.family == "blstm" else se.hidden

    def validate(self, task: str) -> None:
        if self.coordinate_mode not in ("absolute", "offset"):
            raise UsageError(f"unknown coordinate_mode {self.coordinate_mode!r}")
        if task == "vectorization":
            if self.image_encoder.family not in ("residual-conv", "word-conv-blstm"):
                raise UsageError(f"unknown image encoder family {self.image_encoder.family!r}")
            if self.image_encoder.pooling not in ("max", "avg"):
                raise UsageError(f"unknown pooling {self.image_encoder.pooling!r}")
            if self.seq_decoder.cell not in ("gru", "lstm"):
                raise UsageError(f"unknown decoder cell {self.seq_decoder.cell!r}")
            if self.image_latent_dim() != self.d:
                raise UsageError(f"image encoder output {self.image_latent_dim()} != d={self.d}")
        elif task == "rasterization":
            if self.seq_encoder.family not in ("lstm", "gru", "blstm", "transformer"):
                raise UsageError(f"unknown sequence encoder family {self.seq_encoder.family!r}")
            if self.seq_latent_dim() != self.d:
                raise UsageError(f"sequence encoder output {self.seq_latent_dim()} != d={self.d}")
        else:
            raise UsageError(f"unknown task {task!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict | None) -> "ModelConfig":
        return _build(cls, d or {})


def _build(cls, data: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value)
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


# ---------------------------------------------------------------- coordinates


def to_model_coords(seqs: torch.Tensor, mode: str) -> torch.Tensor:
    """Absolute rows -> the representation the network sees.

    In offset mode each row holds the displacement from the previous point;
    the first row is measured from the start token at the origin.
    """
    if mode == "absolute":
        return seqs
    prev = torch.cat([torch.zeros_like(seqs[:, :1, :2]), seqs[:, :-1, :2]], dim=1)
    return torch.cat([seqs[:, :, :2] - prev, seqs[:, :, 2:]], dim=2)


def from_model_coords(seqs: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "absolute":
        return seqs
    return torch.cat([torch.cumsum(seqs[:, :, :2], dim=1), seqs[:, :, 2:]], dim=2)


def _lengths(mask: torch.Tensor) -> torch.Tensor:
    lengths = mask.sum(dim=1).round().long()
    if torch.any(lengths < 1):
        raise EmptyMask("every sequence needs at least one unmasked step")
    return lengths


# ---------------------------------------------------------------- image side


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with a strided 1x1 projection shortcut."""

    def __init__(self, cin: int, cout: int, stride=2):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.shortcut = nn.Conv2d(cin, cout, 1, stride=stride)

    def forward(self, x):
        y = self.conv2(F.relu(self.conv1(x)))
        return F.relu(y + self.shortcut(x))


def global_pool(fmap: torch.Tensor, how: str = "max") -> torch.Tensor:
    if how == "max":
        return torch.amax(fmap, dim=(2, 3))
    return fmap.mean(dim=(2, 3))


class ImageEncoder(nn.Module):
    """Stack of stride-2 residual blocks; the latent is the pooled last block."""

    def __init__(self, cfg: ImageEncoderConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.in_channels, *cfg.widths]
        self.blocks = nn.ModuleList(ResidualBlock(a, b) for a, b in zip(chans[:-1], chans[1:]))

    @property
    def depth(self) -> int:
        return len(self.blocks)

    @property
    def out_dim(self) -> int:
        return self.cfg.widths[-1]

    def _prepare(self, x):
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeMismatch(f"expected (N, {self.cfg.in_channels}, H, W) images, got {tuple(x.shape)}")
        return 1.0 - x if self.cfg.invert_input else x

    def forward(self, x):
        """Return ``(feature_map, latent)``."""
        x = self._prepare(x)
        for b in self.blocks:
            x = b(x)
        return x, global_pool(x, self.cfg.pooling)

    def block_features(self, x) -> list[torch.Tensor]:
        """Globally pooled output of every block, shallowest first."""
        x = self._prepare(x)
        out = []
        for b in self.blocks:
            x = b(x)
            out.append(global_pool(x, self.cfg.pooling))
        return out

    def depth_groups(self) -> list[list[nn.Parameter]]:
        return [list(b.parameters()) for b in self.blocks]


class WordImageEncoder(nn.Module):
    """Residual conv backbone, height collapse, then a bidirectional LSTM.

    Blocks halve height and width, so the feature sequence has ``W / 2**blocks``
    steps. The latent concatenates the final forward and backward states of
    the top recurrent layer.
    """

    def __init__(self, cfg: ImageEncoderConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.in_channels, *cfg.widths]
        self.blocks = nn.ModuleList(ResidualBlock(a, b) for a, b in zip(chans[:-1], chans[1:]))
        self.rnn = nn.LSTM(chans[-1], cfg.rnn_hidden, num_layers=cfg.rnn_layers, batch_first=True, bidirectional=True)

    @property
    def stride(self) -> int:
        return 2 ** len(self.blocks)

    @property
    def depth(self) -> int:
        return len(self.blocks) + 1

    @property
    def out_dim(self) -> int:
        return 2 * self.cfg.rnn_hidden

    _prepare = ImageEncoder._prepare

    def conv_features(self, x):
        x = self._prepare(x)
        for b in self.blocks:
            x = b(x)
        return x

    def forward(self, x):
        """Return ``(feature_sequence (N, W/stride, 2h), latent (N, 2h))``."""
        fmap = self.conv_features(x)
        seq = fmap.mean(dim=2).transpose(1, 2)
        out, (h_n, _) = self.rnn(seq)
        return out, torch.cat([h_n[-2], h_n[-1]], dim=1)

    def block_features(self, x) -> list[torch.Tensor]:
        x = self._prepare(x)
        feats = []
        for b in self.blocks:
            x = b(x)
            feats.append(global_pool(x, self.cfg.pooling))
        seq = x.mean(dim=2).transpose(1, 2)
        _, (h_n, _) = self.rnn(seq)
        feats.append(torch.cat([h_n[-2], h_n[-1]], dim=1))
        return feats

    def depth_groups(self):
        return [list(b.parameters()) for b in self.blocks] + [list(self.rnn.parameters())]


def build_image_encoder(cfg: ImageEncoderConfig) -> nn.Module:
    if cfg.family == "word-conv-blstm":
        return WordImageEncoder(cfg)
    return ImageEncoder(cfg)


class SequenceDecoder(nn.Module):
    """Recurrent decoder emitting one five-element prediction per step.

    ``init`` maps the latent to the initial hidden state; each step consumes
    ``[latent, previous point]``; ``readout`` maps the hidden state to
    ``(x, y, pen logits x3)``.
    """

    def __init__(self, d: int, cfg: SeqDecoderConfig):
        super().__init__()
        self.d = d
        self.cfg = cfg
        self.init = nn.Linear(d, cfg.hidden)
        rnn_cls = nn.GRU if cfg.cell == "gru" else nn.LSTM
        self.rnn = rnn_cls(d + 5, cfg.hidden, batch_first=True)
        self.readout = nn.Linear(cfg.hidden, 5)

    def start_token(self, n: int, like: torch.Tensor) -> torch.Tensor:
        tok = like.new_zeros(n, 5)
        tok[:, 2 + PEN_DOWN] = 1.0
        return tok

    def init_state(self, latent: torch.Tensor):
        if latent.dim() != 2 or latent.shape[1] != self.d:
            raise ShapeMismatch(f"expected (N, {self.d}) latent, got {tuple(latent.shape)}")
        h0 = self.init(latent).unsqueeze(0)
        if self.cfg.cell == "lstm":
            return (h0, torch.zeros_like(h0))
        return h0

    def step(self, state, latent, prev_point):
        """One recurrent update; returns ``(state, prediction (N, 5))``."""
        if prev_point.shape[-1] != 5:
            raise ShapeMismatch("previous point must have 5 entries")
        inp = torch.cat([latent, prev_point], dim=1).unsqueeze(1)
        out, state = self.rnn(inp, state)
        return state, self.readout(out[:, 0])

    def forward(self, latent, targets=None, steps: int | None = None, teacher_forcing: bool = True):
        """Decode ``steps`` points (``targets.shape[1]`` when given).

        Teacher forcing feeds ``targets[:, t-1]`` at step ``t``; otherwise the
        previous prediction is fed back with its pen state hardened to one-hot.
        Returns ``(N, steps, 5)`` predictions.
        """
        if teacher_forcing:
            if targets is None:
                raise MissingTargets("teacher forcing needs targets")
            n, t = targets.shape[:2]
            prev = torch.cat([self.start_token(n, latent).unsqueeze(1), targets[:, :-1]], dim=1)
            inp = torch.cat([latent.unsqueeze(1).expand(n, t, self.d), prev], dim=2)
            out, _ = self.rnn(inp, self.init_state(latent))
            return self.readout(out)
        if steps is None:
            if targets is None:
                raise MissingTargets("need targets or an explicit step count")
            steps = targets.shape[1]
        preds, _ = self.generate(latent, steps, stop_at_end=False)
        return preds

    def generate(self, latent, max_steps: int, stop_at_end: bool = True):
        """Autoregressive decoding.

        Returns ``(predictions (N, T', 5), lengths)``; a sample's length is the
        index of its first end-of-drawing argmax plus one (or ``max_steps``).
        Decoding halts once every sample has ended when ``stop_at_end``.
        """
        n = latent.shape[0]
        state = self.init_state(latent)
        prev = self.start_token(n, latent)
        preds = []
        lengths = torch.full((n,), max_steps, dtype=torch.long)
        done = torch.zeros(n, dtype=torch.bool)
        for t in range(max_steps):
            state, p = self.step(state, latent, prev)
            preds.append(p)
            pen = torch.argmax(p[:, 2:], dim=1)
            ended = (pen == PEN_END) & ~done
            lengths[ended] = t + 1
            done |= ended
            prev = torch.cat([p[:, :2], F.one_hot(pen, 3).to(p.dtype)], dim=1)
            if stop_at_end and bool(done.all()):
                break
        return torch.stack(preds, dim=1), lengths


# ---------------------------------------------------------------- sequence side


class RNNSequenceEncoder(nn.Module):
    """Unidirectional LSTM/GRU; the latent is the top-layer state at the last real step."""

    def __init__(self, cfg: SeqEncoderConfig):
        super().__init__()
        self.cfg = cfg
        rnn_cls = nn.GRU if cfg.family == "gru" else nn.LSTM
        self.rnn = rnn_cls(5, cfg.hidden, num_layers=cfg.layers, batch_first=True)

    @property
    def depth(self) -> int:
        return self.cfg.layers

    @property
    def out_dim(self) -> int:
        return self.cfg.hidden

    def _final_states(self, seqs, mask):
        if seqs.dim() != 3 or seqs.shape[2] != 5:
            raise ShapeMismatch(f"expected (N, T, 5) sequences, got {tuple(seqs.shape)}")
        lengths = _lengths(mask)
        packed = pack_padded_sequence(seqs, lengths.cpu(), batch_first=True, enforce_sorted=False)
        _, h = self.rnn(packed)
        return h[0] if isinstance(h, tuple) else h

    def forward(self, seqs, mask):
        return self._final_states(seqs, mask)[-1]

    def block_features(self, seqs, mask):
        return list(self._final_states(seqs, mask))

    def depth_groups(self):
        return [[p for n, p in self.rnn.named_parameters() if n.endswith(f"_l{i}")] for i in range(self.cfg.layers)]


class BLSTMSequenceEncoder(nn.Module):
    """Stacked bidirectional LSTM over five-element rows.

    ``encode`` returns per-step features ``(N, T, 2h)`` (zeros at padded
    steps) and the latent: top-layer forward state at the last real step
    concatenated with the backward state at the first step.
    """

    def __init__(self, cfg: SeqEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.rnn = nn.LSTM(5, cfg.hidden, num_layers=cfg.layers, batch_first=True, bidirectional=True)

    @property
    def depth(self) -> int:
        return self.cfg.layers

    @property
    def out_dim(self) -> int:
        return 2 * self.cfg.hidden

    def encode(self, seqs, mask):
        if seqs.dim() != 3 or seqs.shape[2] != 5:
            raise ShapeMismatch(f"expected (N, T, 5) sequences, got {tuple(seqs.shape)}")
        lengths = _lengths(mask)
        packed = pack_padded_sequence(seqs, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, (h_n, _) = self.rnn(packed)
        feats, _ = pad_packed_sequence(out, batch_first=True, total_length=seqs.shape[1])
        return feats, h_n

    def forward(self, seqs, mask):
        _, h_n = self.encode(seqs, mask)
        return torch.cat([h_n[-2], h_n[-1]], dim=1)

    def block_features(self, seqs, mask):
        _, h_n = self.encode(seqs, mask)
        return [torch.cat([h_n[2 * i], h_n[2 * i + 1]], dim=1) for i in range(self.cfg.layers)]

    def depth_groups(self):
        return [[p for n, p in self.rnn.named_parameters() if f"_l{i}" in n and n.split(f"_l{i}")[1] in ("", "_reverse")]
                for i in range(self.cfg.layers)]


class TransformerSequenceEncoder(nn.Module):
    """Linear row embedding, prepended class token, learned positions, self-attention.

    The latent is the class token's output. Padded rows are excluded from
    attention through the key padding mask.
    """

    def __init__(self, cfg: SeqEncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(5, cfg.hidden)
        self.cls = nn.Parameter(torch.zeros(cfg.hidden))
        self.pos = nn.Parameter(torch.zeros(cfg.max_positions, cfg.hidden))
        nn.init.normal_(self.cls, std=0.02)
        nn.init.normal_(self.pos, std=0.02)
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(cfg.hidden, cfg.heads, cfg.mlp_dim, dropout=0.0, batch_first=True)
            for _ in range(cfg.layers)
        )

    @property
    def depth(self) -> int:
        return self.cfg.layers

    @property
    def out_dim(self) -> int:
        return self.cfg.hidden

    def _run(self, seqs, mask):
        if seqs.dim() != 3 or seqs.shape[2] != 5:
            raise ShapeMismatch(f"expected (N, T, 5) sequences, got {tuple(seqs.shape)}")
        n, t, _ = seqs.shape
        if t + 1 > self.cfg.max_positions:
            raise SequenceTooLong(f"{t} steps + class token exceed {self.cfg.max_positions} positions")
        _lengths(mask)
        x = torch.cat([self.cls.expand(n, 1, -1), self.embed(seqs)], dim=1) + self.pos[: t + 1]
        pad = torch.cat([torch.zeros(n, 1, dtype=torch.bool, device=seqs.device), mask <= 0], dim=1)
        outs = []
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=pad)
            outs.append(x[:, 0])
        return outs

    def forward(self, seqs, mask):
        return self._run(seqs, mask)[-1]

    def block_features(self, seqs, mask):
        return self._run(seqs, mask)

    def depth_groups(self):
        groups = [list(l.parameters()) for l in self.layers]
        groups[0] = [self.embed.weight, self.embed.bias, self.cls, self.pos] + groups[0]
        return groups


def build_sequence_encoder(cfg: SeqEncoderConfig) -> nn.Module:
    if cfg.family == "transformer":
        return TransformerSequenceEncoder(cfg)
    if cfg.family == "blstm":
        return BLSTMSequenceEncoder(cfg)
    return RNNSequenceEncoder(cfg)


def decoder_channels(cfg: ConvDecoderConfig) -> list[int]:
    chans = [cfg.base_channels]
    for _ in range(cfg.upsample_stages):
        chans.append(max(chans[-1] // 2, cfg.min_channels))
    return chans


class ConvDecoder(nn.Module):
    """Fully connected projection to a small grid, then transposed convolutions.

    Each stage doubles both spatial sizes; a final 3x3 convolution and a
    logistic squash produce intensities in [0, 1].
    """

    def __init__(self, d: int, cfg: ConvDecoderConfig):
        super().__init__()
        self.d = d
        self.cfg = cfg
        sh, sw = cfg.start_resolution
        chans = decoder_channels(cfg)
        self.fc = nn.Linear(d, chans[0] * sh * sw)
        self.up = nn.ModuleList(nn.ConvTranspose2d(a, b, 4, stride=2, padding=1) for a, b in zip(chans[:-1], chans[1:]))
        self.norms = nn.ModuleList(nn.BatchNorm2d(b) for b in chans[1:])
        self.out = nn.Conv2d(chans[-1], cfg.out_channels, 3, padding=1)

    @property
    def output_size(self) -> tuple[int, int]:
        sh, sw = self.cfg.start_resolution
        k = 2**self.cfg.upsample_stages
        return sh * k, sw * k

    def forward(self, latent):
        if latent.dim() != 2 or latent.shape[1] != self.d:
            raise ShapeMismatch(f"expected (N, {self.d}) latent, got {tuple(latent.shape)}")
        sh, sw = self.cfg.start_resolution
        x = F.relu(self.fc(latent)).view(latent.shape[0], -1, sh, sw)
        for conv, norm in zip(self.up, self.norms):
            x = F.relu(norm(conv(x)))
        return torch.sigmoid(self.out(x))


# ---------------------------------------------------------------- translation models


class VectorizationModel(nn.Module):
    """Image encoder + sequence decoder."""

    task = "vectorization"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate("vectorization")
        self.cfg = cfg
        self.encoder = build_image_encoder(cfg.image_encoder)
        self.decoder = SequenceDecoder(cfg.d, cfg.seq_decoder)

    def encode(self, images):
        _, latent = self.encoder(images)
        return latent

    def forward(self, images, targets, teacher_forcing: bool = True):
        """Predictions ``(N, T, 5)`` in the configured coordinate mode."""
        latent = self.encode(images)
        tgt = to_model_coords(targets, self.cfg.coordinate_mode)
        return self.decoder(latent, tgt, teacher_forcing=teacher_forcing)

    def model_targets(self, targets):
        return to_model_coords(targets, self.cfg.coordinate_mode)


class RasterizationModel(nn.Module):
    """Sequence encoder + convolutional decoder."""

    task = "rasterization"

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate("rasterization")
        self.cfg = cfg
        self.encoder = build_sequence_encoder(cfg.seq_encoder)
        self.decoder = ConvDecoder(cfg.d, cfg.conv_decoder)

    def encode(self, seqs, mask):
        return self.encoder(to_model_coords(seqs, self.cfg.coordinate_mode), mask)

    def forward(self, seqs, mask):
        return self.decoder(self.encode(seqs, mask))


def build_model(task: str, cfg: ModelConfig) -> nn.Module:
    if task == "vectorization":
        return VectorizationModel(cfg)
    if task == "rasterization":
        return RasterizationModel(cfg)
    raise UsageError(f"unknown task {task!r}")


# ---------------------------------------------------------------- parameter counts


def expected_param_count(component: str, cfg: ModelConfig) -> int:
    """Closed-form parameter counts.

    conv k*k (a->b): k*k*a*b + b;  linear (a->b): a*b + b
    residual block (a->b): 9ab + b + 9b^2 + b + ab + b
    GRU layer (i->h): 3(ih + h^2 + 2h);  LSTM layer: 4(ih + h^2 + 2h)
    transformer layer (D, M): 4D^2 + 4D + 2DM + M + D + 4D
    """

    def res(a, b):
        return 9 * a * b + b + 9 * b * b + b + a * b + b

    def rnn_layer(i, h, gates):
        return gates * (i * h + h * h + 2 * h)

    ie, sd, se, cd = cfg.image_encoder, cfg.seq_decoder, cfg.seq_encoder, cfg.conv_decoder
    if component == "image_encoder":
        chans = [ie.in_channels, *ie.widths]
        n = sum(res(a, b) for a, b in zip(chans[:-1], chans[1:]))
        if ie.family == "word-conv-blstm":
            h = ie.rnn_hidden
            n += 2 * rnn_layer(chans[-1], h, 4)
            n += (ie.rnn_layers - 1) * 2 * rnn_layer(2 * h, h, 4)
        return n
    if component == "seq_decoder":
        h = sd.hidden
        gates = 3 if sd.cell == "gru" else 4
        return cfg.d * h + h + rnn_layer(cfg.d + 5, h, gates) + 5 * h + 5
    if component == "seq_encoder":
        h = se.hidden
        if se.family in ("gru", "lstm"):
            gates = 3 if se.family == "gru" else 4
            return rnn_layer(5, h, gates) + (se.layers - 1) * rnn_layer(h, h, gates)
        if se.family == "blstm":
            return 2 * rnn_layer(5, h, 4) + (se.layers - 1) * 2 * rnn_layer(2 * h, h, 4)
        D, M = h, se.mlp_dim
        per_layer = 4 * D * D + 4 * D + 2 * D * M + M + D + 4 * D
        return 5 * D + D + D + se.max_positions * D + se.layers * per_layer
    if component == "conv_decoder":
        chans = decoder_channels(cd)
        sh, sw = cd.start_resolution
        n = cfg.d * chans[0] * sh * sw + chans[0] * sh * sw
        n += sum(16 * a * b + b + 2 * b for a, b in zip(chans[:-1], chans[1:]))  # + batch-norm affine
        return n + 9 * chans[-1] * cd.out_channels + cd.out_channels
    raise ValueError(f"unknown component {component!r}")


def param_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
