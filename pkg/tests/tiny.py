"""Small corpora and model configs shared by the training tests."""

from sketchssl import raster as rz
from sketchssl.data import SyntheticSketchSpec, make_synthetic_sketches
from sketchssl.models import ConvDecoderConfig, ImageEncoderConfig, ModelConfig, SeqDecoderConfig, SeqEncoderConfig
from sketchssl.pretrain import PretrainConfig

CANVAS = rz.RasterConfig(H=16, W=16)
T_MAX = 24


def tiny_model(seq_family: str = "transformer") -> ModelConfig:
    hidden = 8 if seq_family == "blstm" else 16
    return ModelConfig(
        image_encoder=ImageEncoderConfig(widths=(8, 16)),
        seq_decoder=SeqDecoderConfig(hidden=32),
        seq_encoder=SeqEncoderConfig(family=seq_family, layers=1, hidden=hidden, heads=2, mlp_dim=32,
                                     max_positions=T_MAX + 1),
        conv_decoder=ConvDecoderConfig(start_resolution=(4, 4), upsample_stages=2, base_channels=16),
        d=16,
    )


def tiny_corpus(per_class: int = 4, seed: int = 0, classes=("circle", "square", "triangle", "star", "zigzag")):
    spec = SyntheticSketchSpec(classes=tuple(classes), per_class=per_class, seed=seed, T_max=T_MAX)
    return make_synthetic_sketches(spec, CANVAS)


def tiny_pretrain(task: str, **kw) -> PretrainConfig:
    base = dict(task=task, model=tiny_model(), lr=1e-2, batch_size=8, epochs=3, T_max=T_MAX, seed=0)
    base.update(kw)
    return PretrainConfig(**base)
