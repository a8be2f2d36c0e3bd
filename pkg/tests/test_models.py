import numpy as np
import pytest
import torch

from components import cases, check_parameter_gradients
from sketchssl.errors import EmptyMask, MissingTargets, SequenceTooLong, ShapeMismatch, UsageError
from sketchssl.models import (
    BLSTMSequenceEncoder,
    ConvDecoder,
    ConvDecoderConfig,
    ImageEncoder,
    ImageEncoderConfig,
    ModelConfig,
    RNNSequenceEncoder,
    SeqDecoderConfig,
    SeqEncoderConfig,
    SequenceDecoder,
    TransformerSequenceEncoder,
    WordImageEncoder,
    build_image_encoder,
    build_model,
    build_sequence_encoder,
    decoder_channels,
    expected_param_count,
    from_model_coords,
    global_pool,
    param_count,
    to_model_coords,
)
from sketchssl.strokes import from_polylines, pad_or_truncate

f64 = torch.float64


def batch_of(seqs, t_max):
    arrs, masks = zip(*(pad_or_truncate(s, t_max) for s in seqs))
    return torch.from_numpy(np.stack(arrs)).float(), torch.from_numpy(np.stack(masks)).float()


def some_sequences(n=3, seed=0):
    g = torch.Generator().manual_seed(seed)
    out = []
    for i in range(n):
        k = 3 + i * 2
        pts = torch.rand(k, 2, generator=g).tolist()
        out.append(from_polylines([pts[: k // 2 + 1], pts[k // 2 + 1:]] if k > 3 else [pts]))
    return out


class TestImageEncoder:
    def test_shapes(self):
        enc = ImageEncoder(ImageEncoderConfig(widths=(4, 8, 16)))
        fmap, z = enc(torch.rand(2, 1, 32, 24))
        assert fmap.shape == (2, 16, 4, 3) and z.shape == (2, 16)
        assert [f.shape[1] for f in enc.block_features(torch.rand(1, 1, 16, 16))] == [4, 8, 16]

    def test_constant_channel_latent(self):
        fmap = torch.full((1, 3, 5, 5), 2.5)
        assert global_pool(fmap, "max").tolist() == [[2.5] * 3]
        assert global_pool(fmap, "avg").tolist() == [[2.5] * 3]

    def test_max_pool_ignores_non_maximal_positions(self):
        fmap = torch.rand(1, 2, 4, 4)
        fmap[0, :, 1, 1] = 5.0
        before = global_pool(fmap, "max")
        fmap[0, :, 3, 3] = 0.0
        assert torch.equal(before, global_pool(fmap, "max"))

    def test_wrong_channels(self):
        with pytest.raises(ShapeMismatch):
            ImageEncoder(ImageEncoderConfig(widths=(2,)))(torch.rand(1, 3, 8, 8))


class TestWordEncoder:
    def test_sequence_length(self):
        enc = WordImageEncoder(ImageEncoderConfig(family="word-conv-blstm", widths=(4, 8), rnn_hidden=5))
        seq, z = enc(torch.rand(2, 1, 16, 40))
        assert seq.shape == (2, 10, 10) and z.shape == (2, 10) and enc.stride == 4


class TestSequenceDecoder:
    def test_h0_zero_weights_is_bias(self):
        dec = SequenceDecoder(4, SeqDecoderConfig(hidden=4))
        with torch.no_grad():
            dec.init.weight.zero_()
            dec.init.bias.copy_(torch.tensor([1.0, -2.0, 3.0, 0.5]))
        h0 = dec.init_state(torch.randn(3, 4))
        assert torch.equal(h0[0], dec.init.bias.expand(3, 4))

    def test_h0_identity_is_latent(self):
        dec = SequenceDecoder(4, SeqDecoderConfig(hidden=4))
        with torch.no_grad():
            dec.init.weight.copy_(torch.eye(4))
            dec.init.bias.zero_()
        z = torch.randn(2, 4)
        assert torch.equal(dec.init_state(z)[0], z)

    def test_h0_linear(self):
        dec = SequenceDecoder(3, SeqDecoderConfig(hidden=6)).double()
        with torch.no_grad():
            dec.init.bias.zero_()
        a, b = torch.randn(1, 3, dtype=f64), torch.randn(1, 3, dtype=f64)
        torch.testing.assert_close(dec.init_state(2 * a + b), 2 * dec.init_state(a) + dec.init_state(b))

    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_readout_zero_weights(self, cell):
        dec = SequenceDecoder(4, SeqDecoderConfig(cell=cell, hidden=6))
        with torch.no_grad():
            dec.readout.weight.zero_()
            dec.readout.bias.copy_(torch.arange(5.0))
        tgt = torch.rand(2, 1, 5)
        out = dec(torch.randn(2, 4), tgt)
        assert out.shape == (2, 1, 5) and torch.equal(out[:, 0], torch.arange(5.0).expand(2, 5))

    def test_teacher_forcing_causal(self):
        dec = SequenceDecoder(4, SeqDecoderConfig(hidden=6))
        z, tgt = torch.randn(2, 4), torch.rand(2, 6, 5)
        base = dec(z, tgt)
        tgt2 = tgt.clone()
        tgt2[:, 3] = 9.0
        moved = dec(z, tgt2)
        assert torch.equal(base[:, :4], moved[:, :4]) and not torch.equal(base[:, 4:], moved[:, 4:])

    def test_missing_targets(self):
        dec = SequenceDecoder(4, SeqDecoderConfig(hidden=6))
        with pytest.raises(MissingTargets):
            dec(torch.randn(1, 4))
        with pytest.raises(MissingTargets):
            dec(torch.randn(1, 4), teacher_forcing=False)

    def test_generate_stops_at_end(self):
        class Scripted(SequenceDecoder):
            def step(self, state, latent, prev_point):
                self.calls += 1
                pen = 2 if self.calls == 3 else 0
                p = torch.zeros(latent.shape[0], 5)
                p[:, 2 + pen] = 1.0
                return state, p

        dec = Scripted(4, SeqDecoderConfig(hidden=4))
        dec.calls = 0
        preds, lengths = dec.generate(torch.zeros(1, 4), max_steps=10)
        assert preds.shape[1] == 3 and lengths.tolist() == [3]

    def test_free_running_feeds_hardened_pen(self):
        dec = SequenceDecoder(4, SeqDecoderConfig(hidden=6))
        z = torch.randn(2, 4)
        preds, _ = dec.generate(z, 4, stop_at_end=False)
        assert torch.equal(dec(z, steps=4, teacher_forcing=False), preds)


ENCODERS = {
    "lstm": lambda: RNNSequenceEncoder(SeqEncoderConfig(family="lstm", layers=2, hidden=8)),
    "gru": lambda: RNNSequenceEncoder(SeqEncoderConfig(family="gru", layers=2, hidden=8)),
    "blstm": lambda: BLSTMSequenceEncoder(SeqEncoderConfig(family="blstm", layers=2, hidden=4)),
    "transformer": lambda: TransformerSequenceEncoder(
        SeqEncoderConfig(layers=2, hidden=8, heads=2, mlp_dim=16, max_positions=21)),
}


@pytest.mark.parametrize("family", list(ENCODERS))
class TestSequenceEncoders:
    def test_padding_invariance(self, family):
        enc = ENCODERS[family]().eval()
        seqs = some_sequences()
        a = enc(*batch_of(seqs, 10))
        b = enc(*batch_of(seqs, 20))
        torch.testing.assert_close(a, b, atol=1e-5, rtol=0)

    def test_padded_rows_ignored(self, family):
        enc = ENCODERS[family]().eval()
        x, m = batch_of(some_sequences(), 12)
        base = enc(x, m)
        x2 = x.clone()
        x2[m == 0] = torch.rand(int((m == 0).sum()), 5) * 7
        torch.testing.assert_close(enc(x2, m), base, atol=1e-5, rtol=0)

    def test_block_features(self, family):
        enc = ENCODERS[family]()
        feats = enc.block_features(*batch_of(some_sequences(), 10))
        assert len(feats) == enc.depth == len(enc.depth_groups())
        assert feats[-1].shape == (3, enc.out_dim)

    def test_empty_mask(self, family):
        x, m = batch_of(some_sequences(2), 10)
        m[1] = 0
        with pytest.raises(EmptyMask):
            ENCODERS[family]()(x, m)


def test_transformer_too_long():
    enc = ENCODERS["transformer"]()
    with pytest.raises(SequenceTooLong):
        enc(*batch_of(some_sequences(1), 21))


class TestConvDecoder:
    def test_output_size(self):
        dec = ConvDecoder(8, ConvDecoderConfig())
        with torch.no_grad():
            out = dec(torch.randn(2, 8))
        assert out.shape == (2, 1, 64, 64) and dec.output_size == (64, 64)
        assert float(out.min()) >= 0 and float(out.max()) <= 1

    def test_zero_params_half(self):
        dec = ConvDecoder(4, ConvDecoderConfig(upsample_stages=2, base_channels=8))
        with torch.no_grad():
            for p in dec.parameters():
                p.zero_()
        assert torch.all(dec(torch.randn(3, 4)) == 0.5)

    def test_channels_floor(self):
        assert decoder_channels(ConvDecoderConfig(base_channels=16, upsample_stages=4, min_channels=4)) == [16, 8, 4, 4, 4]


def test_avg_pooling_path():
    enc = ImageEncoder(ImageEncoderConfig(widths=(4,), pooling="avg"))
    fmap, z = enc(torch.rand(2, 1, 8, 8))
    torch.testing.assert_close(z, fmap.mean(dim=(2, 3)))


class TestParamCounts:
    @pytest.mark.parametrize("family", ["residual-conv", "word-conv-blstm"])
    def test_image_encoder(self, family):
        cfg = ModelConfig(image_encoder=ImageEncoderConfig(family=family, widths=(4, 8), rnn_hidden=5, rnn_layers=3))
        assert param_count(build_image_encoder(cfg.image_encoder)) == expected_param_count("image_encoder", cfg)

    @pytest.mark.parametrize("family", ["lstm", "gru", "blstm", "transformer"])
    def test_seq_encoder(self, family):
        cfg = ModelConfig(seq_encoder=SeqEncoderConfig(family=family, layers=3, hidden=6, heads=2, mlp_dim=10))
        assert param_count(build_sequence_encoder(cfg.seq_encoder)) == expected_param_count("seq_encoder", cfg)

    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_seq_decoder(self, cell):
        cfg = ModelConfig(seq_decoder=SeqDecoderConfig(cell=cell, hidden=7), d=9)
        assert param_count(SequenceDecoder(9, cfg.seq_decoder)) == expected_param_count("seq_decoder", cfg)

    def test_conv_decoder(self):
        cfg = ModelConfig(conv_decoder=ConvDecoderConfig(start_resolution=(2, 3), upsample_stages=3, base_channels=8), d=5)
        assert param_count(ConvDecoder(5, cfg.conv_decoder)) == expected_param_count("conv_decoder", cfg)

    def test_default_models(self):
        cfg = ModelConfig()
        vec, ras = build_model("vectorization", cfg), build_model("rasterization", cfg)
        assert param_count(vec) == expected_param_count("image_encoder", cfg) + expected_param_count("seq_decoder", cfg)
        assert param_count(ras) == expected_param_count("seq_encoder", cfg) + expected_param_count("conv_decoder", cfg)


class TestModels:
    def test_offset_coordinate_round_trip(self):
        x, _ = batch_of(some_sequences(), 10)
        x = x.double()
        torch.testing.assert_close(from_model_coords(to_model_coords(x, "offset"), "offset"), x, atol=1e-12, rtol=0)
        assert to_model_coords(x, "absolute") is x

    def test_latent_dim_mismatch(self):
        with pytest.raises(UsageError):
            build_model("vectorization", ModelConfig(d=64))
        with pytest.raises(UsageError):
            build_model("rasterization", ModelConfig(seq_encoder=SeqEncoderConfig(family="blstm")))
        with pytest.raises(UsageError):
            build_model("colorization", ModelConfig())

    def test_unknown_config_key(self):
        with pytest.raises(UsageError):
            ModelConfig.from_dict({"image_encoder": {"depth": 3}})
        assert ModelConfig.from_dict(ModelConfig().to_dict()) == ModelConfig()

    def test_extreme_inputs_finite(self):
        small = ModelConfig(image_encoder=ImageEncoderConfig(widths=(4, 8)), seq_decoder=SeqDecoderConfig(hidden=8),
                            seq_encoder=SeqEncoderConfig(hidden=8, heads=2, mlp_dim=8, layers=1),
                            conv_decoder=ConvDecoderConfig(upsample_stages=2, base_channels=8), d=8)
        vec, ras = build_model("vectorization", small), build_model("rasterization", small)
        x, m = batch_of(some_sequences(), 16)
        for scale in (0.0, 1.0, 1e4):
            assert torch.isfinite(vec(torch.full((3, 1, 16, 16), scale), x * scale)).all()
            assert torch.isfinite(ras(x * scale, m)).all()


@pytest.mark.parametrize("name", list(cases()))
def test_parameter_gradients(name):
    module, forward = cases()[name]
    assert check_parameter_gradients(module, forward) < 1e-3
