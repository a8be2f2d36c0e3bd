import numpy as np
import pytest

from oracles import oracle_mask, pixel_near_segment
from sketchssl import raster as rz
from sketchssl.errors import BatchItemError, InvalidRasterConfig, UnnormalizedInput
from sketchssl.strokes import StrokeSequence, from_polylines


def seeded_sequences(n, seed, max_canvas=16):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        H, W = (int(v) for v in rng.integers(8, max_canvas + 1, size=2))
        strokes = [rng.random((int(rng.integers(1, 6)), 2)) for _ in range(int(rng.integers(1, 4)))]
        yield from_polylines(strokes), H, W


def ink(img):
    return img[:, :, 0] == 0.0


class TestBresenham:
    @pytest.mark.parametrize("p0,p1", [((0, 0), (7, 3)), ((7, 3), (0, 0)), ((2, 9), (4, 0)), ((3, 3), (3, 3)),
                                       ((0, 5), (6, 5)), ((1, 0), (1, 6)), ((0, 0), (5, 5)), ((5, 0), (0, 5))])
    def test_endpoints_and_connectivity(self, p0, p1):
        pts = rz.bresenham(*p0, *p1)
        assert set(pts) >= {p0, p1}
        assert len(pts) == max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])) + 1
        major = 0 if abs(p1[0] - p0[0]) >= abs(p1[1] - p0[1]) else 1
        s = sorted(pts, key=lambda p: p[major])
        for (a, b), (c, d) in zip(s, s[1:]):
            assert max(abs(a - c), abs(b - d)) == 1

    def test_direction_independent(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            x0, y0, x1, y1 = (int(v) for v in rng.integers(0, 20, size=4))
            assert set(rz.bresenham(x0, y0, x1, y1)) == set(rz.bresenham(x1, y1, x0, y0))


class TestRender:
    def test_single_point_blank(self):
        img = rz.render(from_polylines([[(0.5, 0.5)]]), rz.RasterConfig(H=8, W=8))
        assert np.all(img == 1.0)

    def test_horizontal_row(self):
        img = rz.render(from_polylines([[(0, 0.5), (1, 0.5)]]), rz.RasterConfig(H=8, W=8))
        rows, cols = np.nonzero(ink(img))
        assert set(rows.tolist()) == {4} and sorted(cols.tolist()) == list(range(8))

    def test_pen_lift_not_drawn(self):
        seq = from_polylines([[(0, 0), (0, 1)], [(1, 0), (1, 1)]])
        img = rz.render(seq, rz.RasterConfig(H=8, W=8))
        assert not ink(img)[:, 1:7].any()
        assert ink(img)[:, 0].all() and ink(img)[:, 7].all()

    def test_matches_oracle(self):
        for seq, H, W in seeded_sequences(20, 5):
            assert np.array_equal(rz.ink_mask(seq, H, W), oracle_mask(seq.points, H, W))

    def test_within_half_pixel_of_ideal_segment(self):
        # every inked pixel's centre is within 1/2 px of some pen-down segment
        for seq, H, W in seeded_sequences(10, 6):
            mine = rz.ink_mask(seq, H, W)
            near = oracle_mask(seq.points, H, W, pixel_near_segment)
            assert not (mine & ~near).any()

    def test_unnormalized(self):
        with pytest.raises(UnnormalizedInput):
            rz.render(from_polylines([[(0, 0), (1.01, 0)]]), rz.RasterConfig(H=8, W=8))
        rz.render(from_polylines([[(0, 0), (1 + 1e-10, 0)]]), rz.RasterConfig(H=8, W=8))

    def test_values_and_channels(self):
        seq = from_polylines([[(0, 0), (1, 1)]])
        img = rz.render(seq, rz.RasterConfig(H=10, W=12, channels=3, background=0.25, ink=0.75))
        assert img.shape == (10, 12, 3) and img.dtype == np.float32
        assert set(np.unique(img).tolist()) == {0.25, 0.75}
        assert np.array_equal(img[:, :, 0], img[:, :, 2])

    def test_width_monotone(self):
        for seq, H, W in seeded_sequences(10, 7):
            counts = [rz.ink_mask(seq, H, W, w).sum() for w in (1, 2, 3, 4)]
            assert counts == sorted(counts)

    def test_square_dilation(self):
        m = rz.ink_mask(from_polylines([[(0.5, 0.5), (0.5, 0.5)]]), 9, 9, 3)
        assert np.array_equal(np.argwhere(m).min(0), [3, 3]) and m.sum() == 9

    def test_one_step_translation_shifts_one_column(self):
        H = W = 16
        step = 1 / (W - 1)
        seq = from_polylines([[(3 * step, 0.2), (8 * step, 0.7), (5 * step, 0.9)]])
        moved = seq.with_xy(seq.xy + [step, 0])
        a, b = rz.ink_mask(seq, H, W), rz.ink_mask(moved, H, W)
        assert np.array_equal(a[:, :-1], b[:, 1:])

    def test_bytes_identical_across_calls(self):
        seq = from_polylines([[(0.1, 0.2), (0.9, 0.4)], [(0.3, 0.3), (0.5, 0.95)]])
        cfg = rz.RasterConfig()
        assert rz.render(seq, cfg).tobytes() == rz.render(seq, cfg).tobytes()


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(H=7), dict(W=4), dict(channels=2), dict(stroke_width=0),
                                    dict(background=0.5, ink=0.5), dict(ink=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidRasterConfig):
            rz.RasterConfig(**kw)


class TestBatch:
    def test_empty(self):
        assert rz.render_batch([], rz.RasterConfig()) == []

    def test_elementwise(self):
        cfg = rz.RasterConfig(H=8, W=8)
        s1, s2 = from_polylines([[(0, 0), (1, 1)]]), from_polylines([[(1, 0), (0, 1)]])
        out = rz.render_batch([s1, s2], cfg)
        assert out[0].tobytes() == rz.render(s1, cfg).tobytes()
        assert out[1].tobytes() == rz.render(s2, cfg).tobytes()

    def test_bad_item_index(self):
        good = from_polylines([[(0, 0), (1, 1)]])
        bad = StrokeSequence(np.array([[0, 0, 1, 0, 0], [2, 2, 0, 0, 1]]))
        with pytest.raises(BatchItemError) as e:
            rz.render_batch([good, bad], rz.RasterConfig(H=8, W=8))
        assert e.value.index == 1


class TestExport:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(9, 13)).astype(np.float32)[:, :, None] / 255
        img[0, 0, 0] = 32 / 255  # a leading whitespace byte in the pixel data
        rz.save_pgm(img, tmp_path / "a.pgm")
        assert np.array_equal(rz.load_pgm(tmp_path / "a.pgm"), img[:, :, 0])

    def test_png(self, tmp_path):
        from PIL import Image

        img = rz.render(from_polylines([[(0, 0), (1, 1)]]), rz.RasterConfig(H=8, W=8))
        rz.save_png(img, tmp_path / "a.png")
        assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")), rz.to_uint8(img))
