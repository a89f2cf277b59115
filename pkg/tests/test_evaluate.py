import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoretex import evaluate as E


def flat_image(color, res=16):
    img = np.ones((res, res, 3), dtype=np.float64)
    img[4:-4, 4:-4] = color
    return img


class TestHistograms:
    def test_rgb_histogram_normalized(self):
        h = E.rgb_histogram(flat_image([0.3, 0.6, 0.9]))
        assert h.shape == (48,)
        assert h.sum() == pytest.approx(1.0)

    def test_empty_foreground_rejected(self):
        with pytest.raises(ValueError):
            E.rgb_histogram(np.ones((8, 8, 3)))

    def test_chi_square_bounds(self):
        p = np.zeros(8)
        q = np.zeros(8)
        p[0] = q[4] = 1.0
        assert E.chi_square_distance(p, p) == 0.0
        assert E.chi_square_distance(p, q) == pytest.approx(1.0)

    def test_gradient_histogram_flat_image(self):
        h = E.gradient_histogram(flat_image([0.5, 0.5, 0.5], res=32))
        assert h.sum() == pytest.approx(1.0)


class TestSimilarity:
    def test_identical_sets_score_one(self):
        img = flat_image([0.2, 0.7, 0.4])
        assert E.eval_similarity([img], [img.copy()]) == 1.0

    def test_red_vs_blue_analytic_value(self):
        # flat single-channel colors: four of the six occupied histogram
        # bins are disjoint while both green channels sit in the zero bin,
        # giving a chi-square term of exactly 2/3; the gradient histograms
        # match, so the score is 1 - (2/3)/2 = 2/3
        red = flat_image([1.0, 0.0, 0.0])
        blue = flat_image([0.0, 0.0, 1.0])
        score = E.eval_similarity([red], [blue])
        assert score == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = [np.clip(flat_image([0.5, 0.1, 0.1])
                     + rng.normal(0, 0.05, (16, 16, 3)), 0, 0.999)]
        b = [np.clip(flat_image([0.1, 0.1, 0.8])
                     + rng.normal(0, 0.05, (16, 16, 3)), 0, 0.999)]
        assert E.eval_similarity(a, b) == pytest.approx(
            E.eval_similarity(b, a), abs=1e-12)

    def test_similar_beats_dissimilar(self):
        rng = np.random.default_rng(7)

        def noisy(color):
            base = flat_image(color, res=32)
            jitter = rng.normal(0.0, 0.08, base.shape)
            out = np.clip(base + jitter, 0.0, 0.999)
            out[base == 1.0] = 1.0  # keep the background exact
            return out

        red = noisy([0.7, 0.2, 0.2])
        red_again = noisy([0.65, 0.2, 0.2])
        blue = noisy([0.2, 0.2, 0.7])
        assert E.eval_similarity([red], [red_again]) > \
            E.eval_similarity([red], [blue])

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            E.eval_similarity([], [flat_image([0.5, 0.5, 0.5])])

    def test_mean_over_all_pairs(self):
        a = [flat_image([1.0, 0.0, 0.0]), flat_image([0.0, 0.0, 1.0])]
        b = [flat_image([1.0, 0.0, 0.0])]
        s_rr = E.pair_similarity(a[0], b[0])
        s_br = E.pair_similarity(a[1], b[0])
        assert E.eval_similarity(a, b) == pytest.approx((s_rr + s_br) / 2)


class TestNormalAlignment:
    @staticmethod
    def _vertical_edges(phase=0.0):
        img = np.ones((32, 32, 3))
        x = np.arange(32)
        stripe = ((x + phase) // 4 % 2).astype(np.float64)
        img[4:-4, 4:-4] = stripe[None, 4:-4, None] * 0.8 + 0.1
        return img

    @staticmethod
    def _horizontal_edges():
        img = np.ones((32, 32, 3))
        y = np.arange(32)
        stripe = (y // 4 % 2).astype(np.float64)
        img[4:-4, 4:-4] = stripe[4:-4, None, None] * 0.8 + 0.1
        return img

    def test_same_orientation_scores_high(self):
        a = self._vertical_edges()
        g = self._vertical_edges(phase=1.0)
        mask = np.zeros((32, 32), bool)
        mask[2:-2, 2:-2] = True
        assert E.normal_alignment(a, g, mask) > 0.8

    def test_perpendicular_orientation_scores_low(self):
        a = self._vertical_edges()
        g = self._horizontal_edges()
        mask = np.zeros((32, 32), bool)
        mask[2:-2, 2:-2] = True
        assert E.normal_alignment(a, g, mask) < -0.5

    def test_featureless_pair_scores_zero(self):
        flat = flat_image([0.5, 0.5, 0.5], res=32)
        mask = np.zeros((32, 32), bool)
        mask[8:-8, 8:-8] = True  # interior only: no edges at all
        assert E.normal_alignment(flat, flat, mask) == 0.0


class TestDiversityAndPsnr:
    def test_identical_runs_have_zero_diversity(self):
        imgs = [flat_image([0.3, 0.3, 0.8])]
        assert E.diversity([imgs, [imgs[0].copy()]]) == pytest.approx(0.0)

    def test_different_runs_positive(self):
        a = [flat_image([0.9, 0.1, 0.1])]
        b = [flat_image([0.1, 0.1, 0.9])]
        assert E.diversity([a, b]) > 0.0

    def test_needs_two_runs(self):
        with pytest.raises(ValueError):
            E.diversity([[flat_image([0.5, 0.5, 0.5])]])

    def test_psnr_identical_infinite(self):
        img = flat_image([0.2, 0.4, 0.6])
        assert E.psnr(img, img) == float("inf")

    def test_psnr_known_value(self):
        a = np.zeros((4, 4, 3))
        b = np.full((4, 4, 3), 0.1)
        assert E.psnr(a, b) == pytest.approx(20.0)

    def test_psnr_shape_check(self):
        with pytest.raises(ValueError):
            E.psnr(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)))


class TestViewsAndReport:
    def test_canonical_views(self):
        cams = E.canonical_views()
        assert [c.azimuth for c in cams] == [45.0, 135.0, 225.0, 315.0]
        assert all(c.elevation == 15.0 for c in cams)

    def test_report_round_trip(self):
        rep = E.EvalReport(appearance_similarity=0.8125,
                           normal_alignment=0.25, diversity=0.1,
                           per_view={"45": 0.8, "135": 0.9})
        rep.validate()
        back = E.EvalReport.from_lines(rep.to_lines())
        assert back.appearance_similarity == pytest.approx(0.8125)
        assert back.per_view == {"45": 0.8, "135": 0.9}
        assert back.diversity == pytest.approx(0.1)

    def test_report_rejects_nan(self):
        with pytest.raises(ValueError):
            E.EvalReport(float("nan"), 0.0).validate()

    def test_report_without_diversity(self):
        rep = E.EvalReport(0.5, 0.1)
        back = E.EvalReport.from_lines(rep.to_lines())
        assert back.diversity is None


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.0, 0.999), g=st.floats(0.0, 0.999), b=st.floats(0.0, 0.999))
def test_self_similarity_always_one(r, g, b):
    img = flat_image([r, g, b])
    assert E.pair_similarity(img, img) == 1.0
