import numpy as np
import pytest
import torch

from scoretex import diffusion as D
from scoretex import personalize as P


def tiny_model(**kw):
    torch.manual_seed(0)
    return D.Denoiser(widths=(8, 16), embed_dim=32, **kw)


@pytest.fixture(scope="module")
def exemplars():
    imgs, masks, cams = P.render_reference_views(
        "checker", "cube", ("red", "green"), count=4, resolution=32,
        rng=np.random.default_rng(0))
    return P.prepare_exemplars(imgs, masks, target_size=32, cameras=cams)


class TestPrepare:
    def test_all_true_mask_keeps_pixels(self):
        rng = np.random.default_rng(1)
        img = rng.random((32, 32, 3)).astype(np.float32)
        out = P.prepare_exemplars([img], [np.ones((32, 32), bool)],
                                  target_size=32)
        np.testing.assert_array_equal(out.images[0], img)

    def test_empty_mask_rejected(self):
        img = np.zeros((32, 32, 3), np.float32)
        with pytest.raises(ValueError, match="empty foreground"):
            P.prepare_exemplars([img], [np.zeros((32, 32), bool)])

    def test_background_is_exactly_white(self, exemplars):
        for img, mask in zip(exemplars.images, exemplars.masks):
            assert (img[~mask] == 1.0).all()
            assert (img[0, 0] == 1.0).all()

    def test_shorter_edge_resize(self):
        rng = np.random.default_rng(2)
        img = rng.random((48, 96, 3))
        out = P.prepare_exemplars([img], [np.ones((48, 96), bool)],
                                  target_size=32)
        assert out.images[0].shape == (32, 64, 3)
        assert out.crop_size == 32

    def test_count_range_enforced(self):
        img = np.ones((32, 32, 3))
        mask = np.ones((32, 32), bool)
        with pytest.raises(ValueError):
            P.prepare_exemplars([], [])
        with pytest.raises(ValueError):
            P.prepare_exemplars([img] * 9, [mask] * 9)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ValueError):
            P.prepare_exemplars([np.ones((32, 32, 3))],
                                [np.ones((16, 16), bool)])

    def test_prompt_must_contain_subject_token(self):
        img = np.ones((32, 32, 3))
        with pytest.raises(ValueError, match=r"\[V\]"):
            P.prepare_exemplars([img], [np.ones((32, 32), bool)],
                                prompt="a photo of object")

    def test_target_size_validated(self):
        img = np.ones((32, 32, 3))
        with pytest.raises(ValueError):
            P.prepare_exemplars([img], [np.ones((32, 32), bool)],
                                target_size=30)


class TestExemplarDir:
    def test_round_trip(self, exemplars, tmp_path):
        P.save_exemplar_dir(exemplars, tmp_path)
        back = P.load_exemplar_dir(tmp_path, target_size=32)
        assert back.count == exemplars.count
        assert back.prompt.words() == exemplars.prompt.words()
        for a, b in zip(back.cameras, exemplars.cameras):
            assert a == pytest.approx(b, abs=1e-5)
        for a, b in zip(back.images, exemplars.images):
            assert np.abs(a - b).max() < 1.0 / 255.0 + 1e-9
        for a, b in zip(back.masks, exemplars.masks):
            np.testing.assert_array_equal(a, b)

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            P.load_exemplar_dir(tmp_path)

    def test_missing_masks_default_to_full(self, tmp_path):
        from scoretex.imageio import write_png
        write_png(tmp_path / "a.png", np.full((32, 32, 3), 0.5))
        out = P.load_exemplar_dir(tmp_path, target_size=32)
        assert out.masks[0].all()


class TestFineTune:
    def test_zero_steps_is_bitwise_copy(self, exemplars):
        base = tiny_model()
        psi = P.fine_tune(base, exemplars, steps=0,
                          rng=np.random.default_rng(0))
        for (ka, va), (kb, vb) in zip(base.state_dict().items(),
                                      psi.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)

    def test_base_model_never_mutated(self, exemplars):
        base = tiny_model()
        before = {k: v.clone() for k, v in base.state_dict().items()}
        P.fine_tune(base, exemplars, steps=10, lr=1e-3,
                    rng=np.random.default_rng(0), batch_size=4)
        for k, v in base.state_dict().items():
            assert torch.equal(v, before[k])

    def test_deterministic(self, exemplars):
        outs = []
        for _ in range(2):
            psi = P.fine_tune(tiny_model(), exemplars, steps=8, lr=1e-3,
                              rng=np.random.default_rng(5), batch_size=4)
            outs.append(psi.state_dict())
        for k in outs[0]:
            assert torch.equal(outs[0][k], outs[1][k])

    def test_loss_decreases(self, exemplars):
        base = tiny_model()
        losses = []
        P.fine_tune(base, exemplars, steps=40, lr=2e-3,
                    rng=np.random.default_rng(1), batch_size=4,
                    callback=lambda s, v: losses.append(v))
        assert losses[0] == pytest.approx(1.0, abs=0.1)
        assert np.mean(losses[-8:]) < 0.85 * losses[0]

    def test_control_branch_frozen(self, exemplars):
        base = tiny_model(with_control=True)
        with torch.no_grad():
            for p in base.control_parameters():
                p.add_(0.01)
        psi = P.fine_tune(base, exemplars, steps=6, lr=1e-3,
                          rng=np.random.default_rng(2), batch_size=4)
        for pb, pp in zip(base.control_parameters(), psi.control_parameters()):
            assert torch.equal(pb, pp)
        assert not torch.equal(base.out_conv.weight, psi.out_conv.weight)

    def test_subject_prompt_moves_more_than_null(self, exemplars):
        base = tiny_model()
        psi = P.fine_tune(base, exemplars, steps=60, lr=2e-3,
                          rng=np.random.default_rng(3), batch_size=4)
        g = torch.Generator().manual_seed(9)
        x = torch.randn(4, 3, 32, 32, generator=g)
        with torch.no_grad():
            drift_null = float(((D.predict_noise(psi, x, D.null_prompt(), 300)
                                 - D.predict_noise(base, x, D.null_prompt(), 300))
                                ** 2).mean())
            tok = exemplars.prompt
            drift_subj = float(((D.predict_noise(psi, x, tok, 300)
                                 - D.predict_noise(base, x, tok, 300))
                                ** 2).mean())
        assert drift_subj > drift_null

    def test_divergence_detected(self, exemplars):
        base = tiny_model()
        with pytest.raises(D.DivergenceError):
            P.fine_tune(base, exemplars, steps=200, lr=500.0,
                        rng=np.random.default_rng(4), batch_size=4,
                        divergence_factor=2.0, divergence_patience=5)

    def test_exemplar_loss_of_fresh_model_near_one(self, exemplars):
        loss = P.exemplar_loss(tiny_model(), exemplars,
                               np.random.default_rng(0), rounds=6,
                               batch_size=4)
        assert loss == pytest.approx(1.0, abs=0.05)
