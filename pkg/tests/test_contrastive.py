import math

import numpy as np
import pytest
import torch

from lmaczs import contrastive, datagen, dsp
from lmaczs.contrastive import (
    AudioLatents,
    ClapArch,
    ClapModel,
    ClapTrainConfig,
    Embedding,
    Modality,
    SimilarityMatrix,
    Tokenizer,
    clap_from_checkpoint,
    clap_checkpoint,
    clap_loss,
    contrastive_loss,
    encode_audio,
    encode_text,
    similarity_matrix,
    train_clap,
)
from lmaczs.errors import InvalidInputError

from numutil import fd_gradient, rel_error


def small_arch():
    return ClapArch(vocab=datagen.caption_vocabulary(), embed_dim=16, text_hidden=32, conv_channels=(8, 8, 8, 8))


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    m = ClapModel(small_arch())
    m.eval()
    return m


@pytest.fixture(scope="module")
def frontend():
    return dsp.MelFrontend(16000, frame_len=512, hop=128, n_mels=64)


@pytest.fixture(scope="module")
def mel_spec(frontend):
    rng = np.random.default_rng(3)
    clip = dsp.AudioClip(samples=rng.standard_normal(16000) * 0.1, sample_rate=16000)
    return frontend.mel(clip)


class TestTokenizer:
    def test_known_words_and_oov_buckets(self):
        tok = Tokenizer(["dog", "barking"], hash_buckets=8)
        seq = tok.encode("Dog barking loudly")
        assert seq.token_ids[0] == 1 and seq.token_ids[1] == 2
        assert 3 <= seq.token_ids[2] < 3 + 8  # OOV hashed into bucket range
        assert np.array_equal(seq.token_ids, tok.encode("dog BARKING loudly").token_ids)

    def test_empty_rejected(self):
        tok = Tokenizer(["a"])
        with pytest.raises(InvalidInputError):
            tok.encode("   ")


class TestEncoders:
    def test_encode_text_deterministic_unit_norm(self, model):
        e1 = encode_text(model, "a steady tone is ringing")
        e2 = encode_text(model, "a steady tone is ringing")
        np.testing.assert_array_equal(e1.vector, e2.vector)
        assert e1.modality == Modality.TEXT
        assert np.linalg.norm(e1.vector) == pytest.approx(1.0, abs=1e-6)

    def test_encode_audio_deterministic_unit_norm_four_latents(self, model, mel_spec):
        a1, lat1 = encode_audio(model, mel_spec)
        a2, lat2 = encode_audio(model, mel_spec)
        np.testing.assert_array_equal(a1.vector, a2.vector)
        assert np.linalg.norm(a1.vector) == pytest.approx(1.0, abs=1e-6)
        assert len(lat1.feature_maps) == 4
        sizes = [fm.shape[-2] * fm.shape[-1] for fm in lat1.feature_maps]
        assert sizes == sorted(sizes, reverse=True)

    def test_encode_audio_rejects_wrong_domain(self, model, frontend):
        clip = dsp.AudioClip(samples=np.random.default_rng(0).standard_normal(16000) * 0.1, sample_rate=16000)
        with pytest.raises(InvalidInputError):
            encode_audio(model, frontend.stft(clip))

    def test_latents_must_have_four_maps(self):
        with pytest.raises(InvalidInputError):
            AudioLatents(feature_maps=[torch.zeros(1, 4, 4)] * 3)

    def test_intermediate_latents_sizes(self, model, mel_spec):
        lat = contrastive.intermediate_latents(model, "a tone", mel_spec)
        assert lat.text_latent.shape == (32,)
        assert lat.audio_latent.shape == (8,)


class TestSimilarityMatrix:
    def test_identical_unit_embeddings_give_unit_diagonal(self):
        rng = np.random.default_rng(0)
        vecs = rng.standard_normal((3, 8))
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
        t = [Embedding(v, Modality.TEXT) for v in vecs]
        a = [Embedding(v, Modality.AUDIO) for v in vecs]
        C = similarity_matrix(t, a)
        np.testing.assert_allclose(np.diag(C.values), 1.0, atol=1e-12)
        assert np.all(np.abs(C.values) <= 1 + 1e-12)

    def test_orthogonal_embeddings_give_zero(self):
        t = [Embedding(np.array([1.0, 0.0]), Modality.TEXT)]
        a = [Embedding(np.array([0.0, 1.0]), Modality.AUDIO)]
        assert similarity_matrix(t, a).values[0, 0] == 0.0

    def test_size_mismatch_rejected(self):
        t = [Embedding(np.ones(2), Modality.TEXT)]
        with pytest.raises(InvalidInputError):
            similarity_matrix(t, [])


class TestContrastiveLoss:
    def test_zero_matrix_n2(self):
        # oracle: direct softmax evaluation -> each diagonal prob is 1/2
        oracle = -0.5 * (4 * math.log(0.5))
        L = contrastive_loss(SimilarityMatrix(np.zeros((2, 2)), temperature=1.0))
        assert L == pytest.approx(oracle, abs=1e-12)
        assert L == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_strong_diagonal_n2(self):
        C = SimilarityMatrix(np.diag([10.0, 10.0]), temperature=1.0)
        oracle = 2 * math.log(1 + math.exp(-10))
        assert contrastive_loss(C) == pytest.approx(oracle, rel=1e-9)
        assert contrastive_loss(C) == pytest.approx(9.08e-5, rel=1e-2)

    def test_separable_limit_goes_to_zero(self):
        losses = [contrastive_loss(SimilarityMatrix(np.diag([s, s, s]), 1.0)) for s in (5, 20, 80)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 1e-12

    def test_nonnegative_on_random(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            C = SimilarityMatrix(rng.uniform(-1, 1, (4, 4)), temperature=0.2)
            assert contrastive_loss(C) >= 0

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(InvalidInputError):
            contrastive_loss(SimilarityMatrix(np.zeros((2, 2)), temperature=0.0))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        C = rng.uniform(-1, 1, (5, 5))
        perm = rng.permutation(5)
        L1 = contrastive_loss(SimilarityMatrix(C, 0.5))
        L2 = contrastive_loss(SimilarityMatrix(C[np.ix_(perm, perm)], 0.5))
        assert L1 == pytest.approx(L2, rel=1e-12)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(7)
        for trial in range(3):
            C = rng.uniform(-1, 1, (4, 4))
            tau = 0.5
            Ct = torch.tensor(C, dtype=torch.float64, requires_grad=True)
            clap_loss(Ct, tau).backward()
            analytic = Ct.grad.numpy()
            fd = fd_gradient(lambda x: contrastive_loss(SimilarityMatrix(x, tau)), C.copy())
            assert rel_error(analytic, fd) < 1e-4


class TestTraining:
    @pytest.fixture(scope="class")
    def tiny_corpus(self):
        return datagen.make_dataset(n_per_class=8, seed=21)

    def test_loss_curve_bit_identical_across_runs(self, tiny_corpus, frontend):
        arch = small_arch()
        cfg = ClapTrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=5)
        _, h1 = train_clap(tiny_corpus["train"], tiny_corpus["val"], arch, cfg, frontend)
        _, h2 = train_clap(tiny_corpus["train"], tiny_corpus["val"], arch, cfg, frontend)
        assert h1["loss"] == h2["loss"]
        assert h1["val_loss_init"] == h2["val_loss_init"]

    def test_initial_loss_near_uniform_prediction(self, tiny_corpus, frontend):
        # with near-uniform similarities Eq. oracle gives N ln N
        arch = small_arch()
        cfg = ClapTrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=5)
        _, h = train_clap(tiny_corpus["train"], tiny_corpus["val"], arch, cfg, frontend)
        n = 8
        assert 0.3 * n * math.log(n) < h["val_loss_init"] < 3.0 * n * math.log(n)

    def test_training_reduces_heldout_loss(self, tiny_corpus, frontend):
        arch = small_arch()
        cfg = ClapTrainConfig(lr=2e-3, batch_size=8, epochs=8, seed=5)
        _, h = train_clap(tiny_corpus["train"], tiny_corpus["val"], arch, cfg, frontend)
        assert h["val_loss_final"] < h["val_loss_init"]

    def test_empty_dataset_rejected(self, tiny_corpus, frontend):
        with pytest.raises(InvalidInputError):
            train_clap([], tiny_corpus["val"], small_arch(), ClapTrainConfig(), frontend)

    def test_paper_default_lr(self):
        assert ClapTrainConfig().lr == 1e-5

    def test_temperature_init_and_clamp(self, model):
        assert 1.0 / float(model.tau) == pytest.approx(1.0 / 0.07, rel=1e-6)
        with torch.no_grad():
            model.log_tau.fill_(-10.0)
        assert float(model.tau) == pytest.approx(0.01)
        with torch.no_grad():
            model.log_tau.fill_(float(np.log(0.07)))


class TestCheckpointRoundTrip:
    def test_forward_exact_after_reload(self, model, mel_spec, tmp_path):
        from lmaczs.checkpoint import load_checkpoint, save_checkpoint

        path = tmp_path / "clap.ckpt"
        save_checkpoint(path, clap_checkpoint(model, step=3))
        back = clap_from_checkpoint(load_checkpoint(path))
        e0 = encode_text(model, "a pulsing wash of noise")
        e1 = encode_text(back, "a pulsing wash of noise")
        np.testing.assert_array_equal(e0.vector, e1.vector)
        a0, _ = encode_audio(model, mel_spec)
        a1, _ = encode_audio(back, mel_spec)
        np.testing.assert_array_equal(a0.vector, a1.vector)

    def test_wrong_kind_rejected(self, model, tmp_path):
        from lmaczs.checkpoint import load_checkpoint, save_checkpoint

        ck = clap_checkpoint(model)
        ck.config["kind"] = "decoder"
        path = tmp_path / "bad.ckpt"
        save_checkpoint(path, ck)
        with pytest.raises(InvalidInputError):
            clap_from_checkpoint(load_checkpoint(path))
