import numpy as np
import pytest

import comix.autodiff as ad
import comix.encoder as enc
import comix.synthvideo as sv
from comix.errors import BadMagicError, FileFormatError, TruncatedFileError


def _tiny_params(rng=None, clip_dim=18, hidden=4, feat=4, gcn_dims=(3, 3), classes=2):
    rng = rng or np.random.default_rng(0)
    return enc.init_encoder_params(clip_dim, hidden, feat, gcn_dims, classes, rng)


def _clip_batch(rng, n=3, clip_len=2, h=3, w=3, c=1, video_id=0):
    clips = rng.uniform(size=(n, clip_len, h, w, c))
    return sv.ClipBatch(video_id=video_id, clips=clips, speed=sv.FAST)


class TestFeaturizer:
    def test_identical_clips_identical_rows(self):
        rng = np.random.default_rng(1)
        params = _tiny_params()
        clip = rng.uniform(size=(1, 2, 3, 3, 1))
        batch = sv.ClipBatch(video_id=0, clips=np.repeat(clip, 2, axis=0), speed=sv.FAST)
        feats = enc.featurize_clips(batch, params.featurizer).value
        np.testing.assert_array_equal(feats[0], feats[1])

    def test_zero_params_zero_features(self):
        params = enc.zero_encoder_params(18, 4, 4, (3, 3), 2)
        rng = np.random.default_rng(2)
        feats = enc.featurize_clips(_clip_batch(rng), params.featurizer).value
        np.testing.assert_array_equal(feats, np.zeros_like(feats))

    def test_featurizer_gradients(self):
        rng = np.random.default_rng(3)
        params = _tiny_params(rng)
        leaves, by_name = enc.leaf_params(params)
        out = ad.sum_all(enc.featurize_clips(_clip_batch(rng), leaves.featurizer))
        for name in ("featurizer.w1", "featurizer.b1", "featurizer.w2", "featurizer.b2"):
            report = ad.finite_difference_check(out, by_name[name], step=1e-5, tol=1e-4)
            assert report.passed, f"{name}: {report.max_rel_err:.2e}"


def _affinity_oracle(feats, w, wp):
    # direct elementwise computation of the pairwise affinity + row softmax
    n = feats.shape[0]
    raw = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            raw[i, j] = (w @ feats[i]) @ (wp @ feats[j])
    out = np.empty_like(raw)
    for i in range(n):
        e = np.exp(raw[i] - raw[i].max())
        out[i] = e / e.sum()
    return out


class TestSimilarityAdjacency:
    def test_single_node(self):
        rng = np.random.default_rng(4)
        feats = ad.leaf(rng.normal(size=(1, 3)))
        w = ad.leaf(rng.normal(size=(3, 3)))
        wp = ad.leaf(rng.normal(size=(3, 3)))
        adj = enc.similarity_adjacency(feats, w, wp).value
        np.testing.assert_array_equal(adj, [[1.0]])

    def test_zero_weights_give_uniform_rows(self):
        rng = np.random.default_rng(5)
        feats = ad.leaf(rng.normal(size=(4, 3)))
        zero = ad.leaf(np.zeros((3, 3)))
        adj = enc.similarity_adjacency(feats, zero, zero).value
        np.testing.assert_allclose(adj, np.full((4, 4), 0.25), atol=1e-15)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(6)
        fv = rng.normal(size=(3, 4))
        wv = rng.normal(size=(4, 4))
        wpv = rng.normal(size=(4, 4))
        adj = enc.similarity_adjacency(ad.leaf(fv), ad.leaf(wv), ad.leaf(wpv)).value
        np.testing.assert_allclose(adj, _affinity_oracle(fv, wv, wpv), atol=1e-12)

    @pytest.mark.parametrize("trial", range(10))
    def test_rows_sum_to_one(self, trial):
        rng = np.random.default_rng(700 + trial)
        n = int(rng.integers(1, 6))
        d = int(rng.integers(2, 6))
        adj = enc.similarity_adjacency(
            ad.leaf(rng.normal(size=(n, d))),
            ad.leaf(rng.normal(size=(d, d))),
            ad.leaf(rng.normal(size=(d, d))),
        ).value
        np.testing.assert_allclose(adj.sum(axis=1), np.ones(n), atol=1e-9)
        assert np.all(adj >= 0.0)


class TestGcnForward:
    def test_single_node_reduces_to_mlp(self):
        rng = np.random.default_rng(7)
        params = _tiny_params(rng)
        feat = rng.normal(size=(1, 4))
        z = enc.gcn_forward(ad.leaf(feat), params.layers).value
        h = feat
        for i, layer in enumerate(params.layers):
            h = h @ layer.weight
            if i < len(params.layers) - 1:
                h = np.maximum(h, 0.0)
        np.testing.assert_allclose(z, h[0], atol=1e-12)

    def test_node_permutation_equivariance(self):
        rng = np.random.default_rng(8)
        params = _tiny_params(rng)
        feats = rng.normal(size=(5, 4))
        z = enc.gcn_forward(ad.leaf(feats), params.layers).value
        perm = rng.permutation(5)
        z_perm = enc.gcn_forward(ad.leaf(feats[perm]), params.layers).value
        np.testing.assert_allclose(z, z_perm, atol=1e-12)

    def test_end_to_end_gradients(self):
        rng = np.random.default_rng(9)
        params = _tiny_params(rng)
        leaves, by_name = enc.leaf_params(params)
        out = ad.sum_all(enc.encode(_clip_batch(rng), leaves))
        for name, lf in by_name.items():
            report = ad.finite_difference_check(out, lf, step=1e-5, tol=1e-3)
            assert report.passed, f"{name}: {report.max_rel_err:.2e}"


class TestEncode:
    def test_deterministic(self):
        rng = np.random.default_rng(10)
        params = _tiny_params(rng)
        batch = _clip_batch(rng)
        a = enc.encode(batch, params).value
        b = enc.encode(batch, params).value
        np.testing.assert_array_equal(a, b)

    def test_fast_slow_differ_on_random_init(self):
        cfg = sv.GenConfig(num_classes=2, videos_per_class=1, test_videos_per_class=0, seed=12)
        src, _ = sv.generate_domain_pair(cfg)
        video = src.train.videos[0]
        rng = np.random.default_rng(11)
        params = enc.init_encoder_params(4 * 16 * 16, 8, 8, (4, 4), 2, rng)
        fast = enc.encode(sv.sample_clips(video, 16, 4, speed=sv.FAST), params).value
        slow = enc.encode(sv.sample_clips(video, 8, 4, speed=sv.SLOW), params).value
        assert not np.allclose(fast, slow)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        params = _tiny_params(rng)
        path = tmp_path / "params.cmx1"
        enc.save_checkpoint(path, params)
        loaded = enc.load_checkpoint(path)
        for name, arr in enc.named_params(params).items():
            np.testing.assert_array_equal(arr, enc.named_params(loaded)[name])

    def test_bad_magic(self):
        with pytest.raises(BadMagicError, match="bad magic"):
            enc.checkpoint_from_bytes(b"XXXX" + b"\x00" * 8)

    def test_truncated(self):
        blob = enc.checkpoint_to_bytes(_tiny_params())
        with pytest.raises(TruncatedFileError, match="unexpected EOF"):
            enc.checkpoint_from_bytes(blob[:-10])

    def test_missing_tensor(self):
        params = _tiny_params()
        table = enc.named_params(params)
        del table["gcn.0.sim_w"]
        with pytest.raises(FileFormatError, match="gcn.0.sim_w"):
            enc._params_from_table(table)
