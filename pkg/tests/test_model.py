import numpy as np
import pytest

from idembed import autodiff as ad
from idembed.autodiff import DimensionError
from idembed.model import EmbedderConfig, embed, embed_array, embed_batch, embed_nodes
from idembed.model import init_params, logits, logits_nodes
from oracles import central_diff, max_rel_err


def small_params(seed=0, **kw):
    cfg = EmbedderConfig(**{"input_dim": 5, "hidden_dims": (7,), "embed_dim": 3, "num_identities": 4, **kw})
    return cfg, init_params(cfg, seed)


class TestConfig:
    def test_rejects_single_identity(self):
        with pytest.raises(ValueError):
            EmbedderConfig(num_identities=1)

    def test_rejects_zero_dim(self):
        with pytest.raises(ValueError):
            EmbedderConfig(hidden_dims=(64, 0))

    def test_defaults(self):
        cfg = EmbedderConfig()
        assert cfg.layer_dims == (32, 64, 64, 16)


class TestEmbed:
    def test_zero_weights_give_zero_embedding(self):
        _, params = small_params()
        for _, node in params.items():
            node.value[...] = 0.0
        x = np.random.default_rng(1).standard_normal(5)
        np.testing.assert_array_equal(embed(params, x), np.zeros(3))

    def test_identical_inputs(self):
        _, params = small_params()
        x = np.random.default_rng(2).standard_normal(5)
        out = embed_array(params, np.stack([x, x]))
        assert out[0].tobytes() == out[1].tobytes()

    def test_graph_and_numpy_paths_agree(self):
        _, params = small_params()
        x = np.random.default_rng(3).standard_normal((6, 5))
        np.testing.assert_array_equal(embed_nodes(params, x).value, embed_array(params, x))

    def test_dimension_mismatch(self):
        _, params = small_params()
        with pytest.raises(DimensionError):
            embed(params, np.zeros(4))

    def test_sq_norm_gradient_matches_finite_differences(self):
        _, params = small_params(seed=5)
        x = np.random.default_rng(4).standard_normal((1, 5))
        params.zero_grad()
        ad.backward(ad.sum(ad.square(embed_nodes(params, x))))

        def f():
            return float(np.sum(embed_array(params, x) ** 2))

        for name, node in params.items():
            if name == "head":
                continue
            numeric = central_diff(f, node.value)
            assert max_rel_err(node.grad, numeric) < 1e-4, name


class TestLogits:
    def test_orthogonal_gives_zero(self):
        _, params = small_params(embed_dim=2, num_identities=2)
        params["head"].value[...] = [[1.0, 0.0], [2.0, 0.0]]
        np.testing.assert_array_equal(logits(np.array([0.0, 3.0]), params), [0.0, 0.0])

    def test_basis_projection(self):
        _, params = small_params(embed_dim=2, num_identities=2)
        params["head"].value[...] = np.eye(2)
        np.testing.assert_array_equal(logits(np.array([3.0, -1.0]), params), [3.0, -1.0])
        np.testing.assert_array_equal(logits_nodes(ad.constant([3.0, -1.0]), params).value, [3.0, -1.0])

    def test_matches_scalar_dot_products(self):
        _, params = small_params(seed=9)
        z = np.random.default_rng(9).standard_normal(3)
        out = logits(z, params)
        head = params["head"].value
        for k in range(head.shape[0]):
            ref = sum(float(z[i]) * float(head[k, i]) for i in range(3))
            assert abs(out[k] - ref) < 1e-12

    def test_bilinear(self):
        _, params = small_params(seed=1)
        z = np.random.default_rng(0).standard_normal(3)
        np.testing.assert_allclose(logits(2.5 * z, params), 2.5 * logits(z, params), rtol=0, atol=1e-10)

    def test_dimension_mismatch(self):
        _, params = small_params()
        with pytest.raises(DimensionError):
            logits(np.zeros(4), params)


class TestEmbedBatch:
    def test_paper_batch_size(self):
        cfg = EmbedderConfig()
        params = init_params(cfg, 0)
        out = embed_batch(params, np.random.default_rng(0).standard_normal((6, 9, 32)))
        assert out.embeddings.shape == (54, 16)
        assert out.logits.shape == (54, 60)

    def test_duplicated_items_give_duplicated_rows(self):
        _, params = small_params()
        x = np.random.default_rng(0).standard_normal(5)
        out = embed_batch(params, np.tile(x, (2, 3, 1)))
        assert np.all(out.embeddings.value == out.embeddings.value[0])

    def test_permutation_equivariance(self):
        _, params = small_params()
        items = np.random.default_rng(0).standard_normal((2, 4, 5))
        perm = np.random.default_rng(1).permutation(8)
        flat = items.reshape(8, 5)
        a = embed_batch(params, items).embeddings.value
        b = embed_batch(params, flat[perm].reshape(2, 4, 5)).embeddings.value
        np.testing.assert_array_equal(a[perm], b)

    def test_rejects_flat_batch(self):
        _, params = small_params()
        with pytest.raises(DimensionError):
            embed_batch(params, np.zeros((4, 5)))
