import numpy as np
import pytest

from mosgsl import autodiff as ad
from mosgsl.autodiff import Tensor
from mosgsl.backbone import (
    ClassifierHead,
    GnnEncoder,
    gcn_normalize,
    load_checkpoint,
    pool_mean,
    save_checkpoint,
)
from mosgsl.layers import collect_state, load_state

from helpers import check_op_grads, random_symmetric


def make_encoder(kind, rng, in_dim=3, hidden=4):
    return GnnEncoder(kind, in_dim, hidden, f"enc_{kind}", rng, dropout=0.5)


def test_gcn_normalize_hand_value():
    # two connected nodes: (A+I) has all-ones rows, degrees 2 -> all entries 1/2
    adj = Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))
    norm = gcn_normalize(adj)
    np.testing.assert_allclose(norm.data, np.full((2, 2), 0.5), atol=1e-12)
    x = Tensor(np.array([[1.0], [3.0]]))
    np.testing.assert_allclose(ad.matmul(norm, x).data, [[2.0], [2.0]], atol=1e-12)


def test_gcn_zero_adjacency_is_mlp_on_features():
    rng = np.random.default_rng(0)
    enc = make_encoder("gcn", rng)
    feats = rng.normal(size=(5, 3))
    out_graph = enc(np.zeros((5, 5)), feats, train=False, rng=rng)
    # A = 0 means propagation is the identity; rows must depend only on own features
    single = enc(np.zeros((1, 1)), feats[2:3], train=False, rng=rng)
    np.testing.assert_allclose(out_graph.data[2], single.data[0], atol=1e-9)


def test_encoder_rejects_asymmetric():
    rng = np.random.default_rng(0)
    enc = make_encoder("gcn", rng)
    bad = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        enc(bad, np.ones((2, 3)), train=False, rng=rng)


@pytest.mark.parametrize("kind", ["gcn", "sage", "gin"])
def test_permutation_equivariance(kind):
    rng = np.random.default_rng(1)
    enc = make_encoder(kind, rng)
    n = 6
    adj = random_symmetric(rng, n)
    feats = rng.normal(size=(n, 3))
    perm = rng.permutation(n)
    p_mat = np.eye(n)[perm]

    out = enc(adj, feats, train=False, rng=rng)
    out_p = enc(p_mat @ adj @ p_mat.T, feats[perm], train=False, rng=rng)
    np.testing.assert_allclose(out_p.data, out.data[perm], atol=1e-9)
    # pooled embedding is permutation invariant
    np.testing.assert_allclose(pool_mean(out_p).data, pool_mean(out).data, atol=1e-9)


def test_pool_mean_values():
    rows = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(pool_mean(Tensor(rows)).data, [0.5, 0.5])
    same = np.tile([2.0, -1.0], (4, 1))
    np.testing.assert_allclose(pool_mean(Tensor(same)).data, [2.0, -1.0])
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 5))
    np.testing.assert_allclose(pool_mean(Tensor(x)).data, x.mean(axis=0), atol=1e-12)


def test_pool_mean_empty_rejected():
    with pytest.raises(ad.ShapeError):
        pool_mean(Tensor(np.zeros((0, 4))))


def test_classifier_hand_logits():
    rng = np.random.default_rng(3)
    head = ClassifierHead(2, 2, "head", rng)
    head.lin.weight.data = np.array([[1.0, -1.0], [0.5, 2.0]])
    head.lin.bias.data = np.array([0.1, -0.1])
    emb = Tensor(np.array([2.0, 4.0]))
    np.testing.assert_allclose(head(emb).data, [2.0 + 2.0 + 0.1, -2.0 + 8.0 - 0.1], atol=1e-12)


def test_zero_classifier_uniform_softmax():
    rng = np.random.default_rng(4)
    head = ClassifierHead(3, 4, "head", rng)
    head.lin.weight.data[:] = 0.0
    logits = head(Tensor(np.ones(3)))
    np.testing.assert_allclose(ad.softmax_last(logits).data, np.full(4, 0.25))


@pytest.mark.parametrize("kind", ["gcn", "sage", "gin"])
def test_end_to_end_gradcheck(kind):
    # seed chosen so no relu pre-activation sits inside the fd window
    rng = np.random.default_rng(7)
    enc = make_encoder(kind, rng)
    head = ClassifierHead(4, 2, "head", rng)
    # differentiate through a symmetrization so fd probes keep the contract
    raw = Tensor(rng.random((4, 4)) + 0.1, requires_grad=True)
    feats = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    off_diag = Tensor(1.0 - np.eye(4))

    def build():
        adj = ad.mul(ad.mul(ad.add(raw, ad.transpose(raw)), ad.as_tensor(0.5)), off_diag)
        h = enc(adj, feats, train=False, rng=rng)
        logits = head(pool_mean(h))
        return ad.cross_entropy_with_logits(ad.stack_rows([logits]), [1])

    check_op_grads(build, [raw, feats] + enc.params() + head.params(), f"{kind} end-to-end")


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    enc = make_encoder("gin", rng)
    head = ClassifierHead(4, 3, "head", rng)
    # run a train-mode forward so running stats move off their init values
    enc(random_symmetric(rng, 5), rng.normal(size=(5, 3)), train=True, rng=rng)
    state = collect_state([enc, head])
    path = str(tmp_path / "model.npz")
    save_checkpoint(path, state)
    back = load_checkpoint(path)
    assert set(back) == set(state)
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])

    enc2 = make_encoder("gin", np.random.default_rng(99))
    head2 = ClassifierHead(4, 3, "head", np.random.default_rng(99))
    load_state([enc2, head2], back)
    x = random_symmetric(rng, 4)
    f = rng.normal(size=(4, 3))
    a = enc(x, f, train=False, rng=rng).data
    b = enc2(x, f, train=False, rng=rng).data
    np.testing.assert_array_equal(a, b)


def test_checkpoint_shape_mismatch(tmp_path):
    rng = np.random.default_rng(7)
    enc = make_encoder("gcn", rng)
    state = collect_state([enc])
    enc_bigger = GnnEncoder("gcn", 3, 8, "enc_gcn", rng)
    with pytest.raises(ValueError, match="shape mismatch"):
        load_state([enc_bigger], state)
