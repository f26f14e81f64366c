import numpy as np
import pytest

from celleta.errors import BadConfig, InsufficientGraph, ShapeMismatch
from celleta.geo import CellIndex
from celleta.neural import gradient_check
from celleta.roadnet import (
    CellEmbedding, SdneConfig, SdneModel, build_road_graph, collapse_path, sdne_forward, sdne_loss, train_sdne,
    write_edge_list,
)

C = [CellIndex(1, k) for k in range(1, 7)]


def ring_graph():
    return build_road_graph([[C[0], C[1], C[2], C[3], C[4], C[5], C[0]]])


def test_collapse_path():
    assert collapse_path([C[0], C[0], C[1], C[1], C[0]]) == [C[0], C[1], C[0]]


class TestGraph:
    def test_adjacency_from_paths(self):
        g = build_road_graph([[C[0], C[0], C[1], C[2]], [C[3], C[1]]])
        assert g.vertices == sorted([C[0], C[1], C[2], C[3]])
        assert set(g.edges()) == {(C[0], C[1]), (C[1], C[2]), (C[3], C[1])}
        assert g.upstream(C[1]) == {C[0], C[3]}
        assert g.upstream(C[0]) == set()
        assert np.trace(g.adjacency) == 0

    def test_edge_list_file(self, tmp_path):
        write_edge_list(tmp_path / "e.txt", ring_graph())
        lines = (tmp_path / "e.txt").read_text().splitlines()
        assert lines[0].startswith("#") and len(lines) == 7
        assert "1 6 1 1" in lines


class TestSdne:
    def test_config_validation(self):
        with pytest.raises(BadConfig):
            SdneConfig(xi=1.0)
        with pytest.raises(BadConfig):
            SdneConfig(gamma=-1)
        assert SdneConfig(hidden=(64, 16)).depth == 3

    def test_forward_shapes(self):
        model = SdneModel.init(6, SdneConfig(embed_dim=3, hidden=(4,)))
        omega, recon = sdne_forward(ring_graph().adjacency, model)
        assert omega.shape == (6, 3) and recon.shape == (6, 6)
        with pytest.raises(ShapeMismatch):
            sdne_forward(np.zeros(5), model)

    def test_loss_terms_by_hand(self):
        cfg = SdneConfig(embed_dim=2, hidden=(3,), gamma=0.7, xi=4.0, reg_weight=0.01)
        g = ring_graph()
        model = SdneModel.init(6, cfg)
        loss, _, terms = sdne_loss(np.arange(6), model, g.adjacency, cfg, return_terms=True)
        omega, recon = sdne_forward(g.adjacency, model)
        S = g.adjacency
        L2 = (((recon - S) * np.where(S > 0, 4.0, 1.0)) ** 2).sum()
        L1 = sum(((omega[i] - omega[j]) ** 2).sum() for i, j in np.argwhere(S > 0))
        reg = 0.005 * sum((l.W ** 2).sum() for n in (model.encoder, model.decoder) for l in n.layers)
        assert terms["L2"] == pytest.approx(L2, rel=1e-12)
        assert terms["L1"] == pytest.approx(L1, rel=1e-12)
        assert loss == pytest.approx(0.7 * L1 + L2 + reg, rel=1e-12)

    def test_gradient_on_a_batch(self):
        cfg = SdneConfig(embed_dim=2, hidden=(4,), gamma=2.0, reg_weight=0.1)
        S = ring_graph().adjacency
        model = SdneModel.init(6, cfg)
        batch = np.array([1, 4])
        _, grads = sdne_loss(batch, model, S, cfg)
        params, analytic = [], []
        for part, net in (("encoder", model.encoder), ("decoder", model.decoder)):
            for i, (dW, db) in sorted(grads[part].items()):
                params += [net.layers[i].W, net.layers[i].b]
                analytic += [dW, db]
        assert gradient_check(params, lambda: sdne_loss(batch, model, S, cfg)[0], analytic) < 1e-4

    def test_training_reduces_loss_and_is_seeded(self):
        cfg = SdneConfig(embed_dim=4, hidden=(8,), epochs=40, batch_size=3, lr=0.01)
        a = train_sdne(ring_graph(), cfg)
        b = train_sdne(ring_graph(), cfg)
        assert a.loss_history[-1] < a.loss_history[0]
        assert np.array_equal(a.vectors, b.vectors)
        assert a.dim == 4 and a.vectors.shape == (6, 4)

    def test_too_small(self):
        with pytest.raises(InsufficientGraph):
            train_sdne(build_road_graph([[C[0]]]))


class TestEmbedding:
    def test_unknown_cell_is_zero(self):
        emb = CellEmbedding([C[0]], np.ones((1, 3)))
        assert np.array_equal(emb.vector(CellIndex(9, 9)), np.zeros(3))
        v = emb.vector(C[0])
        v[0] = 5
        assert emb.vectors[0, 0] == 1  # returns a copy

    def test_record_round_trip(self):
        emb = CellEmbedding(C[:3], np.arange(6.0).reshape(3, 2), [3.0, 2.0])
        meta, arrays = emb.to_record("e")
        back = CellEmbedding.from_record(meta, arrays, "e")
        assert back.cells == emb.cells and np.array_equal(back.vectors, emb.vectors)
        assert back.loss_history == [3.0, 2.0]
