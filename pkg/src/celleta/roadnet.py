"""Directed upstream-cell road graph and autoencoder cell embeddings."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BadConfig, InsufficientGraph, ShapeMismatch
from .geo import CellIndex
from .neural import AdamState, DenseNet, adam_step, backward, backward_with_input, forward

log = logging.getLogger(__name__)


@dataclass
class RoadGraph:
    vertices: list[CellIndex]
    adjacency: np.ndarray  # s[i, j] = 1 iff vertex i reaches vertex j in one step

    def __post_init__(self):
        self.index = {c: i for i, c in enumerate(self.vertices)}

    def __len__(self):
        return len(self.vertices)

    def upstream(self, cell: CellIndex) -> set[CellIndex]:
        j = self.index[cell]
        return {self.vertices[i] for i in np.flatnonzero(self.adjacency[:, j])}

    def edges(self) -> list[tuple[CellIndex, CellIndex]]:
        return [(self.vertices[i], self.vertices[j]) for i, j in np.argwhere(self.adjacency > 0)]


def collapse_path(cells) -> list[CellIndex]:
    out = []
    for c in cells:
        if not out or out[-1] != c:
            out.append(c)
    return out


def build_road_graph(cell_paths) -> RoadGraph:
    paths = [collapse_path(p) for p in cell_paths]
    vertices = sorted({c for p in paths for c in p})
    index = {c: i for i, c in enumerate(vertices)}
    adj = np.zeros((len(vertices), len(vertices)))
    for p in paths:
        for a, b in zip(p, p[1:]):
            if a != b:
                adj[index[a], index[b]] = 1.0
    return RoadGraph(vertices, adj)


def write_edge_list(path, graph: RoadGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# src_h src_w dst_h dst_w\n")
        for a, b in graph.edges():
            fh.write(f"{a.h} {a.w} {b.h} {b.w}\n")


@dataclass
class SdneConfig:
    embed_dim: int = 32
    hidden: tuple[int, ...] = (128,)  # encoder widths between |V| and embed_dim; K = len(hidden) + 1
    gamma: float = 1.0
    xi: float = 5.0
    reg_weight: float = 1e-4
    epochs: int = 300
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.gamma < 0 or self.reg_weight < 0:
            raise BadConfig("gamma and reg_weight must be non-negative")
        if self.xi <= 1:
            raise BadConfig("xi must exceed 1")
        if self.embed_dim < 1 or self.batch_size < 1:
            raise BadConfig("embed_dim and batch_size must be positive")

    @property
    def depth(self) -> int:
        return len(self.hidden) + 1


@dataclass
class SdneModel:
    encoder: DenseNet
    decoder: DenseNet

    @classmethod
    def init(cls, n_vertices: int, cfg: SdneConfig) -> "SdneModel":
        rng = np.random.default_rng(cfg.seed)
        widths = [n_vertices, *cfg.hidden, cfg.embed_dim]
        enc = DenseNet.build(widths, ["sigmoid"] * (len(widths) - 1), rng=rng)
        dec = DenseNet.build(widths[::-1], ["sigmoid"] * (len(widths) - 1), rng=rng)
        return cls(enc, dec)


def sdne_forward(ns_row, model: SdneModel):
    """Encode neighbourhood row(s) to embeddings and decode a reconstruction."""
    x = np.asarray(ns_row, dtype=float)
    if x.shape[-1] != model.encoder.n_in:
        raise ShapeMismatch(f"neighbourhood width {x.shape[-1]} != |V| = {model.encoder.n_in}")
    omega = forward(model.encoder, x)[0]
    return omega, forward(model.decoder, omega)[0]


def _reg(model, weight):
    return 0.5 * weight * sum(float((l.W ** 2).sum()) for net in (model.encoder, model.decoder) for l in net.layers)


def sdne_loss(batch, model: SdneModel, S: np.ndarray, cfg: SdneConfig, return_terms: bool = False):
    """gamma * L1 + L2 + (nu/2) * sum ||W||_F^2 over the rows in ``batch``.

    L2 sums the xi-weighted reconstruction error of the batch rows; L1 sums
    ``||w_i - w_j||^2`` over edges i->j leaving the batch.  With the full
    vertex set as the batch this is the whole-graph objective.
    Returns ``(loss, {"encoder": grads, "decoder": grads})``.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or model.encoder.n_in != n or model.decoder.n_out != n:
        raise ShapeMismatch("adjacency does not match the model width")
    B = np.unique(np.asarray(batch, dtype=np.int64))
    src, dst = np.nonzero(S[B])
    src = B[src]
    idx = np.unique(np.concatenate([B, dst]))
    X = S[idx]
    omega, ecache = forward(model.encoder, X)
    recon, dcache = forward(model.decoder, omega)
    weight = np.where(X > 0, cfg.xi, 1.0)
    rows = np.isin(idx, B)[:, None]
    err = (recon - X) * weight * rows
    L2 = float((err ** 2).sum())
    d_recon = 2.0 * err * weight
    pi = np.searchsorted(idx, src)
    pj = np.searchsorted(idx, dst)
    delta = omega[pi] - omega[pj]
    L1 = float((delta ** 2).sum())
    dec_grads, d_omega = backward_with_input(model.decoder, dcache, d_recon)
    if len(pi):
        np.add.at(d_omega, pi, 2.0 * cfg.gamma * delta)
        np.add.at(d_omega, pj, -2.0 * cfg.gamma * delta)
    enc_grads = backward(model.encoder, ecache, d_omega)
    for net, grads in ((model.encoder, enc_grads), (model.decoder, dec_grads)):
        for i, (dW, db) in grads.items():
            grads[i] = (dW + cfg.reg_weight * net.layers[i].W, db)
    reg = _reg(model, cfg.reg_weight)
    loss = cfg.gamma * L1 + L2 + reg
    grads = {"encoder": enc_grads, "decoder": dec_grads}
    if return_terms:
        return loss, grads, {"L1": L1, "L2": L2, "reg": reg}
    return loss, grads


@dataclass
class CellEmbedding:
    cells: list[CellIndex]
    vectors: np.ndarray
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.index = {c: i for i, c in enumerate(self.cells)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, cell: CellIndex) -> np.ndarray:
        i = self.index.get(cell)
        return np.zeros(self.dim) if i is None else self.vectors[i].copy()

    def to_record(self, prefix: str):
        meta = {"dim": self.dim, "loss_history": [float(x) for x in self.loss_history]}
        arrays = {f"{prefix}.cells": np.array([[c.h, c.w] for c in self.cells], dtype=np.int64).reshape(-1, 2),
                  f"{prefix}.vectors": self.vectors}
        return meta, arrays

    @classmethod
    def from_record(cls, meta, arrays, prefix):
        cells = [CellIndex(int(h), int(w)) for h, w in arrays[f"{prefix}.cells"]]
        vecs = np.asarray(arrays[f"{prefix}.vectors"], dtype=float).reshape(len(cells), meta["dim"])
        return cls(cells, vecs, list(meta.get("loss_history", [])))


def train_sdne(graph: RoadGraph, cfg: SdneConfig | None = None, return_model: bool = False):
    cfg = cfg or SdneConfig()
    n = len(graph)
    if n < 2:
        raise InsufficientGraph(f"need at least 2 vertices, got {n}")
    model = SdneModel.init(n, cfg)
    S = graph.adjacency
    rng = np.random.default_rng(cfg.seed + 1)
    enc_state, dec_state = AdamState(lr=cfg.lr), AdamState(lr=cfg.lr)
    everything = np.arange(n)
    history = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            _, grads = sdne_loss(perm[start:start + cfg.batch_size], model, S, cfg)
            adam_step(model.encoder, grads["encoder"], enc_state)
            adam_step(model.decoder, grads["decoder"], dec_state)
        history.append(sdne_loss(everything, model, S, cfg)[0])
    omega = forward(model.encoder, S)[0]
    emb = CellEmbedding(list(graph.vertices), omega, history)
    log.info("sdne: %d vertices, loss %.4g -> %.4g", n, history[0] if history else float("nan"),
             history[-1] if history else float("nan"))
    return (emb, model) if return_model else emb


def sdne_config_dict(cfg: SdneConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
