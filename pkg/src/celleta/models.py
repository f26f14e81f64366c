"""Traffic-level classifier, per-cell travel-time regressor, and layer transfer.

Both models are a single :class:`DenseNet` whose last layer is the
domain-specific head (softmax for the classifier, one identity unit for the
regressor); every earlier layer is the transferable body.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .errors import BadK, EmptyProfile, InsufficientData, ShapeMismatch, WidthMismatch
from .geo import GridSpec
from .knowledge import CELL_VECTOR_WIDTH, FEATURE_NAMES
from .neural import DenseNet, History, Layer, TrainConfig, fit, forward, glorot_uniform, net_from_record, net_to_record
from .roadnet import CellEmbedding

log = logging.getLogger(__name__)

DEG_METERS = 111_195.0  # one degree of great-circle arc at R = 6,371 km
MIN_SECONDS = 1e-3


def speed_level(profile, n_classes: int) -> float:
    """N * mean(observed speeds) / max(observed speeds), in (0, N]."""
    s = np.asarray(profile, dtype=float)
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise EmptyProfile("no observed directions in profile")
    return n_classes * float(s.mean()) / float(s.max())


def class_label(profile, global_max: float, n_classes: int) -> int:
    """Equal-width bucket of (level / N) * (mean speed / dataset max speed)."""
    level = speed_level(profile, n_classes)
    s = np.asarray(profile, dtype=float)
    frac = float(np.nanmean(s)) / global_max
    return int(min(math.floor(level / n_classes * frac * n_classes), n_classes - 1))


def dataset_max_speed(speed_grid) -> float:
    return float(np.nanmax(speed_grid)) if np.isfinite(speed_grid).any() else 0.0


def top_k_mask(probs, k: int) -> np.ndarray:
    """Keep the k largest probabilities in place (ties to the lower index), zero the rest."""
    p = np.asarray(probs, dtype=float)
    n = p.shape[-1]
    if not 1 <= k <= n:
        raise BadK(f"k={k} outside [1, {n}]")
    single = p.ndim == 1
    p2 = p[None, :] if single else p
    order = np.argsort(-p2, axis=1, kind="stable")[:, :k]
    out = np.zeros_like(p2)
    rows = np.arange(p2.shape[0])[:, None]
    out[rows, order] = p2[rows, order]
    return out[0] if single else out


def chord_feature(chord_len: float, phi: float) -> float:
    return min(max(chord_len / (phi * DEG_METERS * math.sqrt(2)), 0.0), 1.0)


def eta_features(vec, sigma_norm, omega, chord_len: float, phi: float) -> np.ndarray:
    return np.concatenate([np.asarray(vec, float), np.asarray(sigma_norm, float),
                           np.asarray(omega, float), [chord_feature(chord_len, phi)]])


@dataclass
class ClassifierConfig:
    n_classes: int = 10
    hidden: tuple[int, ...] = (256,)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)


@dataclass
class EtaConfig:
    hidden: tuple[int, ...] = (256, 256, 256)
    k: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)


@dataclass
class ClassifierModel:
    net: DenseNet
    n_classes: int
    history: History | None = None
    val_accuracy: float | None = None

    @property
    def body(self) -> list[int]:
        return list(range(len(self.net) - 1))

    def probabilities(self, x) -> np.ndarray:
        return forward(self.net, x)[0]


@dataclass
class EtaModel:
    net: DenseNet
    history: History | None = None

    @property
    def body(self) -> list[int]:
        return list(range(len(self.net) - 1))


HEAD_INIT = "zero"  # "zero": zero weights, data-driven bias; "glorot": random weights, data-driven bias


def init_head(net: DenseNet, y, classifier: bool, n_classes: int = 0, seed: int = 0) -> None:
    """Reset the output layer: weights per HEAD_INIT, bias at the target mean (log class priors)."""
    head = net.layers[-1]
    if HEAD_INIT == "zero":
        head.W = np.zeros_like(head.W)
    else:
        head.W = glorot_uniform(head.fan_in, head.fan_out, np.random.default_rng(seed))
    if classifier:
        counts = np.bincount(np.asarray(y, np.int64), minlength=n_classes) + 1.0
        head.b = np.log(counts / counts.sum())
    else:
        head.b = np.full(head.fan_out, float(np.mean(y)))
    net.version += 1


def build_classifier(n_in: int, cfg: ClassifierConfig) -> ClassifierModel:
    sizes = [n_in, *cfg.hidden, cfg.n_classes]
    acts = ["relu"] * len(cfg.hidden) + ["softmax"]
    return ClassifierModel(DenseNet.build(sizes, acts, cfg.train.dropout, seed=cfg.train.seed), cfg.n_classes)


def build_eta(n_in: int, cfg: EtaConfig) -> EtaModel:
    sizes = [n_in, *cfg.hidden, 1]
    acts = ["relu"] * len(cfg.hidden) + ["identity"]
    return EtaModel(DenseNet.build(sizes, acts, cfg.train.dropout, seed=cfg.train.seed))


def accuracy(model: ClassifierModel, X, y) -> float:
    if len(X) == 0:
        return float("nan")
    return float((model.probabilities(X).argmax(axis=1) == np.asarray(y)).mean())


def train_classifier(X, y, cfg: ClassifierConfig | None = None, X_val=None, y_val=None) -> ClassifierModel:
    cfg = cfg or ClassifierConfig()
    X = np.asarray(X, float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0 or len(np.unique(y)) < 2:
        raise InsufficientData("classifier needs at least two distinct labels")
    model = build_classifier(X.shape[1], cfg)
    init_head(model.net, y, True, cfg.n_classes, cfg.train.seed + 7919)
    model.history = fit(model.net, X, y, cfg.train, "xent", X_val, y_val)
    if X_val is not None and len(X_val):
        model.val_accuracy = accuracy(model, X_val, y_val)
    else:
        model.val_accuracy = accuracy(model, X, y)
    return model


def train_eta(X, seconds, cfg: EtaConfig | None = None, X_val=None, seconds_val=None) -> EtaModel:
    """Fit log(1 + seconds) with squared error."""
    cfg = cfg or EtaConfig()
    X = np.asarray(X, float)
    seconds = np.asarray(seconds, float)
    if len(X) == 0:
        raise InsufficientData("no travel-time rows")
    if (seconds <= 0).any():
        raise InsufficientData("travel-time labels must be positive")
    model = build_eta(X.shape[1], cfg)
    init_head(model.net, np.log1p(seconds), False, seed=cfg.train.seed + 7919)
    Yv = None if seconds_val is None else np.log1p(np.asarray(seconds_val, float))[:, None]
    model.history = fit(model.net, X, np.log1p(seconds)[:, None], cfg.train, "mse", X_val, Yv)
    return model


def predict_cell_time(model: EtaModel, features):
    """Seconds for one feature vector (float) or a batch (array); always positive."""
    x = np.asarray(features, float)
    if x.shape[-1] != model.net.n_in:
        raise ShapeMismatch(f"feature width {x.shape[-1]} != model width {model.net.n_in}")
    out = np.maximum(np.expm1(forward(model.net, x)[0][..., 0]), MIN_SECONDS)
    return float(out) if x.ndim == 1 else out


def transfer(source, X, y, cfg: TrainConfig, X_val=None, y_val=None):
    """Copy the source body, freeze it, attach a fresh head and train only the head.

    ``source`` is left untouched.  ``y`` holds class labels for a classifier and
    seconds for a travel-time model.
    """
    X = np.asarray(X, float)
    if len(X) == 0:
        X = np.zeros((0, source.net.n_in))
    if X.ndim != 2 or X.shape[1] != source.net.n_in:
        raise WidthMismatch(f"target width {X.shape[1]} != source width {source.net.n_in}")
    net = source.net.copy()
    for i in range(len(net) - 1):
        net.layers[i].frozen = True
    head = net.layers[-1]
    rng = np.random.default_rng(cfg.seed + 7919)
    net.layers[-1] = Layer(glorot_uniform(head.fan_in, head.fan_out, rng), np.zeros(head.fan_out),
                           head.activation, head.dropout, frozen=False)
    net.version += 1
    is_classifier = isinstance(source, ClassifierModel)
    if is_classifier:
        target = ClassifierModel(net, source.n_classes)
    else:
        target = EtaModel(net)
    if len(X) == 0:
        log.warning("transfer: no target data, returning the untrained head")
        target.history = History()
        return target
    if is_classifier:
        init_head(net, y, True, source.n_classes, cfg.seed + 7919)
        target.history = fit(net, X, np.asarray(y, np.int64), cfg, "xent", X_val, y_val)
        target.val_accuracy = accuracy(target, X_val, y_val) if X_val is not None and len(X_val) else None
    else:
        Y = np.log1p(np.asarray(y, float))[:, None]
        init_head(net, Y, False, seed=cfg.seed + 7919)
        Yv = None if y_val is None else np.log1p(np.asarray(y_val, float))[:, None]
        target.history = fit(net, X, Y, cfg, "mse", X_val, Yv)
    return target


# -- self-contained prediction bundle ----------------------------------------

@dataclass
class ModelBundle:
    grid: GridSpec
    classifier: ClassifierModel
    eta: EtaModel
    embedding: CellEmbedding
    k: int
    global_max_speed: float
    domain: str = ""

    @property
    def layout(self) -> dict:
        return {
            "cell_vector": list(FEATURE_NAMES),
            "classifier_input": list(FEATURE_NAMES) + ["speed_level"],
            "n_classes": self.classifier.n_classes,
            "k": self.k,
            "embed_dim": self.embedding.dim,
            "eta_input_width": CELL_VECTOR_WIDTH + self.classifier.n_classes + self.embedding.dim + 1,
            "chord_scale_m": self.grid.phi * DEG_METERS * math.sqrt(2),
        }

    def to_bytes(self) -> bytes:
        cmeta, arrays = net_to_record(self.classifier.net, "classifier")
        emeta, a2 = net_to_record(self.eta.net, "eta")
        wmeta, a3 = self.embedding.to_record("embedding")
        arrays.update(a2)
        arrays.update(a3)
        meta = {"grid": self.grid.to_dict(), "classifier": cmeta, "eta": emeta, "embedding": wmeta,
                "layout": self.layout, "global_max_speed": self.global_max_speed, "domain": self.domain}
        return container.dumps("bundle", meta, arrays)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelBundle":
        meta, arrays = container.loads(blob, "bundle")
        layout = meta["layout"]
        return cls(GridSpec.from_dict(meta["grid"]),
                   ClassifierModel(net_from_record(meta["classifier"], arrays, "classifier"), layout["n_classes"]),
                   EtaModel(net_from_record(meta["eta"], arrays, "eta")),
                   CellEmbedding.from_record(meta["embedding"], arrays, "embedding"),
                   layout["k"], meta["global_max_speed"], meta["domain"])

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    if "hidden" in d:
        d["hidden"] = list(d["hidden"])
    return d


def save_classifier(path, model: ClassifierModel, global_max_speed: float, grid: GridSpec) -> None:
    meta, arrays = net_to_record(model.net, "classifier")
    header = {"net": meta, "n_classes": model.n_classes, "global_max_speed": global_max_speed,
              "grid": grid.to_dict(), "val_accuracy": model.val_accuracy,
              "best_epoch": model.history.best_epoch if model.history else None}
    container.save(path, "classifier", header, arrays)


def load_classifier(path) -> tuple[ClassifierModel, float, GridSpec]:
    meta, arrays = container.load(path, "classifier")
    model = ClassifierModel(net_from_record(meta["net"], arrays, "classifier"), meta["n_classes"],
                            val_accuracy=meta["val_accuracy"])
    return model, meta["global_max_speed"], GridSpec.from_dict(meta["grid"])
