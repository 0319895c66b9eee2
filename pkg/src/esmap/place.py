"""Place encoding: orientation-robust embeddings trained with a triplet loss.

The encoder is a small feedforward network over rotation-pooled view
features.  Pooling takes the elementwise max over the four lattice
rotations of the egocentric view, which makes the embedding invariant to
90-degree heading changes by construction.  All gradients are analytic
(hand-rolled backprop) and checked against finite differences in the tests.

The loss compares the anchor-positive and anchor-negative embedding
distances through a softmax over negated distances.  The default
("corrected") orientation is small when the positive is near and the
negative far; the "literal" orientation is its complement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .errors import EmptyResult, ShapeMismatch
from .geometry import Pose

EMBED_DIM = 128
PARAMS_FILE_VERSION = 1


def rotation_pooled_features(view: np.ndarray) -> np.ndarray:
    """Max-pool a square view over its four lattice rotations, flattened."""
    pooled = np.maximum.reduce([np.rot90(view, k) for k in range(4)])
    return pooled.ravel().astype(float)


@dataclass
class EncoderParams:
    """Weights and biases of the feedforward embedding network.

    ``weights[i]`` has shape (fan_out, fan_in); hidden layers use tanh and
    so does the output, keeping embeddings in (-1, 1).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def flatten(self) -> list[np.ndarray]:
        return self.weights + self.biases


def init_params(layer_sizes: list[int], rng: np.random.Generator) -> EncoderParams:
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(weights=weights, biases=biases)


def _forward(params: EncoderParams, x: np.ndarray) -> list[np.ndarray]:
    """Forward pass on a (B, d_in) batch; returns activations per layer."""
    acts = [x]
    for w, b in zip(params.weights, params.biases):
        acts.append(np.tanh(acts[-1] @ w.T + b))
    return acts


def encode_features(params: EncoderParams, feats: np.ndarray) -> np.ndarray:
    feats = np.atleast_2d(np.asarray(feats, dtype=float))
    if feats.shape[1] != params.weights[0].shape[1]:
        raise ShapeMismatch(
            f"feature dim {feats.shape[1]} != input dim {params.weights[0].shape[1]}"
        )
    return _forward(params, feats)[-1]


def encode_place(params: EncoderParams, view: np.ndarray) -> np.ndarray:
    """Embed a single egocentric view (rotation pooling + forward pass)."""
    out = encode_features(params, rotation_pooled_features(view))
    return out[0]


def embedding_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def triplet_loss(a: np.ndarray, p: np.ndarray, n: np.ndarray, form: str = "corrected") -> float:
    """Softmax-paired loss over embedding distances, in (0, 1)."""
    dp = embedding_distance(a, p)
    dn = embedding_distance(a, n)
    if form == "corrected":
        return float(_sigmoid(-(dn - dp)))
    if form == "literal":
        return float(_sigmoid(-(dp - dn)))
    raise ValueError(f"unknown loss form {form!r}")


@dataclass(frozen=True)
class Triplet:
    """Anchor/positive/negative feature vectors with their step indices."""

    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    t_anchor: int = 0
    t_pos: int = 0
    t_neg: int = 0


def _zeros_like_params(params: EncoderParams) -> EncoderParams:
    return EncoderParams(
        weights=[np.zeros_like(w) for w in params.weights],
        biases=[np.zeros_like(b) for b in params.biases],
    )


def loss_gradients(
    params: EncoderParams, batch: list[Triplet], form: str = "corrected"
) -> tuple[float, EncoderParams]:
    """Mean triplet loss and its exact gradient w.r.t. every parameter."""
    if not batch:
        raise ValueError("batch must be non-empty")
    xa = np.stack([t.anchor for t in batch]).astype(float)
    xp = np.stack([t.positive for t in batch]).astype(float)
    xn = np.stack([t.negative for t in batch]).astype(float)
    if xa.shape[1] != params.weights[0].shape[1]:
        raise ShapeMismatch("triplet feature dim does not match the network input")

    acts = {s: _forward(params, x) for s, x in (("a", xa), ("p", xp), ("n", xn))}
    ea, ep, en = acts["a"][-1], acts["p"][-1], acts["n"][-1]
    dim = ea.shape[1]
    bsz = ea.shape[0]

    dp = np.mean((ea - ep) ** 2, axis=1)
    dn = np.mean((ea - en) ** 2, axis=1)
    sign = 1.0 if form == "corrected" else -1.0
    if form not in ("corrected", "literal"):
        raise ValueError(f"unknown loss form {form!r}")
    loss = _sigmoid(sign * (dp - dn))
    # d(mean loss)/d(dp), d(dn); sigmoid' = L(1-L)
    g = (loss * (1.0 - loss) * sign / bsz)[:, None]

    d_ea = g * (2.0 / dim) * ((ea - ep) - (ea - en))
    d_ep = -g * (2.0 / dim) * (ea - ep)
    d_en = g * (2.0 / dim) * (ea - en)

    grads = _zeros_like_params(params)
    for stream, d_out in (("a", d_ea), ("p", d_ep), ("n", d_en)):
        layer_acts = acts[stream]
        delta = d_out * (1.0 - layer_acts[-1] ** 2)
        for li in range(len(params.weights) - 1, -1, -1):
            grads.weights[li] += delta.T @ layer_acts[li]
            grads.biases[li] += delta.sum(axis=0)
            if li > 0:
                delta = (delta @ params.weights[li]) * (1.0 - layer_acts[li] ** 2)
    return float(loss.mean()), grads


def mine_triplets(
    history: list[tuple[Pose, np.ndarray]],
    eps_pos: float,
    eps_neg: float,
    gap: int,
    rng: np.random.Generator,
    n_triplets: int | None = None,
) -> list[Triplet]:
    """Sample triplets from an episode history by spatial proximity.

    Positives lie within ``eps_pos`` meters of the anchor and at least
    ``gap`` steps away in time; negatives lie farther than ``eps_neg``.
    Anchors lacking a valid positive or negative are skipped.
    """
    if eps_pos >= eps_neg:
        raise ValueError("eps_pos must be < eps_neg")
    n = len(history)
    if n_triplets is None:
        n_triplets = n
    if n == 0:
        raise EmptyResult("empty history")

    positions = np.array([[p.x, p.y] for p, _ in history])
    feats = [rotation_pooled_features(v) for _, v in history]
    dists = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=2)
    times = np.arange(n)

    triplets = []
    for _ in range(n_triplets):
        a = int(rng.integers(n))
        pos_ok = (dists[a] <= eps_pos) & (np.abs(times - a) >= gap)
        neg_ok = dists[a] > eps_neg
        pos_idx = np.flatnonzero(pos_ok)
        neg_idx = np.flatnonzero(neg_ok)
        if len(pos_idx) == 0 or len(neg_idx) == 0:
            continue
        p = int(rng.choice(pos_idx))
        ng = int(rng.choice(neg_idx))
        triplets.append(
            Triplet(
                anchor=feats[a], positive=feats[p], negative=feats[ng],
                t_anchor=a, t_pos=p, t_neg=ng,
            )
        )
    if not triplets:
        raise EmptyResult("no anchor has both a valid positive and negative")
    return triplets


@dataclass
class TrainConfig:
    lr: float = 0.002
    momentum: float = 0.5  # beta1 for adam, velocity decay for sgd
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"  # or "sgd"
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0
    loss_form: str = "corrected"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class _Optimizer:
    def __init__(self, params: EncoderParams, cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.m = _zeros_like_params(params)
        self.v = _zeros_like_params(params) if cfg.optimizer == "adam" else None

    def update(self, params: EncoderParams, grads: EncoderParams) -> None:
        cfg = self.cfg
        self.step += 1
        for tgt, g, m1, v1 in zip(
            params.flatten(), grads.flatten(), self.m.flatten(),
            self.v.flatten() if self.v is not None else self.m.flatten(),
        ):
            if cfg.optimizer == "adam":
                m1 *= cfg.momentum
                m1 += (1 - cfg.momentum) * g
                v1 *= cfg.beta2
                v1 += (1 - cfg.beta2) * g * g
                mhat = m1 / (1 - cfg.momentum ** self.step)
                vhat = v1 / (1 - cfg.beta2 ** self.step)
                tgt -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)
            else:
                m1 *= cfg.momentum
                m1 += g
                tgt -= cfg.lr * m1


def train_encoder(
    triplets: list[Triplet],
    layer_sizes: list[int] | None = None,
    cfg: TrainConfig | None = None,
    params: EncoderParams | None = None,
) -> tuple[EncoderParams, list[float]]:
    """Minibatch-train the encoder; returns final params and per-epoch loss."""
    if not triplets:
        raise EmptyResult("no triplets to train on")
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        if layer_sizes is None:
            d_in = len(triplets[0].anchor)
            layer_sizes = [d_in, 256, 256, EMBED_DIM]
        params = init_params(layer_sizes, rng)
    else:
        params = params.copy()

    opt = _Optimizer(params, cfg)
    curve = []
    idx = np.arange(len(triplets))
    for _ in range(cfg.epochs):
        rng.shuffle(idx)
        losses = []
        for start in range(0, len(idx), cfg.batch_size):
            batch = [triplets[i] for i in idx[start : start + cfg.batch_size]]
            loss, grads = loss_gradients(params, batch, cfg.loss_form)
            opt.update(params, grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return params, curve


def save_params(params: EncoderParams, path) -> None:
    """Versioned JSON parameter file: layer shapes plus row-major weights."""
    doc = {
        "version": PARAMS_FILE_VERSION,
        "layer_sizes": params.layer_sizes,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_params(path) -> EncoderParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != PARAMS_FILE_VERSION:
        raise ValueError(f"unsupported params file version {doc.get('version')}")
    sizes = doc["layer_sizes"]
    weights = [
        np.array(w, dtype=float).reshape(out, inp)
        for w, inp, out in zip(doc["weights"], sizes[:-1], sizes[1:])
    ]
    biases = [np.array(b, dtype=float) for b in doc["biases"]]
    return EncoderParams(weights=weights, biases=biases)


class PlaceEncoder(BaseEstimator):
    """Sklearn-style wrapper around the triplet-trained embedding network.

    ``fit`` takes the episode history (views plus agent positions), mines
    triplets by spatial proximity, and trains from scratch.  ``transform``
    maps views to embeddings.
    """

    def __init__(
        self,
        hidden=(256, 256),
        embed_dim=EMBED_DIM,
        lr=0.002,
        momentum=0.5,
        optimizer="adam",
        loss_form="corrected",
        batch_size=16,
        epochs=20,
        seed=0,
        eps_pos=0.5,
        eps_neg=1.0,
        gap=8,
        n_triplets=None,
    ):
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.lr = lr
        self.momentum = momentum
        self.optimizer = optimizer
        self.loss_form = loss_form
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.eps_pos = eps_pos
        self.eps_neg = eps_neg
        self.gap = gap
        self.n_triplets = n_triplets

    def fit(self, X, y):
        """X: iterable of views (N, h, w); y: agent positions (N, 2) or poses."""
        views = [np.asarray(v, dtype=float) for v in X]
        poses = [p if isinstance(p, Pose) else Pose(float(p[0]), float(p[1])) for p in y]
        history = list(zip(poses, views))
        rng = np.random.default_rng(self.seed)
        triplets = mine_triplets(
            history, self.eps_pos, self.eps_neg, self.gap, rng,
            n_triplets=self.n_triplets,
        )
        d_in = len(triplets[0].anchor)
        cfg = TrainConfig(
            lr=self.lr, momentum=self.momentum, optimizer=self.optimizer,
            batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
            loss_form=self.loss_form,
        )
        sizes = [d_in, *self.hidden, self.embed_dim]
        self.params_, self.loss_curve_ = train_encoder(triplets, sizes, cfg)
        return self

    def transform(self, X):
        feats = np.stack([rotation_pooled_features(np.asarray(v, float)) for v in X])
        return encode_features(self.params_, feats)

    def encode(self, view) -> np.ndarray:
        return encode_place(self.params_, np.asarray(view, float))

    def save(self, path) -> None:
        save_params(self.params_, path)

    @classmethod
    def from_file(cls, path) -> "PlaceEncoder":
        enc = cls()
        enc.params_ = load_params(path)
        enc.loss_curve_ = []
        return enc
