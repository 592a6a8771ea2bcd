"""Small feed-forward extractor trained against surplus mixture-style targets.

The model is an MLP ``g`` (two affine layers, rectified, with a final
rectifier keeping features non-negative) followed by a selection head ``sr``
(two affine layers with one rectifier between) and a trainable classifier
matrix ``eta`` over the head output.  Each real class owns two target rows,
one for the plain sample and one for its index-reversed transform; fused
cross-class samples target rows of a fixed virtual-class pool.  Training is
plain SGD with momentum, fully deterministic under the config seed, with all
gradients derived analytically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EmbeddingDataset, EmbeddingRecord
from .errors import (
    ConfigError,
    FormatError,
    LambdaOutOfRangeError,
    SelfFusionError,
)
from .vectors import flip_vector


def make_intra_pair(x) -> tuple[np.ndarray, np.ndarray]:
    """(x, x_hat): the sample and its index-reversed transform.

    The transform is a deterministic involution, so applying it twice gives
    back the input bitwise.
    """
    arr = np.asarray(x)
    return arr, flip_vector(arr)


def fuse_inter(
    xi: np.ndarray,
    xi_hat: np.ndarray,
    xj: np.ndarray,
    xj_hat: np.ndarray,
    class_i: int,
    class_j: int,
    lam: float,
    lambda_range: tuple[float, float] = (0.4, 0.6),
):
    """Convex cross-class fusion of two intra pairs, channel by channel.

    Returns (fused, fused_hat, fused_flipped, fused_flipped_hat) matching the
    2x2 channel layout: every channel is lam * i + (1 - lam) * j.
    """
    if class_i == class_j:
        raise SelfFusionError("fusion requires two distinct classes")
    lo, hi = lambda_range
    if not lo <= lam <= hi:
        raise LambdaOutOfRangeError(f"lambda {lam} outside [{lo}, {hi}]")
    mix = lambda a, b: lam * np.asarray(a, dtype=np.float64) + (1.0 - lam) * np.asarray(
        b, dtype=np.float64
    )
    return mix(xi, xj), mix(xi_hat, xj_hat)


def margin_ce_loss(logits, target: int, delta: float) -> tuple[float, np.ndarray]:
    """Cross-entropy with a positive margin subtracted from the target logit.

    loss = -log( e^{z_y - delta} / (sum_{j != y} e^{z_j} + e^{z_y - delta}) ).
    Returns (loss, gradient w.r.t. the raw logits).  delta = 0 reduces exactly
    to standard cross-entropy.
    """
    z = np.asarray(logits, dtype=np.float64).copy()
    if not 0 <= target < z.shape[0]:
        raise ConfigError(f"target row {target} outside logits of size {z.shape[0]}")
    z[target] -= delta
    m = float(z.max())
    log_denom = m + float(np.log(np.sum(np.exp(z - m))))
    loss = log_denom - z[target]
    grad = np.exp(z - log_denom)
    grad[target] -= 1.0
    return float(loss), grad


def _margin_ce_batch(logits: np.ndarray, targets: np.ndarray, delta: float):
    """Mean margin cross-entropy over rows plus the gradient w.r.t. logits."""
    z = logits.copy()
    rows = np.arange(z.shape[0])
    z[rows, targets] -= delta
    m = z.max(axis=1, keepdims=True)
    log_denom = m[:, 0] + np.log(np.sum(np.exp(z - m), axis=1))
    losses = log_denom - z[rows, targets]
    grad = np.exp(z - log_denom[:, None])
    grad[rows, targets] -= 1.0
    return float(losses.mean()), grad / z.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one stimulation-training run."""

    epochs: int = 50
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    delta: float = 0.0
    lambda_range: tuple[float, float] = (0.4, 0.6)
    virtual_pool: int | None = None  # None -> 4x the class count
    intra: bool = True
    hidden_dim: int = 64
    feat_dim: int = 32
    sr_hidden: int = 64
    sr_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.lambda_range
        if not (0 < lo <= hi < 1):
            raise ConfigError("lambda_range must satisfy 0 < lo <= hi < 1")
        if self.virtual_pool is not None and self.virtual_pool < 0:
            raise ConfigError("virtual_pool must be >= 0")
        if self.delta < 0:
            raise ConfigError("margin delta must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if min(self.hidden_dim, self.feat_dim, self.sr_hidden, self.sr_dim) < 1:
            raise ConfigError("layer widths must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "lambda_range" in kwargs:
            kwargs["lambda_range"] = tuple(kwargs["lambda_range"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad training config: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


_PARAMS = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4", "eta")


class ToyModel:
    """Extractor + selection head + classifier matrix, all dense float64.

    g(x)  = relu(relu(x @ W1 + b1) @ W2 + b2)          (non-negative features)
    sr(u) = relu(u @ W3 + b3) @ W4 + b4
    logits(x) = sr(g(x)) @ eta.T

    Row layout of ``eta``: real class c has rows 2c (plain channel) and
    2c + 1 (transformed channel); virtual slot v has rows
    2 * n_classes + 2v and + 1.
    """

    def __init__(self, params: dict[str, np.ndarray], n_classes: int, virtual_pool: int):
        for name in _PARAMS:
            setattr(self, name, np.asarray(params[name], dtype=np.float64))
        self.n_classes = n_classes
        self.virtual_pool = virtual_pool
        expected_rows = 2 * n_classes + 2 * virtual_pool
        if self.eta.shape[0] != expected_rows:
            raise ConfigError(
                f"eta has {self.eta.shape[0]} rows, expected {expected_rows}"
            )

    # -- construction --------------------------------------------------------

    @classmethod
    def init(
        cls,
        input_dim: int,
        n_classes: int,
        virtual_pool: int,
        hidden_dim: int,
        feat_dim: int,
        sr_hidden: int,
        sr_dim: int,
        seed: int,
    ) -> "ToyModel":
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))

        def layer(n_in, n_out):
            w = rng.normal(scale=np.sqrt(2.0 / n_in), size=(n_in, n_out))
            b = np.full(n_out, 0.01)  # small positive bias against dead rectifiers
            return w, b

        W1, b1 = layer(input_dim, hidden_dim)
        W2, b2 = layer(hidden_dim, feat_dim)
        W3, b3 = layer(feat_dim, sr_hidden)
        W4, b4 = layer(sr_hidden, sr_dim)
        rows = 2 * n_classes + 2 * virtual_pool
        eta = rng.normal(scale=1.0 / np.sqrt(sr_dim), size=(rows, sr_dim))
        return cls(
            dict(W1=W1, b1=b1, W2=W2, b2=b2, W3=W3, b3=b3, W4=W4, b4=b4, eta=eta),
            n_classes,
            virtual_pool,
        )

    @classmethod
    def identity(cls, input_dim: int, n_classes: int = 1) -> "ToyModel":
        """Diagnostic model whose g is the identity on non-negative input."""
        eye = np.eye(input_dim)
        zero = np.zeros(input_dim)
        rows = 2 * n_classes
        params = dict(
            W1=eye, b1=zero, W2=eye, b2=zero, W3=eye, b3=zero, W4=eye, b4=zero,
            eta=np.eye(rows, input_dim),
        )
        return cls(params, n_classes, 0)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.W2.shape[1]

    @property
    def sr_dim(self) -> int:
        return self.W4.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in _PARAMS}

    # -- row bookkeeping ------------------------------------------------------

    def class_row(self, class_id: int, component: int) -> int:
        return 2 * class_id + (component - 1)

    def virtual_row(self, slot: int, component: int) -> int:
        return 2 * self.n_classes + 2 * slot + (component - 1)

    # -- forward / backward ---------------------------------------------------

    def extract(self, X: np.ndarray) -> np.ndarray:
        """g(X) for a (n, input_dim) batch."""
        a1 = np.maximum(np.asarray(X, dtype=np.float64) @ self.W1 + self.b1, 0.0)
        return np.maximum(a1 @ self.W2 + self.b2, 0.0)

    def head(self, G: np.ndarray) -> np.ndarray:
        """sr(G) for a (n, feat_dim) batch of extracted features."""
        a3 = np.maximum(np.asarray(G, dtype=np.float64) @ self.W3 + self.b3, 0.0)
        return a3 @ self.W4 + self.b4

    def _forward_full(self, X: np.ndarray):
        z1 = X @ self.W1 + self.b1
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ self.W2 + self.b2
        g = np.maximum(z2, 0.0)
        z3 = g @ self.W3 + self.b3
        a3 = np.maximum(z3, 0.0)
        gt = a3 @ self.W4 + self.b4
        logits = gt @ self.eta.T
        return dict(X=X, z1=z1, a1=a1, z2=z2, g=g, z3=z3, a3=a3, gt=gt, logits=logits)

    def loss_and_grads(self, X: np.ndarray, targets: np.ndarray, delta: float):
        """Mean margin-CE over the batch and gradients for every parameter."""
        cache = self._forward_full(np.asarray(X, dtype=np.float64))
        loss, d_logits = _margin_ce_batch(cache["logits"], targets, delta)
        grads: dict[str, np.ndarray] = {}
        grads["eta"] = d_logits.T @ cache["gt"]
        d_gt = d_logits @ self.eta
        grads["W4"] = cache["a3"].T @ d_gt
        grads["b4"] = d_gt.sum(axis=0)
        d_z3 = (d_gt @ self.W4.T) * (cache["z3"] > 0)
        grads["W3"] = cache["g"].T @ d_z3
        grads["b3"] = d_z3.sum(axis=0)
        d_z2 = (d_z3 @ self.W3.T) * (cache["z2"] > 0)
        grads["W2"] = cache["a1"].T @ d_z2
        grads["b2"] = d_z2.sum(axis=0)
        d_z1 = (d_z2 @ self.W2.T) * (cache["z1"] > 0)
        grads["W1"] = cache["X"].T @ d_z1
        grads["b1"] = d_z1.sum(axis=0)
        return loss, grads, cache

    # -- persistence ----------------------------------------------------------

    MAGIC = b"FSM1"
    VERSION = 1

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<I", self.VERSION))
            fh.write(struct.pack("<II", self.n_classes, self.virtual_pool))
            fh.write(struct.pack("<I", len(_PARAMS)))
            for name in _PARAMS:
                arr = getattr(self, name)
                shape = arr.shape if arr.ndim == 2 else (arr.shape[0], 0)
                fh.write(struct.pack("<II", *shape))
                fh.write(arr.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ToyModel":
        raw = Path(path).read_bytes()
        if raw[:4] != cls.MAGIC:
            raise FormatError("not a model snapshot file")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != cls.VERSION:
            raise FormatError(f"unsupported model snapshot version {version}")
        n_classes, virtual_pool = struct.unpack_from("<II", raw, 8)
        (count,) = struct.unpack_from("<I", raw, 16)
        if count != len(_PARAMS):
            raise FormatError("unexpected parameter count in model snapshot")
        offset = 20
        params = {}
        for name in _PARAMS:
            rows, cols = struct.unpack_from("<II", raw, offset)
            offset += 8
            shape = (rows, cols) if cols else (rows,)
            size = int(np.prod(shape)) * 8
            params[name] = np.frombuffer(raw[offset : offset + size], dtype="<f8").reshape(shape)
            offset += size
        if offset != len(raw):
            raise FormatError("trailing bytes in model snapshot")
        return cls(params, n_classes, virtual_pool)


def virtual_slot(class_i: int, class_j: int, pool: int) -> int:
    """Deterministic pool slot of an unordered class pair.

    Integer mixing keeps the mapping stable across runs and platforms.
    """
    a, b = sorted((class_i, class_j))
    return ((a * 2654435761 + b * 40503) ^ (b << 7)) % pool


@dataclass
class TrainLogEntry:
    epoch: int
    loss: float
    train_acc: float
    batch_losses: list[float] = field(default_factory=list)


def _batch_rows(model, X, y, idx, cfg, rng):
    """Assemble the training rows of one batch: intra pairs plus fusions."""
    inputs = []
    targets = []
    for i in idx:
        inputs.append(X[i])
        targets.append(model.class_row(y[i], 1))
        if cfg.intra:
            inputs.append(flip_vector(X[i]))
            targets.append(model.class_row(y[i], 2))
    pool = model.virtual_pool
    if pool > 0:
        labels = y[idx]
        for pos, i in enumerate(idx):
            partners = idx[labels != y[i]]
            if partners.size == 0:
                continue
            j = int(partners[rng.integers(partners.size)])
            lam = rng.uniform(cfg.lambda_range[0], cfg.lambda_range[1])
            fused, fused_hat = fuse_inter(
                X[i], flip_vector(X[i]), X[j], flip_vector(X[j]),
                y[i], y[j], lam, cfg.lambda_range,
            )
            slot = virtual_slot(y[i], y[j], pool)
            inputs.append(fused)
            targets.append(model.virtual_row(slot, 1))
            if cfg.intra:
                inputs.append(fused_hat)
                targets.append(model.virtual_row(slot, 2))
    return np.stack(inputs), np.array(targets), 2 * len(idx) if cfg.intra else len(idx)


def train(
    X, y, n_classes: int, cfg: TrainConfig
) -> tuple[ToyModel, list[TrainLogEntry]]:
    """Train the extractor + head + classifier on base-class vectors.

    Per batch: every sample contributes its plain row target and (with intra
    on) its transformed row target; with a nonzero virtual pool each sample
    is also fused with a random different-class batch partner under a lambda
    drawn uniformly from the configured range, targeting the pair's virtual
    rows.  One analytic backward pass and an SGD-with-momentum step follow.
    Bitwise deterministic under cfg.seed.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ConfigError("X must be (n, d) with one label per row")
    if sorted(set(y.tolist())) != list(range(n_classes)):
        raise ConfigError("labels must cover 0..n_classes-1")
    pool = 4 * n_classes if cfg.virtual_pool is None else cfg.virtual_pool
    if pool > 0 and n_classes < 2:
        raise ConfigError("inter-class fusion needs at least two classes")

    model = ToyModel.init(
        input_dim=X.shape[1],
        n_classes=n_classes,
        virtual_pool=pool,
        hidden_dim=cfg.hidden_dim,
        feat_dim=cfg.feat_dim,
        sr_hidden=cfg.sr_hidden,
        sr_dim=cfg.sr_dim,
        seed=cfg.seed,
    )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    velocity = {name: np.zeros_like(p) for name, p in model.parameters().items()}
    log: list[TrainLogEntry] = []
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        entry = TrainLogEntry(epoch=epoch, loss=0.0, train_acc=0.0)
        real_correct = 0
        real_total = 0
        weighted_loss = 0.0
        total_rows = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            inputs, targets, n_real = _batch_rows(model, X, y, idx, cfg, rng)
            loss, grads, cache = model.loss_and_grads(inputs, targets, cfg.delta)
            predicted = np.argmax(cache["logits"][:n_real], axis=1)
            real_correct += int(np.sum(predicted == targets[:n_real]))
            real_total += n_real
            for name, g in grads.items():
                velocity[name] = cfg.momentum * velocity[name] + g
                getattr(model, name)[...] -= cfg.lr * velocity[name]
            entry.batch_losses.append(loss)
            weighted_loss += loss * inputs.shape[0]
            total_rows += inputs.shape[0]
        entry.loss = weighted_loss / total_rows
        entry.train_acc = real_correct / real_total
        log.append(entry)
    return model, log


def export_features(
    model: ToyModel, raw: EmbeddingDataset
) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Run every record through the extractor and the head.

    Returns one dataset per feature space; in both, the transformed channel
    holds the features of the index-reversed input.  Record order and labels
    are shared with the raw dataset (any transformed channel on the raw input
    is ignored: the transform is recomputed here).
    """
    X = np.stack([rec.feature for rec in raw.records]).astype(np.float64)
    Xf = X[:, ::-1]
    G = model.extract(X)
    Gf = model.extract(Xf)
    Gt = model.head(G)
    Gtf = model.head(Gf)
    g_records = []
    gt_records = []
    for i, rec in enumerate(raw.records):
        g_records.append(
            EmbeddingRecord(
                rec.class_id, rec.split,
                G[i].astype(np.float32), Gf[i].astype(np.float32),
            )
        )
        gt_records.append(
            EmbeddingRecord(
                rec.class_id, rec.split,
                Gt[i].astype(np.float32), Gtf[i].astype(np.float32),
            )
        )
    return (
        EmbeddingDataset(dim=model.feat_dim, records=g_records),
        EmbeddingDataset(dim=model.sr_dim, records=gt_records),
    )


def write_train_log(log: list[TrainLogEntry], path):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "train_acc"])
        for entry in log:
            writer.writerow([entry.epoch, repr(entry.loss), repr(entry.train_acc)])
