"""Shared-weight two-branch LSTM regressor for citation distance.

Each document sequence is embedded, run through the *same* LSTM, and its full
``(L, H)`` output flattened. The two flattened branches are concatenated
(branch A first) and a single linear unit produces the distance::

    pred = target_shift + target_scale * dense([flat(h_a), flat(h_b)])

``target_shift`` / ``target_scale`` standardize the regression target so the
optimizer works in unit scale; with the defaults (0, 1) the model output is
exactly the dense unit.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import struct
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from vcp.nn import (
    AdamState,
    DenseParams,
    LstmParams,
    adam_step,
    dense_backward,
    dense_forward,
    flatten,
    lstm_backward,
    lstm_forward,
    mae_loss,
)
from vcp.pairs import MAX_DISTANCE, MIN_DISTANCE
from vcp.rng import make_rng

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"VCPCKPT\x00"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass
class TrainHistory:
    train_mae: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def rows(self) -> list[dict]:
        return [
            {"epoch": e, "train_mae": tr, "val_mae": va}
            for e, (tr, va) in enumerate(zip(self.train_mae, self.val_mae), 1)
        ]


@dataclass
class PairSet:
    """Encoded examples: two ``(N, L)`` id matrices and ``N`` targets."""

    seq_a: np.ndarray
    seq_b: np.ndarray
    distance: np.ndarray

    def __post_init__(self):
        self.seq_a = np.asarray(self.seq_a, dtype=np.int64)
        self.seq_b = np.asarray(self.seq_b, dtype=np.int64)
        self.distance = np.asarray(self.distance, dtype=np.float64)
        if not (self.seq_a.shape == self.seq_b.shape and self.seq_a.ndim == 2):
            raise ValueError(f"sequence shapes {self.seq_a.shape} vs {self.seq_b.shape}")
        if self.distance.shape != (self.seq_a.shape[0],):
            raise ValueError("one target per example required")

    def __len__(self) -> int:
        return self.seq_a.shape[0]


@dataclass
class SiameseModel:
    embedding: np.ndarray
    lstm: LstmParams
    head: DenseParams
    seq_len: int
    target_shift: float = 0.0
    target_scale: float = 1.0
    trainable_embeddings: bool = False

    @property
    def hidden(self) -> int:
        return self.lstm.hidden

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    @classmethod
    def create(
        cls,
        embedding: np.ndarray,
        seq_len: int,
        hidden: int,
        seed: int,
        target_shift: float = 0.0,
        target_scale: float = 1.0,
        trainable_embeddings: bool = False,
    ) -> "SiameseModel":
        rng = make_rng(seed, "init")
        embedding = np.array(embedding, dtype=np.float64)
        if not trainable_embeddings:
            embedding.flags.writeable = False
        lstm = LstmParams.init(embedding.shape[1], hidden, rng)
        head = DenseParams.init(2 * seq_len * hidden, rng)
        return cls(embedding, lstm, head, seq_len, target_shift, target_scale, trainable_embeddings)

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name, in checkpoint order."""
        out = {}
        if self.trainable_embeddings:
            out["embedding"] = self.embedding
        out["lstm.W"] = self.lstm.W
        out["lstm.U"] = self.lstm.U
        out["lstm.b"] = self.lstm.b
        out["head.W"] = self.head.W
        out["head.b"] = self.head.b
        return out


@dataclass
class ForwardCache:
    ids: np.ndarray
    lstm: object
    features: np.ndarray


def _check_ids(model: SiameseModel, ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape[-1] != model.seq_len:
        raise ValueError(f"sequence length {ids.shape[-1]} != model length {model.seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= model.embedding.shape[0]):
        raise ValueError("token id outside the embedding table")
    return ids


def encode_branch(model: SiameseModel, ids: np.ndarray) -> np.ndarray:
    """Flattened LSTM output for a batch of sequences; the same for either branch."""
    ids = _check_ids(model, ids)
    h, _ = lstm_forward(model.embedding[ids], model.lstm)
    return flatten(h)


def forward_batch(
    model: SiameseModel, seq_a: np.ndarray, seq_b: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    seq_a = _check_ids(model, np.atleast_2d(seq_a))
    seq_b = _check_ids(model, np.atleast_2d(seq_b))
    n = seq_a.shape[0]
    ids = np.concatenate([seq_a, seq_b])
    # the two branches run as one batch through the single parameter set
    h, lcache = lstm_forward(model.embedding[ids], model.lstm)
    flat = flatten(h)
    features = np.concatenate([flat[:n], flat[n:]], axis=1)
    raw = dense_forward(features, model.head)
    return model.target_shift + model.target_scale * raw, ForwardCache(ids, lcache, features)


def forward(model: SiameseModel, seq_a: np.ndarray, seq_b: np.ndarray) -> float:
    """Unclamped predicted distance for one pair of sequences."""
    seq_a = np.asarray(seq_a)
    seq_b = np.asarray(seq_b)
    if seq_a.ndim != 1 or seq_b.ndim != 1:
        raise ValueError("forward takes one sequence per branch; use forward_batch")
    pred, _ = forward_batch(model, seq_a, seq_b)
    return float(pred[0])


def backward_batch(
    model: SiameseModel, dpred: np.ndarray, cache: ForwardCache
) -> dict[str, np.ndarray]:
    """Gradients of ``sum(dpred * pred)`` for every array in ``model.params()``."""
    dfeat, dhead = dense_backward(np.asarray(dpred) * model.target_scale, cache.features, model.head)
    n = dfeat.shape[0]
    half = dfeat.shape[1] // 2
    dflat = np.concatenate([dfeat[:, :half], dfeat[:, half:]])
    dh = dflat.reshape(2 * n, model.seq_len, model.hidden)
    dx, dlstm = lstm_backward(dh, cache.lstm)
    grads = {
        "lstm.W": dlstm.W,
        "lstm.U": dlstm.U,
        "lstm.b": dlstm.b,
        "head.W": dhead.W,
        "head.b": dhead.b,
    }
    if model.trainable_embeddings:
        demb = np.zeros_like(model.embedding)
        np.add.at(demb, cache.ids, dx)
        demb[0] = 0.0  # padding row stays zero
        grads = {"embedding": demb, **grads}
    return grads


def round_distance(raw: float) -> int:
    """Clamp to the distance range, then round half away from zero."""
    clamped = min(max(raw, MIN_DISTANCE), MAX_DISTANCE)
    return int(math.floor(clamped + 0.5))


def predict_raw(model: SiameseModel, data: PairSet, batch_size: int = 256) -> np.ndarray:
    out = np.empty(len(data))
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        out[sl], _ = forward_batch(model, data.seq_a[sl], data.seq_b[sl])
    return out


def predict(model: SiameseModel, seq_a: np.ndarray, seq_b: np.ndarray) -> int:
    return round_distance(forward(model, seq_a, seq_b))


def predict_batch(model: SiameseModel, data: PairSet) -> np.ndarray:
    raw = np.clip(predict_raw(model, data), MIN_DISTANCE, MAX_DISTANCE)
    return np.floor(raw + 0.5).astype(np.int64)


class EarlyStopping:
    """Tracks the best validation score; signals a stop after ``patience`` misses."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.misses = 0

    def update(self, score: float, epoch: int) -> bool:
        """Record ``score``; True when it is a new best."""
        if score < self.best:
            self.best = score
            self.best_epoch = epoch
            self.misses = 0
            return True
        self.misses += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.misses >= self.patience


def _snapshot(model: SiameseModel) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.params().items()}


def _restore(model: SiameseModel, snap: dict[str, np.ndarray]) -> None:
    for k, v in model.params().items():
        v[...] = snap[k]


def train(
    model: SiameseModel,
    train_set: PairSet,
    val_set: PairSet,
    cfg: TrainConfig,
    val_metric: Callable[[SiameseModel, int], float] | None = None,
) -> tuple[SiameseModel, TrainHistory]:
    """Minibatch MAE training with Adam and early stopping on validation MAE.

    The model is updated in place and, on return, holds the parameters of the
    best validation epoch. ``val_metric(model, epoch)`` replaces the built-in
    validation MAE when given.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    rng = make_rng(cfg.seed, "batches")
    state = AdamState()
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()
    best = _snapshot(model)
    n = len(train_set)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred, cache = forward_batch(model, train_set.seq_a[idx], train_set.seq_b[idx])
            loss, dpred = mae_loss(pred, train_set.distance[idx])
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting at {start}"
                )
            grads = backward_batch(model, dpred, cache)
            adam_step(model.params(), grads, state, lr=cfg.lr)
            total += loss * len(idx)
        train_mae = total / n

        if val_metric is not None:
            val_mae = float(val_metric(model, epoch))
        else:
            val_mae, _ = mae_loss(predict_raw(model, val_set), val_set.distance)
        if not math.isfinite(val_mae):
            raise TrainingError(f"non-finite validation MAE at epoch {epoch}")

        history.train_mae.append(train_mae)
        history.val_mae.append(val_mae)
        logger.info("epoch %d  train MAE %.4f  val MAE %.4f", epoch, train_mae, val_mae)
        if stopper.update(val_mae, epoch):
            best = _snapshot(model)
        history.stopped_epoch = epoch
        if stopper.should_stop:
            logger.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break

    history.best_epoch = stopper.best_epoch
    _restore(model, best)
    return model, history


# -- checkpoints ------------------------------------------------------------
#
#   magic        8 bytes   b"VCPCKPT\0"
#   version      u32
#   config_len   u32, then config_len bytes of UTF-8 JSON (sorted keys)
#   vocab_hash   32 bytes  SHA-256 (all zero when unknown)
#   n_tensors    u32
#   per tensor:  name_len u16, name UTF-8, ndim u32, ndim x u64 dims,
#                prod(dims) x f64 values, row-major
#
# All integers and floats little-endian. Tensors in order: embedding,
# lstm.W, lstm.U, lstm.b, head.W, head.b.

_TENSOR_ORDER = ("embedding", "lstm.W", "lstm.U", "lstm.b", "head.W", "head.b")


def _tensors(model: SiameseModel) -> dict[str, np.ndarray]:
    return {
        "embedding": model.embedding,
        "lstm.W": model.lstm.W,
        "lstm.U": model.lstm.U,
        "lstm.b": model.lstm.b,
        "head.W": model.head.W,
        "head.b": model.head.b,
    }


def save_checkpoint(
    path: str | Path,
    model: SiameseModel,
    cfg: TrainConfig | None = None,
    vocab_hash: bytes | None = None,
    extra: dict | None = None,
) -> None:
    config = {
        "seq_len": model.seq_len,
        "hidden": model.hidden,
        "dim": model.dim,
        "vocab_rows": int(model.embedding.shape[0]),
        "target_shift": model.target_shift,
        "target_scale": model.target_scale,
        "trainable_embeddings": model.trainable_embeddings,
        "train": asdict(cfg) if cfg is not None else None,
        "extra": extra or {},
    }
    if vocab_hash is not None and len(vocab_hash) != 32:
        raise ValueError("vocab hash must be a 32-byte SHA-256 digest")
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
    buf.write(blob)
    buf.write(vocab_hash or bytes(32))
    tensors = _tensors(model)
    buf.write(struct.pack("<I", len(tensors)))
    for name in _TENSOR_ORDER:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw_name = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw_name)))
        buf.write(raw_name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read(buf: io.BytesIO, n: int) -> bytes:
    chunk = buf.read(n)
    if len(chunk) != n:
        raise CheckpointError("truncated checkpoint")
    return chunk


def load_checkpoint(
    path: str | Path, expected_vocab_hash: bytes | None = None
) -> tuple[SiameseModel, dict]:
    """Read a checkpoint; returns the model and the metadata block.

    Metadata holds the JSON config plus ``vocab_hash`` (bytes or None). A
    vocabulary hash differing from ``expected_vocab_hash`` is logged as a
    warning, not an error.
    """
    buf = io.BytesIO(Path(path).read_bytes())
    if _read(buf, 8) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    version, blob_len = struct.unpack("<II", _read(buf, 8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    try:
        config = json.loads(_read(buf, blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt config block ({exc})") from None
    vocab_hash = _read(buf, 32)
    (count,) = struct.unpack("<I", _read(buf, 4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read(buf, 2))
        name = _read(buf, name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", _read(buf, 4))
        shape = struct.unpack(f"<{ndim}Q", _read(buf, 8 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(_read(buf, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if buf.read(1):
        raise CheckpointError(f"{path}: trailing bytes after tensors")
    if tuple(tensors) != _TENSOR_ORDER:
        raise CheckpointError(f"{path}: unexpected tensors {list(tensors)}")

    vocab_hash = None if vocab_hash == bytes(32) else vocab_hash
    if expected_vocab_hash is not None and vocab_hash != expected_vocab_hash:
        logger.warning("%s: checkpoint was trained with a different vocabulary", path)

    embedding = tensors["embedding"]
    trainable = bool(config["trainable_embeddings"])
    if not trainable:
        embedding.flags.writeable = False
    model = SiameseModel(
        embedding=embedding,
        lstm=LstmParams(tensors["lstm.W"], tensors["lstm.U"], tensors["lstm.b"]),
        head=DenseParams(tensors["head.W"], tensors["head.b"]),
        seq_len=int(config["seq_len"]),
        target_shift=float(config["target_shift"]),
        target_scale=float(config["target_scale"]),
        trainable_embeddings=trainable,
    )
    model.lstm.validate()
    if model.head.W.shape != (2 * model.seq_len * model.hidden,):
        raise CheckpointError(f"{path}: head width does not match seq_len and hidden size")
    meta = dict(config)
    meta["vocab_hash"] = vocab_hash
    return model, meta


def clone(model: SiameseModel) -> SiameseModel:
    return copy.deepcopy(model)
