"""Neural predictive digital twin.

A small fully-connected network maps one day's lifestyle choices and
measurements to the next morning's (glucose, ketone, weight). The population
model is pretrained on pooled data from every patient, then fine-tuned per
diet-condition group with a reduced learning rate; weekly retraining
continues fine-tuning as new records accrue.

Implemented directly on numpy: forward pass, backprop, and momentum SGD are
spelled out here so the gradients can be checked against finite differences.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DomainError, PreconditionError, TrainingError
from .records import DailyRecord

# Fixed, versioned feature order. The last three are the previous day's
# measurements; intake calories stay out (linear in the macros already here).
TWIN_FEATURES = (
    "net_carb",
    "fat",
    "fiber",
    "protein",
    "activity_calories",
    "steps",
    "glucose",
    "weight",
    "ketone",
)
TARGET_NAMES = ("glucose", "ketone", "weight")
N_FEATURES = len(TWIN_FEATURES)
N_TARGETS = len(TARGET_NAMES)
_KETONE_DIM = TARGET_NAMES.index("ketone")
_STD_FLOOR = 1e-8

PROVENANCE_POOLED = "pooled"
PROVENANCE_FINE_TUNED = "fine_tuned"


@dataclass(frozen=True)
class PredictedOutcome:
    glucose: float
    ketone: float
    weight: float

    def as_array(self) -> np.ndarray:
        return np.array([self.glucose, self.ketone, self.weight], dtype=float)


@dataclass(frozen=True)
class TwinConfig:
    """Network shape and optimizer settings. The population pass uses
    lr_pretrain; fine-tuning and weekly retrains use lr_finetune."""

    hidden_sizes: tuple[int, int, int] = (32, 32, 16)
    lr_pretrain: float = 1e-3
    lr_finetune: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 2000
    patience: int = 50
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if len(self.hidden_sizes) != 3 or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("twin needs exactly three hidden layers, each nonempty")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size/patience must be >= 1, max_epochs >= 0")

    def to_json(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "lr_pretrain": self.lr_pretrain,
            "lr_finetune": self.lr_finetune,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(doc: dict) -> "TwinConfig":
        return TwinConfig(
            hidden_sizes=tuple(doc["hidden_sizes"]),
            lr_pretrain=doc["lr_pretrain"],
            lr_finetune=doc["lr_finetune"],
            momentum=doc["momentum"],
            batch_size=doc["batch_size"],
            max_epochs=doc["max_epochs"],
            patience=doc["patience"],
            val_fraction=doc["val_fraction"],
            seed=doc["seed"],
        )


@dataclass
class Dataset:
    """Supervised pairs: today's complete record -> tomorrow's measurements.
    ketone_mask is 0 where the ketone target was not observed."""

    X: np.ndarray
    Y: np.ndarray
    ketone_mask: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != N_FEATURES:
            raise DomainError(f"X must be (n, {N_FEATURES})")
        if self.Y.shape != (self.X.shape[0], N_TARGETS):
            raise DomainError(f"Y must be (n, {N_TARGETS})")
        if self.ketone_mask.shape != (self.X.shape[0],):
            raise DomainError("ketone_mask must be (n,)")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def target_mask(self) -> np.ndarray:
        mask = np.ones_like(self.Y)
        mask[:, _KETONE_DIM] = self.ketone_mask
        return mask


def features_from_record(record: DailyRecord) -> np.ndarray:
    values = [record.value(name) for name in TWIN_FEATURES]
    if any(v is None for v in values):
        missing = [n for n, v in zip(TWIN_FEATURES, values) if v is None]
        raise DomainError(f"record {record.date} incomplete for prediction: missing {missing}")
    return np.array(values, dtype=float)


def make_dataset(series: Iterable[Sequence[DailyRecord]]) -> Dataset:
    """Pair strictly consecutive days across one or more record series.

    Each series is sorted by date first, so storage order is irrelevant.
    Day t must supply every feature (impute first); day t+1 must have glucose
    and weight. A missing ketone target masks that sample's ketone loss
    instead of dropping the pair.
    """
    xs, ys, masks = [], [], []
    for records in series:
        records = sorted(records, key=lambda r: r.date)
        for today, tomorrow in zip(records, records[1:]):
            if (tomorrow.date - today.date).days != 1:
                continue
            if any(today.value(name) is None for name in TWIN_FEATURES):
                continue
            if tomorrow.glucose is None or tomorrow.weight is None:
                continue
            xs.append([today.value(n) for n in TWIN_FEATURES])
            ketone = tomorrow.ketone
            ys.append([tomorrow.glucose, 0.0 if ketone is None else ketone, tomorrow.weight])
            masks.append(0.0 if ketone is None else 1.0)
    if not xs:
        raise TrainingError("no usable consecutive-day pairs in the given series")
    return Dataset(
        X=np.array(xs, dtype=float),
        Y=np.array(ys, dtype=float),
        ketone_mask=np.array(masks, dtype=float),
    )


def _init_params(rng: np.random.Generator, sizes: Sequence[int]):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, xn: np.ndarray):
    """Returns (output, hidden activations). Hidden layers are tanh, the
    output layer is linear."""
    activations = []
    h = xn
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
        activations.append(h)
    out = h @ weights[-1] + biases[-1]
    return out, activations


def loss_and_grads(weights, biases, xn: np.ndarray, yn: np.ndarray, target_mask: np.ndarray):
    """Masked mean squared error and its exact gradients.

    loss = sum(mask * (pred - y)^2) / sum(mask)
    """
    denom = float(target_mask.sum())
    if denom == 0:
        raise TrainingError("all targets masked out")
    out, activations = _forward(weights, biases, xn)
    diff = out - yn
    loss = float((target_mask * diff * diff).sum() / denom)

    grad_ws = [None] * len(weights)
    grad_bs = [None] * len(biases)
    delta = 2.0 * target_mask * diff / denom
    inputs = [xn] + activations
    for layer in range(len(weights) - 1, -1, -1):
        grad_ws[layer] = inputs[layer].T @ delta
        grad_bs[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (1.0 - activations[layer - 1] ** 2)
    return loss, grad_ws, grad_bs


def gradient_check(weights, biases, xn, yn, target_mask, eps: float = 1e-5) -> float:
    """Relative error between backprop and central-difference gradients,
    measured as ||g_num - g_ana|| / max(||g_num||, ||g_ana||) over the full
    flattened parameter vector."""
    _, grad_ws, grad_bs = loss_and_grads(weights, biases, xn, yn, target_mask)
    analytic = np.concatenate([g.ravel() for g in grad_ws + grad_bs])

    numeric = np.zeros_like(analytic)
    params = weights + biases
    offset = 0
    for p in params:
        flat = p.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up, _, _ = loss_and_grads(weights, biases, xn, yn, target_mask)
            flat[i] = orig - eps
            down, _, _ = loss_and_grads(weights, biases, xn, yn, target_mask)
            flat[i] = orig
            numeric[offset + i] = (up - down) / (2.0 * eps)
        offset += flat.size
    scale = max(float(np.linalg.norm(numeric)), float(np.linalg.norm(analytic)))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(numeric - analytic)) / scale


@dataclass
class TwinModel:
    """Trained network plus the normalization frozen at pretraining time.

    Prediction treats the model as immutable; training helpers always copy
    before touching weights.
    """

    weights: list
    biases: list
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    config: TwinConfig
    provenance: str = PROVENANCE_POOLED
    parent: str | None = None
    group_key: str | None = None
    trained_through: dt.date | None = None
    version: int = 1
    train_log: list = field(default_factory=list, repr=False, compare=False)

    def copy(self) -> "TwinModel":
        return TwinModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            x_mean=self.x_mean.copy(),
            x_std=self.x_std.copy(),
            y_mean=self.y_mean.copy(),
            y_std=self.y_std.copy(),
            config=self.config,
            provenance=self.provenance,
            parent=self.parent,
            group_key=self.group_key,
            trained_through=self.trained_through,
            version=self.version,
        )

    def normalize_x(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def denormalize_x(self, xn: np.ndarray) -> np.ndarray:
        return np.asarray(xn, dtype=float) * self.x_std + self.x_mean

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise DomainError(f"expected (n, {N_FEATURES}) features")
        if not np.all(np.isfinite(X)):
            raise DomainError("features must be finite")
        out, _ = _forward(self.weights, self.biases, self.normalize_x(X))
        return out * self.y_std + self.y_mean

    def predict(self, features: np.ndarray | DailyRecord) -> PredictedOutcome:
        if isinstance(features, DailyRecord):
            features = features_from_record(features)
        row = self.predict_batch(np.asarray(features, dtype=float).reshape(1, -1))[0]
        return PredictedOutcome(glucose=float(row[0]), ketone=float(row[1]), weight=float(row[2]))

    def mse(self, dataset: Dataset) -> float:
        xn = self.normalize_x(dataset.X)
        yn = (dataset.Y - self.y_mean) / self.y_std
        loss, _, _ = loss_and_grads(self.weights, self.biases, xn, yn, dataset.target_mask)
        return loss

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "features": list(TWIN_FEATURES),
            "targets": list(TARGET_NAMES),
            "config": self.config.to_json(),
            "provenance": self.provenance,
            "parent": self.parent,
            "group_key": self.group_key,
            "trained_through": None if self.trained_through is None else self.trained_through.isoformat(),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean.tolist(),
            "y_std": self.y_std.tolist(),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    def serialize(self) -> str:
        """Canonical JSON; identical models serialize to identical bytes."""
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(doc: dict) -> "TwinModel":
        if doc.get("features", list(TWIN_FEATURES)) != list(TWIN_FEATURES):
            raise ConfigError("serialized model uses an unknown feature order")
        return TwinModel(
            weights=[np.array(w, dtype=float) for w in doc["weights"]],
            biases=[np.array(b, dtype=float) for b in doc["biases"]],
            x_mean=np.array(doc["x_mean"], dtype=float),
            x_std=np.array(doc["x_std"], dtype=float),
            y_mean=np.array(doc["y_mean"], dtype=float),
            y_std=np.array(doc["y_std"], dtype=float),
            config=TwinConfig.from_json(doc["config"]),
            provenance=doc.get("provenance", PROVENANCE_POOLED),
            parent=doc.get("parent"),
            group_key=doc.get("group_key"),
            trained_through=(
                None if doc.get("trained_through") is None
                else dt.date.fromisoformat(doc["trained_through"])
            ),
            version=doc.get("version", 1),
        )

    @staticmethod
    def deserialize(text: str) -> "TwinModel":
        return TwinModel.from_json(json.loads(text))


def _split_train_val(n: int, val_fraction: float, rng: np.random.Generator):
    order = rng.permutation(n)
    n_val = int(math.ceil(n * val_fraction)) if val_fraction > 0 else 0
    if n_val >= n:
        n_val = n - 1
    return order[n_val:], order[:n_val]


def _sgd(model: TwinModel, dataset: Dataset, lr: float, rng: np.random.Generator,
         train_idx: np.ndarray, val_idx: np.ndarray, max_epochs: int | None = None) -> None:
    """Mini-batch momentum SGD in place, with early stopping on the validation
    split when one exists (best-epoch weights are restored)."""
    cfg = model.config
    epochs = cfg.max_epochs if max_epochs is None else max_epochs
    xn = model.normalize_x(dataset.X)
    yn = (dataset.Y - model.y_mean) / model.y_std
    mask = dataset.target_mask

    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    best_val = math.inf
    best_params = None
    stall = 0

    for epoch in range(epochs):
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            if mask[batch].sum() == 0:
                continue
            loss, grad_ws, grad_bs = loss_and_grads(
                model.weights, model.biases, xn[batch], yn[batch], mask[batch]
            )
            if not math.isfinite(loss):
                raise TrainingError(f"training diverged at epoch {epoch}")
            epoch_loss += loss
            n_batches += 1
            for i in range(len(model.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - lr * grad_ws[i]
                vel_b[i] = cfg.momentum * vel_b[i] - lr * grad_bs[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]

        if val_idx.size == 0:
            model.train_log.append((epoch, epoch_loss / max(n_batches, 1), None))
            continue
        val_loss, _, _ = loss_and_grads(
            model.weights, model.biases, xn[val_idx], yn[val_idx], mask[val_idx]
        )
        if not math.isfinite(val_loss):
            raise TrainingError(f"training diverged at epoch {epoch}")
        model.train_log.append((epoch, epoch_loss / max(n_batches, 1), val_loss))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_params = ([w.copy() for w in model.weights], [b.copy() for b in model.biases])
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break

    if best_params is not None:
        model.weights, model.biases = best_params


def pretrain(series: Iterable[Sequence[DailyRecord]], config: TwinConfig = TwinConfig()) -> TwinModel:
    """Train the population model on pooled series. Normalization statistics
    come from the training split only and are frozen into the model."""
    dataset = make_dataset(series)
    if len(dataset) < 2:
        raise TrainingError("pretraining needs at least two pairs")
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = _split_train_val(len(dataset), config.val_fraction, rng)

    x_train = dataset.X[train_idx]
    y_train = dataset.Y[train_idx]
    x_mean = x_train.mean(axis=0)
    x_std = np.maximum(x_train.std(axis=0), _STD_FLOOR)
    y_mean = y_train.mean(axis=0)
    y_std = np.maximum(y_train.std(axis=0), _STD_FLOOR)
    kmask = dataset.ketone_mask[train_idx].astype(bool)
    if kmask.any():
        y_mean[_KETONE_DIM] = y_train[kmask, _KETONE_DIM].mean()
        y_std[_KETONE_DIM] = max(y_train[kmask, _KETONE_DIM].std(), _STD_FLOOR)

    sizes = (N_FEATURES, *config.hidden_sizes, N_TARGETS)
    weights, biases = _init_params(rng, sizes)
    model = TwinModel(
        weights=weights, biases=biases,
        x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std,
        config=config, provenance=PROVENANCE_POOLED,
    )
    _sgd(model, dataset, config.lr_pretrain, rng, train_idx, val_idx)
    return model


def train_from_scratch(series: Iterable[Sequence[DailyRecord]], config: TwinConfig = TwinConfig()) -> TwinModel:
    """Baseline without the population prior: fresh init on the given data."""
    return pretrain(series, config)


def fine_tune(
    model: TwinModel,
    series: Iterable[Sequence[DailyRecord]],
    config: TwinConfig | None = None,
    group_key: str | None = None,
    epochs: int | None = None,
    trained_through: dt.date | None = None,
) -> TwinModel:
    """Continue training on one group's data at the fine-tuning rate.

    The input model is never mutated; its normalization carries over. Never
    degrades: if the tuned weights score a worse MSE on the tuning data than
    the starting weights, the starting weights are returned (with provenance
    and bookkeeping updated). Zero epochs is the identity on weights.
    """
    if config is not None and tuple(config.hidden_sizes) != tuple(model.config.hidden_sizes):
        raise ConfigError(
            f"fine-tune architecture {config.hidden_sizes} does not match "
            f"the pretrained model's {model.config.hidden_sizes}"
        )
    cfg = config if config is not None else model.config
    parent_digest = model.digest()

    tuned = model.copy()
    tuned.provenance = PROVENANCE_FINE_TUNED
    tuned.parent = parent_digest
    if group_key is not None:
        tuned.group_key = group_key
    if trained_through is not None:
        tuned.trained_through = trained_through

    if epochs == 0:
        return tuned
    dataset = make_dataset(series)
    rng = np.random.default_rng(cfg.seed + 1)
    train_idx, val_idx = _split_train_val(len(dataset), cfg.val_fraction, rng)

    before = tuned.mse(dataset)
    tuned.config = cfg
    _sgd(tuned, dataset, cfg.lr_finetune, rng, train_idx, val_idx, max_epochs=epochs)
    after = tuned.mse(dataset)
    if after > before:
        kept = model.copy()
        kept.config = cfg
        kept.provenance = PROVENANCE_FINE_TUNED
        kept.parent = parent_digest
        kept.group_key = tuned.group_key
        kept.trained_through = tuned.trained_through
        return kept
    return tuned


def weekly_retrain(
    model: TwinModel,
    new_week_records: Iterable[Sequence[DailyRecord]],
    through: dt.date | None = None,
) -> TwinModel:
    """Fine-tuning continuation on the newest week of group records.

    Each patient's series must span at most 7 consecutive days, all dated
    after the model's trained_through (an overlap is a precondition error).
    An empty week returns the model unchanged with the date advanced.
    """
    series = [sorted(records, key=lambda r: r.date) for records in new_week_records]
    series = [records for records in series if records]
    last_date = model.trained_through

    for records in series:
        if (records[-1].date - records[0].date).days + 1 > 7:
            raise PreconditionError(
                f"week for {records[0].date.isoformat()} spans more than 7 days"
            )
        if model.trained_through is not None and records[0].date <= model.trained_through:
            raise PreconditionError(
                f"record {records[0].date.isoformat()} overlaps the trained span "
                f"ending {model.trained_through.isoformat()}"
            )
        if last_date is None or records[-1].date > last_date:
            last_date = records[-1].date

    if through is None:
        through = last_date
    if through is None:
        raise PreconditionError("empty retrain needs an explicit through date")

    usable = [records for records in series if len(records) >= 2]
    if not usable:
        advanced = model.copy()
        advanced.trained_through = through
        return advanced
    return fine_tune(model, usable, trained_through=through)
