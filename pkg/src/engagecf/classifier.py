"""Two-dense-layer engagement classifier (18 -> H tanh -> 2 softmax)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import HIGH, LOW, N_FEATURES, Dataset, NormStats, check_feature_vector
from .errors import EngageError, TrainingDiverged
from .nn import MLP, SGD, cross_entropy, finite_difference_check, softmax

MODEL_VERSION = "mlp-v1"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 32
    epochs: int = 60
    seed: int = 0
    weight_init_scale: float = 1.0
    hidden_size: int = 16
    momentum: float = 0.9

    def __post_init__(self):
        # learning_rate 0 is allowed: it is the "frozen parameters" control run
        checks = {
            "learning_rate": self.learning_rate >= 0,
            "batch_size": self.batch_size >= 1,
            "epochs": self.epochs >= 1,
            "weight_init_scale": self.weight_init_scale > 0,
            "hidden_size": self.hidden_size >= 1,
            "momentum": 0 <= self.momentum < 1,
        }
        for name, ok in checks.items():
            if not ok:
                raise EngageError("invalid-config", f"TrainConfig.{name} out of range: {getattr(self, name)!r}")


@dataclass(eq=False)
class MlpModel:
    net: MLP
    norm_stats: NormStats
    config: TrainConfig | None = None
    loss_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.net.sizes[0] != N_FEATURES or self.net.sizes[-1] != 2 or len(self.net.sizes) != 3:
            raise EngageError("invalid-input", f"classifier must be 18 -> H -> 2, got {self.net.sizes}")

    @property
    def hidden_size(self) -> int:
        return self.net.sizes[1]

    def logits(self, Z: np.ndarray) -> np.ndarray:
        return self.net(Z)

    def predict_proba(self, Z: np.ndarray) -> np.ndarray:
        """Class probabilities ``(n, 2)`` for normalized inputs ``Z``."""
        return softmax(self.net(Z))

    def predict_class(self, Z: np.ndarray) -> np.ndarray:
        return np.argmax(self.net(Z), axis=1)


def predict(model: MlpModel, fv) -> np.ndarray:
    """Probabilities ``(p_low, p_high)`` for one normalized feature vector."""
    z = check_feature_vector(fv)
    return model.predict_proba(z[None, :])[0]


def loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray, scale: float = 1.0) -> tuple[float, list[np.ndarray]]:
    logits, cache = model.net.forward(X)
    loss, g = cross_entropy(logits, np.asarray(y, dtype=np.int64).reshape(-1))
    _, grads = model.net.backward(cache, scale * g)
    return scale * loss, grads


def _require_normalized(dataset: Dataset) -> NormStats:
    if dataset.norm_stats is None:
        raise EngageError("invalid-input", "dataset must be normalized (see data.normalize_dataset)")
    return dataset.norm_stats


def train(dataset: Dataset, config: TrainConfig = TrainConfig()) -> MlpModel:
    """Mini-batch SGD with momentum on mean cross-entropy.

    The returned model's ``loss_trace`` holds the full-training-set loss before
    the first update followed by one entry per epoch.
    """
    stats = _require_normalized(dataset)
    if len(dataset) == 0:
        raise EngageError("empty-dataset", "cannot train on an empty dataset")
    if len(np.unique(dataset.y)) < 2:
        raise EngageError("degenerate-labels", "training data must contain both LOW and HIGH samples")
    rng = np.random.default_rng(config.seed)
    net = MLP([N_FEATURES, config.hidden_size, 2], rng=rng, init_scale=config.weight_init_scale)
    model = MlpModel(net=net, norm_stats=stats, config=config)
    X, y = dataset.X, dataset.y
    opt = SGD(net.params, lr=config.learning_rate, momentum=config.momentum)

    def full_loss() -> float:
        return cross_entropy(net(X), y)[0]

    trace = [full_loss()]
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = loss_and_grads(model, X[idx], y[idx])
            opt.step(grads)
        trace.append(full_loss())
        if not np.isfinite(trace[-1]) or not net.all_finite():
            raise TrainingDiverged(epoch)
    model.loss_trace = trace
    return model


def grad_check(model: MlpModel, x, y, step: float = 1e-4, n_coords: int | None = None, seed: int = 0,
               loss_scale: float = 1.0) -> float:
    """Worst relative error of backprop vs central differences on the loss of ``(x, y)``.

    ``x`` is one normalized vector or a batch; every parameter is checked unless
    ``n_coords`` is given.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    Y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    probe = MlpModel(net=model.net.copy(), norm_stats=model.norm_stats)
    _, analytic = loss_and_grads(probe, X, Y, scale=loss_scale)

    def f() -> float:
        return loss_scale * cross_entropy(probe.net(X), Y)[0]

    return finite_difference_check(f, probe.net.params, analytic, step=step, n_coords=n_coords,
                                   rng=np.random.default_rng(seed))


def confusion_matrix(model: MlpModel, dataset: Dataset) -> np.ndarray:
    """2x2 counts, rows = true class (LOW, HIGH), columns = predicted class."""
    if len(dataset) == 0:
        raise EngageError("empty-dataset", "confusion matrix of an empty dataset")
    _require_normalized(dataset)
    pred = model.predict_class(dataset.X)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (dataset.y, pred), 1)
    return cm


def accuracy(model: MlpModel, dataset: Dataset) -> float:
    cm = confusion_matrix(model, dataset)
    return float(np.trace(cm) / cm.sum())


def format_confusion(cm: np.ndarray) -> str:
    rows = ["            pred LOW  pred HIGH", f"true LOW  {cm[LOW, LOW]:10d} {cm[LOW, HIGH]:10d}",
            f"true HIGH {cm[HIGH, LOW]:10d} {cm[HIGH, HIGH]:10d}"]
    return "\n".join(rows)


# -- persistence ---------------------------------------------------------------


def model_to_dict(model: MlpModel, extra: dict | None = None) -> dict:
    net = model.net.to_dict()
    return {
        "version": MODEL_VERSION,
        "hidden_size": model.hidden_size,
        "activation": net["activation"],
        "sizes": net["sizes"],
        "layers": net["layers"],
        "norm_stats": model.norm_stats.to_dict(),
        "train_config": asdict(model.config) if model.config else None,
        "loss_trace": [float(v) for v in model.loss_trace],
        "extra": extra or {},
    }


def model_from_dict(d: dict) -> MlpModel:
    if d.get("version") != MODEL_VERSION:
        raise EngageError("invalid-file", f"expected model version {MODEL_VERSION!r}, got {d.get('version')!r}")
    try:
        cfg = TrainConfig(**d["train_config"]) if d.get("train_config") else None
    except TypeError as exc:
        raise EngageError("invalid-file", f"malformed train_config: {exc}") from None
    return MlpModel(
        net=MLP.from_dict(d),
        norm_stats=NormStats.from_dict(d["norm_stats"]),
        config=cfg,
        loss_trace=list(d.get("loss_trace", [])),
    )


def save_model(model: MlpModel, path, extra: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, extra), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> MlpModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
