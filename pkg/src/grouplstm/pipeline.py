"""Stage-wise training, evaluation and the baseline benchmark."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, Scene, split
from .errors import ConfigError, DivergenceError, GroupLSTMError, InputError
from .model import (Model, ModelConfig, SceneBatch, as_batch, flatten, group_backward, group_forward,
                    init_model, person_backward, person_features, person_forward, predict)
from .nn import softmax_xent, softmax_xent_backward
from .optim import GradCheckResult, OptimState, grad_check, sgd_step

log = logging.getLogger(__name__)

BENCH_VARIANTS = ("b1_frame", "b4_temporal_image", "b5_temporal_person", "b6_no_lstm1", "b7_no_lstm2",
                  "two_stage")


@dataclass
class TrainConfig:
    """Optimisation budget.

    ``DEFAULT_LR`` in optim (1e-5) is sized for very wide layers on real video
    features; the small default models here need a much larger step.
    """
    person_epochs: int = 40
    group_epochs: int = 80
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16

    def __post_init__(self):
        if self.person_epochs < 0 or self.group_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainReport:
    stage: int
    variant: str
    seed: int
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)
    final_loss: float = float("nan")
    train_accuracy: float | None = None
    test_accuracy: float | None = None
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def to_csv(self, header: bool = True) -> str:
        """One row per epoch; epoch 0 is the loss before training."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(["stage", "variant", "seed", "epoch", "mean_loss"])
        w.writerow([self.stage, self.variant, self.seed, 0, repr(self.initial_loss)])
        for e, loss in enumerate(self.epoch_losses, 1):
            w.writerow([self.stage, self.variant, self.seed, e, repr(loss)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# losses

def action_loss(model: Model, batch: SceneBatch):
    """Action cross-entropy, averaged over persons and steps within a scene, then over scenes."""
    if batch.action_labels is None:
        raise InputError("stage 1 needs per-person action labels")
    pm = model.person
    out = person_forward(pm, batch.features)
    losses, probs = softmax_xent(out.action_logits, batch.action_labels)
    counts = np.diff(batch.offsets)
    w = np.repeat(1.0 / (batch.n_scenes * counts * losses.shape[1]), counts)[:, None]
    loss = float((losses * w).sum())
    dlogits = softmax_xent_backward(probs, batch.action_labels) * w[..., None]
    return loss, person_backward(pm, out, d_logits=dlogits)


def activity_loss(model: Model, batch: SceneBatch, person_feats: np.ndarray | None = None,
                  through_person: bool = False):
    """Activity cross-entropy averaged over timesteps and scenes."""
    if batch.activity_labels is None:
        raise InputError("stage 2 needs activity labels")
    logits, cache = group_forward(model, batch, person_feats)
    B, T = logits.shape[:2]
    labels = np.repeat(batch.activity_labels[:, None], T, axis=1)
    losses, probs = softmax_xent(logits, labels)
    loss = float(losses.mean())
    dlogits = softmax_xent_backward(probs, labels) / (B * T)
    return loss, group_backward(model, cache, dlogits, through_person=through_person)


def full_objective(model: Model, scene, with_grads: bool = True):
    """Summed-over-time activity loss plus summed action loss, with gradients for every part.

    This is the end-to-end objective of the complete graph used for gradient
    checking; training itself runs the two stages separately. With
    ``with_grads=False`` only the loss is returned, in the dtype of the model.
    """
    batch = as_batch(scene)
    logits, cache = group_forward(model, batch)
    T = logits.shape[1]
    labels = np.repeat(batch.activity_labels[:, None], T, axis=1)
    losses, probs = softmax_xent(logits, labels)
    loss = losses.sum()
    person = cache.get("person")
    has_actions = person is not None and person.action_logits is not None and batch.action_labels is not None
    if has_actions:
        a_losses, a_probs = softmax_xent(person.action_logits, batch.action_labels)
        loss = loss + a_losses.sum()
    if not with_grads:
        return loss
    grads = group_backward(model, cache, softmax_xent_backward(probs, labels), through_person=True)
    if has_actions:
        extra = person_backward(model.person, person, d_logits=softmax_xent_backward(a_probs, batch.action_labels))
        for name, g in extra.items():
            for (_, acc), (_, add) in zip(grads[name].tensors(), g.tensors()):
                acc += add
    return float(loss), {name: grads[name] for name in model.parts}


def randomize(model: Model, seed=0, scale: float = 0.5) -> Model:
    """Overwrite every tensor (heads and biases included) with uniform(-scale, scale) draws."""
    rng = np.random.default_rng(seed)
    for _, arr in model.named_tensors():
        arr[...] = rng.uniform(-scale, scale, size=arr.shape)
    return model


def random_scene(config: ModelConfig, num_persons: int, seed=0) -> Scene:
    rng = np.random.default_rng(seed)
    T, D = config.timesteps, config.feature_dim
    return Scene(rng.uniform(-2, 2, size=(num_persons, T, D)),
                 rng.integers(config.num_actions, size=(num_persons, T)),
                 int(rng.integers(config.num_activities)), "probe/0")


def _extended(model: Model, scene) -> tuple[Model, SceneBatch]:
    wide = model.copy()
    for part in wide.parts.values():
        for name, arr in part.tensors():
            setattr(part, name, arr.astype(np.longdouble))
    batch = as_batch(scene)
    return wide, SceneBatch(batch.features.astype(np.longdouble), batch.offsets,
                            batch.action_labels, batch.activity_labels)


def gradcheck_model(model: Model, scene, probe_count: int | None = None, seed=0,
                    extended: bool = True) -> GradCheckResult:
    """Check analytic gradients of ``full_objective`` against central differences.

    With ``extended`` the reference differences are taken on a long double copy
    of the model, which pushes cancellation error well below float64 roundoff.
    """
    names = list(model.parts)
    params = model.named_tensors()

    def loss_fn():
        loss, grads = full_objective(model, scene)
        return loss, flatten(grads, names)

    if not extended:
        return grad_check(loss_fn, params, probe_count=probe_count, seed=seed)
    wide, wide_batch = _extended(model, scene)
    return grad_check(loss_fn, params, probe_count=probe_count, seed=seed,
                      numeric_fn=lambda: full_objective(wide, wide_batch, with_grads=False),
                      numeric_params=wide.named_tensors())


def gradcheck_tiny(seed=1, variant: str = "two_stage", num_persons: int = 3,
                   probe_count: int | None = None) -> GradCheckResult:
    """Full-graph gradient check on the tiny configuration with random weights."""
    cfg = ModelConfig.tiny(variant=variant)
    model = randomize(init_model(cfg, seed), seed)
    return gradcheck_model(model, random_scene(cfg, num_persons, seed + 1), probe_count, seed)


# ---------------------------------------------------------------------------
# training

def _subbatch(full: SceneBatch, idx: np.ndarray, feats: np.ndarray | None = None):
    starts, stops = full.offsets[idx], full.offsets[idx + 1]
    rows = np.concatenate([np.arange(a, b) for a, b in zip(starts, stops)])
    offsets = np.concatenate([[0], np.cumsum(stops - starts)]).astype(np.intp)
    batch = SceneBatch(full.features[rows], offsets,
                       None if full.action_labels is None else full.action_labels[rows],
                       None if full.activity_labels is None else full.activity_labels[idx])
    return batch, (None if feats is None else feats[rows])


def _run_epochs(model: Model, parts: Sequence[str], n_scenes: int, loss_fn: Callable, epochs: int,
                tc: TrainConfig, rng: np.random.Generator, stage: int) -> list[float]:
    params = flatten(model.parts, parts)
    state = OptimState.for_params(params, tc.lr, tc.momentum)
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n_scenes)
        total, n = 0.0, 0
        for a in range(0, n_scenes, tc.batch_size):
            idx = np.sort(order[a:a + tc.batch_size])
            try:
                loss, grads = loss_fn(idx)
                if not np.isfinite(loss):
                    raise DivergenceError(f"loss {loss}")
                sgd_step(params, flatten(grads, parts), state)
            except DivergenceError as err:
                raise DivergenceError(f"stage {stage} diverged at epoch {epoch}: {err}") from None
            total += loss * len(idx)
            n += len(idx)
        losses.append(total / n)
    return losses


def _seeds(seed) -> tuple[int, int, int]:
    ss = np.random.SeedSequence(seed)
    return tuple(int(c.generate_state(1)[0]) for c in ss.spawn(3))


def _dataset_check(dataset: Dataset, config: ModelConfig) -> None:
    if len(dataset) == 0:
        raise InputError("empty dataset")
    got = (dataset.feature_dim, dataset.num_actions, dataset.num_activities)
    want = (config.feature_dim, config.num_actions, config.num_activities)
    if got != want:
        raise InputError(f"dataset has (D_in, A, G) = {got}, model config has {want}")
    T = {s.timesteps for s in dataset}
    if T != {config.timesteps}:
        raise InputError(f"dataset timesteps {sorted(T)} != model timesteps {config.timesteps}")


def train_stage1(dataset: Dataset, config: ModelConfig, seed=0, tc: TrainConfig | None = None,
                 model: Model | None = None) -> tuple[Model, TrainReport]:
    """Train encoder, LSTM1 and the action head on per-timestep action labels."""
    tc = tc or TrainConfig()
    if not config.has_person_stage:
        raise ConfigError(f"variant {config.variant} has no person-level stage")
    _dataset_check(dataset, config)
    init_seed, shuffle_seed, _ = _seeds(seed)
    model = model if model is not None else init_model(config, init_seed)
    parts = model.trainable_parts(1)
    full = SceneBatch.from_scenes(dataset.scenes)
    t0 = time.perf_counter()

    def loss_fn(idx):
        return action_loss(model, _subbatch(full, idx)[0])

    initial = action_loss(model, full)[0]
    report = TrainReport(1, config.variant, int(seed), initial, config=asdict(config))
    report.epoch_losses = _run_epochs(model, parts, len(dataset), loss_fn, tc.person_epochs, tc,
                                      np.random.default_rng(shuffle_seed), 1)
    report.final_loss = action_loss(model, full)[0]
    report.wall_time = time.perf_counter() - t0
    log.info("stage 1 %s: loss %.4f -> %.4f", config.variant, report.initial_loss, report.final_loss)
    return model, report


def train_stage2(dataset: Dataset, model: Model, seed=0, tc: TrainConfig | None = None) -> tuple[Model, TrainReport]:
    """Train the group-level parts on activity labels.

    For variants with a person stage the person parts are frozen: their
    pooling inputs are computed once and never receive gradients. Variants
    without one train every part here.
    """
    tc = tc or TrainConfig()
    config = model.config
    _dataset_check(dataset, config)
    _, _, shuffle_seed = _seeds(seed)
    parts = model.trainable_parts(2)
    full = SceneBatch.from_scenes(dataset.scenes)
    frozen = config.has_person_stage
    feats = person_features(model, full.features) if frozen else None
    t0 = time.perf_counter()

    def loss_fn(idx):
        batch, f = _subbatch(full, idx, feats)
        return activity_loss(model, batch, f, through_person=not frozen)

    initial = activity_loss(model, full, feats)[0]
    report = TrainReport(2, config.variant, int(seed), initial, config=asdict(config))
    report.epoch_losses = _run_epochs(model, parts, len(dataset), loss_fn, tc.group_epochs, tc,
                                      np.random.default_rng(shuffle_seed), 2)
    report.final_loss = activity_loss(model, full, feats)[0]
    report.wall_time = time.perf_counter() - t0
    log.info("stage 2 %s: loss %.4f -> %.4f", config.variant, report.initial_loss, report.final_loss)
    return model, report


def train_model(dataset: Dataset, config: ModelConfig, seed=0, tc: TrainConfig | None = None):
    """Both stages for person-stage variants, one joint stage otherwise."""
    tc = tc or TrainConfig()
    reports = []
    if config.has_person_stage:
        model, rep = train_stage1(dataset, config, seed, tc)
        reports.append(rep)
    else:
        _dataset_check(dataset, config)
        model = init_model(config, _seeds(seed)[0])
    model, rep = train_stage2(dataset, model, seed, tc)
    reports.append(rep)
    return model, reports


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.class_names:
            self.class_names = tuple(f"class_{i}" for i in range(len(self.counts)))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\predicted", *self.class_names])
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()


def evaluate(model, dataset: Dataset) -> tuple[float, ConfusionMatrix]:
    """Scene accuracy and confusion matrix (rows true, columns predicted).

    ``model`` is a Model or any callable mapping a Scene to a class index.
    """
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    G = dataset.num_activities
    if isinstance(model, Model):
        if model.config.num_activities != G:
            raise InputError(f"model predicts {model.config.num_activities} activities, dataset has {G}")
        _dataset_check(dataset, model.config)
        preds = predict(model, dataset.scenes)
    else:
        preds = np.array([model(s) for s in dataset.scenes], dtype=np.intp)
    truth = np.array([s.activity_label for s in dataset.scenes], dtype=np.intp)
    if preds.size and (preds.min() < 0 or preds.max() >= G):
        raise InputError(f"prediction outside [0, {G})")
    counts = np.zeros((G, G), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    cm = ConfusionMatrix(counts, tuple(dataset.activity_names))
    return float((preds == truth).mean()), cm


# ---------------------------------------------------------------------------
# benchmark

@dataclass
class BenchRow:
    variant: str
    pool: str
    test_accuracy: float
    train_accuracy: float
    num_params: int
    status: str = "ok"


@dataclass
class BenchTable:
    rows: list[BenchRow]
    seed: int
    n_train: int
    n_test: int

    def accuracy(self, variant: str) -> float:
        for r in self.rows:
            if r.variant == variant:
                return r.test_accuracy
        raise KeyError(variant)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "pool", "test_accuracy", "train_accuracy", "num_params", "status"])
        for r in self.rows:
            w.writerow([r.variant, r.pool, repr(r.test_accuracy), repr(r.train_accuracy), r.num_params, r.status])
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'variant':<26} {'pool':<8} {'test':>7} {'train':>7} {'params':>8}  status",
                 "-" * 70]
        for r in self.rows:
            lines.append(f"{r.variant:<26} {r.pool:<8} {100 * r.test_accuracy:6.1f}% "
                         f"{100 * r.train_accuracy:6.1f}% {r.num_params:>8}  {r.status}")
        lines.append(f"(seed {self.seed}, {self.n_train} train / {self.n_test} test scenes)")
        return "\n".join(lines)


def bench_all(dataset: Dataset, config: ModelConfig | None = None, seed=0, tc: TrainConfig | None = None,
              variants: Sequence[str] = BENCH_VARIANTS, train_fraction: float = 2 / 3) -> BenchTable:
    """Train and test every variant under one budget and seed on a group-level split.

    A variant whose training fails is reported with NaN accuracy and the
    error in its status column; the remaining rows still run.
    """
    config = config or ModelConfig(feature_dim=dataset.feature_dim, num_actions=dataset.num_actions,
                                   num_activities=dataset.num_activities)
    tc = tc or TrainConfig()
    train, test = split(dataset, train_fraction, seed)
    rows = []
    for v in variants:
        cfg = config.replace(variant=v)
        try:
            model, _ = train_model(train, cfg, seed, tc)
            test_acc, _ = evaluate(model, test)
            train_acc, _ = evaluate(model, train)
            rows.append(BenchRow(v, cfg.pool, test_acc, train_acc, model.num_params()))
        except GroupLSTMError as exc:
            log.warning("bench row %s failed: %s", v, exc)
            rows.append(BenchRow(v, cfg.pool, float("nan"), float("nan"),
                                 init_model(cfg, 0).num_params(), f"error: {exc}"))
    return BenchTable(rows, int(seed), len(train), len(test))


def write_text(path, text: str) -> None:
    Path(path).write_text(text)
