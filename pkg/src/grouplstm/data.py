"""Scenes, the seeded synthetic generator, the HGRDATA text format and splitting.

Synthetic scenes
----------------
Every scene has K persons observed for T steps. Most persons are idle
("others"); two designated persons act out a six-step script whose start is
jittered uniformly. Actions::

    0 idle         1 x            2 y
    3 y_after_x    4 x_after_y    5.. distractor gestures (background only)

With ``confusable=True`` the two "after" actions are drawn with the same
prototype as plain y / x, so telling them apart needs the person's recent
history. Activities come in pairs (ids 2m, 2m+1)::

    pair 0  swap     a: x x x y y y   b: y y y x x x
            hold     a: x x x x x x   b: y y y y y y
    pair 1  carry    a: x x x y y y
            handoff  a: x x x . . .   b: . . . y y y
    pair 2  x_first  a: x x . . . .   b: . . . . y y
            y_first  a: y y . . . .   b: . . . . x x

Pairs 0 and 1 emit the same prototype multiset at every timestep; only each
person's own trajectory separates them. Pair 2 emits the same bag of frames
in a different order across persons.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, ParseError, SplitError, VersionError

IDLE, X, Y, Y_AFTER_X, X_AFTER_Y = range(5)
BASE_ACTIONS = ("idle", "x", "y", "y_after_x", "x_after_y")
ACTIVITY_NAMES = ("swap", "hold", "carry", "handoff", "x_first", "y_first")
CONFUSABLE_PAIRS = ((0, 1), (2, 3))
ORDER_PAIRS = ((4, 5),)
SCRIPT_LEN = 6
FORMAT_VERSION = 1


@dataclass(eq=False)
class Scene:
    persons: np.ndarray
    action_labels: np.ndarray | None
    activity_label: int | None
    scene_id: str

    def __post_init__(self):
        self.persons = np.ascontiguousarray(self.persons, dtype=np.float64)
        if self.persons.ndim != 3 or self.persons.shape[0] < 1 or self.persons.shape[1] < 1:
            raise InputError(f"scene {self.scene_id}: persons must be (K>=1, T>=1, D), got {self.persons.shape}")
        if self.action_labels is not None:
            self.action_labels = np.asarray(self.action_labels, dtype=np.intp)
            if self.action_labels.shape != self.persons.shape[:2]:
                raise InputError(f"scene {self.scene_id}: action labels {self.action_labels.shape} "
                                 f"do not match persons {self.persons.shape[:2]}")
        if not self.scene_id or any(c.isspace() for c in self.scene_id):
            raise InputError(f"scene id {self.scene_id!r} must be non-empty without whitespace")

    @property
    def num_persons(self) -> int:
        return self.persons.shape[0]

    @property
    def timesteps(self) -> int:
        return self.persons.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        same_actions = (self.action_labels is None and other.action_labels is None) or (
            self.action_labels is not None and other.action_labels is not None
            and np.array_equal(self.action_labels, other.action_labels))
        return (self.scene_id == other.scene_id and self.activity_label == other.activity_label
                and same_actions and self.persons.shape == other.persons.shape
                and np.array_equal(self.persons, other.persons))


@dataclass(eq=False)
class Dataset:
    scenes: list[Scene]
    feature_dim: int
    num_actions: int
    num_activities: int
    activity_names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.activity_names:
            self.activity_names = tuple(f"activity_{g}" for g in range(self.num_activities))
        for s in self.scenes:
            self._validate(s)

    def _validate(self, s: Scene) -> None:
        if s.persons.shape[2] != self.feature_dim:
            raise InputError(f"scene {s.scene_id}: feature width {s.persons.shape[2]} != {self.feature_dim}")
        if s.activity_label is not None and not 0 <= s.activity_label < self.num_activities:
            raise InputError(f"scene {s.scene_id}: activity {s.activity_label} outside [0, {self.num_activities})")
        if s.action_labels is not None and s.action_labels.size and (
                s.action_labels.min() < 0 or s.action_labels.max() >= self.num_actions):
            raise InputError(f"scene {s.scene_id}: action label outside [0, {self.num_actions})")

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def __getitem__(self, i):
        return self.scenes[i]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return ((self.feature_dim, self.num_actions, self.num_activities)
                == (other.feature_dim, other.num_actions, other.num_activities)
                and self.scenes == other.scenes)

    def subset(self, scenes) -> "Dataset":
        return Dataset(list(scenes), self.feature_dim, self.num_actions, self.num_activities, self.activity_names)

    def activity_counts(self) -> np.ndarray:
        return np.bincount([s.activity_label for s in self.scenes], minlength=self.num_activities)


@dataclass(frozen=True)
class GenConfig:
    num_scenes: int = 600
    k_min: int = 4
    k_max: int = 8
    timesteps: int = 9
    feature_dim: int = 12
    num_actions: int = 5
    num_activities: int = 6
    noise_std: float = 0.3
    seed: int = 0
    confusable: bool = True
    num_groups: int = 15
    distractor_rate: float = 0.05

    def validate(self) -> None:
        problems = []
        if self.num_scenes < 1:
            problems.append("num_scenes must be >= 1")
        if not 2 <= self.k_min <= self.k_max:
            problems.append(f"need 2 <= k_min <= k_max, got {self.k_min}..{self.k_max}")
        if self.timesteps < SCRIPT_LEN:
            problems.append(f"timesteps must be >= {SCRIPT_LEN}")
        if self.num_actions < len(BASE_ACTIONS):
            problems.append(f"num_actions must be >= {len(BASE_ACTIONS)}")
        if not 2 <= self.num_activities <= len(ACTIVITY_NAMES):
            problems.append(f"num_activities must lie in [2, {len(ACTIVITY_NAMES)}]")
        if self.feature_dim < 1:
            problems.append("feature_dim must be >= 1")
        if not self.noise_std >= 0:
            problems.append("noise_std must be non-negative")
        if self.num_groups < 1:
            problems.append("num_groups must be >= 1")
        if not 0 <= self.distractor_rate <= 1:
            problems.append("distractor_rate must lie in [0, 1]")
        if problems:
            raise ConfigError("; ".join(problems))


def action_names(num_actions: int) -> tuple[str, ...]:
    return BASE_ACTIONS + tuple(f"gesture_{a}" for a in range(len(BASE_ACTIONS), num_actions))


def scripts(activity: int, start: int, timesteps: int) -> list[list[int]]:
    """Action sequences of the designated persons for one activity and start step."""
    a = [IDLE] * timesteps
    b = [IDLE] * timesteps
    w = range(start, start + SCRIPT_LEN)
    half = SCRIPT_LEN // 2
    for j, t in enumerate(w):
        first = j < half
        if activity == 0:
            a[t] = X if first else Y_AFTER_X
            b[t] = Y if first else X_AFTER_Y
        elif activity == 1:
            a[t], b[t] = X, Y
        elif activity == 2:
            a[t] = X if first else Y_AFTER_X
        elif activity == 3:
            if first:
                a[t] = X
            else:
                b[t] = Y
        elif activity in (4, 5):
            lead, trail = (X, Y) if activity == 4 else (Y, X)
            if j < 2:
                a[t] = lead
            elif j >= SCRIPT_LEN - 2:
                b[t] = trail
        else:
            raise InputError(f"no script for activity {activity}")
    return [a, b]


def emission_ids(confusable: bool, num_actions: int) -> np.ndarray:
    """Prototype index emitted by each action class."""
    ids = np.arange(num_actions)
    if confusable:
        ids[Y_AFTER_X] = Y
        ids[X_AFTER_Y] = X
    return ids


def make_prototypes(num_actions: int, feature_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm prototypes, orthonormal when num_actions <= feature_dim."""
    raw = rng.normal(size=(feature_dim, max(num_actions, 1)))
    if num_actions <= feature_dim:
        q, _ = np.linalg.qr(raw)
        return np.ascontiguousarray(q[:, :num_actions].T)
    return raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)


def generate(cfg: GenConfig) -> Dataset:
    cfg.validate()
    root = np.random.default_rng(cfg.seed)
    proto_rng, scene_rng = (np.random.default_rng(s) for s in root.bit_generator.seed_seq.spawn(2))
    protos = make_prototypes(cfg.num_actions, cfg.feature_dim, proto_rng)
    emit = emission_ids(cfg.confusable, cfg.num_actions)
    n_distractors = cfg.num_actions - len(BASE_ACTIONS)
    T = cfg.timesteps
    width = int(math.log10(max(cfg.num_scenes - 1, 1))) + 1
    scenes = []
    for i in range(cfg.num_scenes):
        g = int(scene_rng.integers(cfg.num_activities))
        K = int(scene_rng.integers(cfg.k_min, cfg.k_max + 1))
        start = int(scene_rng.integers(T - SCRIPT_LEN + 1))
        labels = np.full((K, T), IDLE, dtype=np.intp)
        who = scene_rng.permutation(K)[:2]
        for person, seq in zip(who, scripts(g, start, T)):
            labels[person] = seq
        if n_distractors:
            background = np.setdiff1d(np.arange(K), who)
            for person in background:
                for t in range(T):
                    if scene_rng.random() < cfg.distractor_rate:
                        labels[person, t] = len(BASE_ACTIONS) + int(scene_rng.integers(n_distractors))
        feats = protos[emit[labels]] + cfg.noise_std * scene_rng.normal(size=(K, T, cfg.feature_dim))
        scene_id = f"v{i % cfg.num_groups:02d}/{i:0{width}d}"
        scenes.append(Scene(feats, labels, g, scene_id))
    names = ACTIVITY_NAMES[:cfg.num_activities]
    return Dataset(scenes, cfg.feature_dim, cfg.num_actions, cfg.num_activities, names)


def generator_prototypes(cfg: GenConfig) -> np.ndarray:
    """The prototype matrix ``generate(cfg)`` draws from, one row per prototype id."""
    root = np.random.default_rng(cfg.seed)
    proto_rng = np.random.default_rng(root.bit_generator.seed_seq.spawn(2)[0])
    return make_prototypes(cfg.num_actions, cfg.feature_dim, proto_rng)


# ---------------------------------------------------------------------------
# brute-force checks of the temporal-necessity property

def frame_signature_distribution(cfg: GenConfig, activity: int, t: int) -> dict[tuple[int, ...], Fraction]:
    """Exact distribution of the designated persons' emitted prototype multiset at step t.

    Background persons are activity-independent and therefore left out.
    """
    emit = emission_ids(cfg.confusable, cfg.num_actions)
    starts = range(cfg.timesteps - SCRIPT_LEN + 1)
    dist: Counter = Counter()
    for s in starts:
        sig = tuple(sorted(int(emit[seq[t]]) for seq in scripts(activity, s, cfg.timesteps)))
        dist[sig] += Fraction(1, len(starts))
    return dict(dist)


def single_frame_bayes_accuracy(cfg: GenConfig, pair: tuple[int, int], t: int) -> Fraction:
    """Best achievable accuracy on a two-class pair from step t alone (equal priors)."""
    d0 = frame_signature_distribution(cfg, pair[0], t)
    d1 = frame_signature_distribution(cfg, pair[1], t)
    keys = set(d0) | set(d1)
    return sum((max(d0.get(k, Fraction(0)), d1.get(k, Fraction(0))) for k in keys), Fraction(0)) / 2


def decode_prototypes(scene: Scene, protos: np.ndarray) -> np.ndarray:
    """Nearest-prototype id for every person and timestep, shape (K, T)."""
    d = ((scene.persons[:, :, None, :] - protos[None, None]) ** 2).sum(-1)
    return d.argmin(-1)


def _signature(id_rows) -> tuple:
    return tuple(sorted(tuple(int(v) for v in row) for row in id_rows if any(v != IDLE for v in row)))


def sequence_templates(cfg: GenConfig) -> dict[tuple, set[int]]:
    """Map from designated-person emission signature to the activities producing it."""
    emit = emission_ids(cfg.confusable, cfg.num_actions)
    table: dict[tuple, set[int]] = {}
    for g, s in itertools.product(range(cfg.num_activities), range(cfg.timesteps - SCRIPT_LEN + 1)):
        sig = _signature([emit[np.array(seq)] for seq in scripts(g, s, cfg.timesteps)])
        table.setdefault(sig, set()).add(g)
    return table


def sequence_classifier(cfg: GenConfig):
    """Brute-force whole-sequence classifier for noise-free, distractor-free scenes."""
    protos = generator_prototypes(cfg)
    table = sequence_templates(cfg)

    def classify(scene: Scene) -> int:
        ids = decode_prototypes(scene, protos)
        hits = table.get(_signature(ids), set())
        return min(hits) if len(hits) == 1 else -1

    return classify


def frame_classifier(cfg: GenConfig, t: int):
    """Brute-force single-frame classifier: Bayes decision from step t's prototype multiset."""
    protos = generator_prototypes(cfg)
    dists = [frame_signature_distribution(cfg, g, t) for g in range(cfg.num_activities)]

    def classify(scene: Scene) -> int:
        ids = decode_prototypes(scene, protos)[:, t]
        sig = tuple(sorted(int(v) for v in ids if v != IDLE))
        scores = [d.get(sig, Fraction(0)) for d in dists]
        return int(np.argmax([float(s) for s in scores]))

    return classify


# ---------------------------------------------------------------------------
# HGRDATA text format
#
#   HGRDATA <version> <D_in> <A> <G>
#   scene <id> <activity> <K> <T>
#   <t> <action> <x_1> ... <x_D>        K blocks of T lines, person by person
#
# Floats are written with repr(), the shortest string that round-trips.

def format_dataset(ds: Dataset) -> str:
    lines = [f"HGRDATA {FORMAT_VERSION} {ds.feature_dim} {ds.num_actions} {ds.num_activities}"]
    for s in ds.scenes:
        K, T, _ = s.persons.shape
        lines.append(f"scene {s.scene_id} {s.activity_label} {K} {T}")
        for k in range(K):
            for t in range(T):
                vals = " ".join(repr(float(v)) for v in s.persons[k, t])
                lines.append(f"{t} {int(s.action_labels[k, t])} {vals}")
    return "\n".join(lines) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(format_dataset(ds))


def _ints(tokens, lineno, what):
    try:
        return [int(tok) for tok in tokens]
    except ValueError:
        raise ParseError(f"expected integers for {what}, got {' '.join(tokens)!r}", lineno) from None


def parse_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    head = lines[0].split()
    if not head or head[0] != "HGRDATA":
        raise ParseError("missing HGRDATA header", 1)
    if len(head) != 5:
        raise ParseError("header must be 'HGRDATA <version> <D_in> <A> <G>'", 1)
    version, D, A, G = _ints(head[1:], 1, "header")
    if version != FORMAT_VERSION:
        raise VersionError(f"HGRDATA version {version} not supported (expected {FORMAT_VERSION})")
    if min(D, A, G) < 1:
        raise ParseError("header dimensions must be positive", 1)
    scenes = []
    i = 1
    while i < len(lines):
        lineno = i + 1
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] != "scene" or len(tok) != 5:
            raise ParseError("expected 'scene <id> <activity> <K> <T>'", lineno)
        scene_id = tok[1]
        g, K, T = _ints(tok[2:], lineno, "scene header")
        if K < 1 or T < 1:
            raise ParseError(f"scene {scene_id}: K and T must be positive", lineno)
        persons = np.empty((K, T, D))
        labels = np.empty((K, T), dtype=np.intp)
        for k in range(K):
            for t in range(T):
                if i >= len(lines):
                    raise ParseError(f"scene {scene_id}: file ends inside person {k}, step {t}", i + 1)
                row = lines[i].split()
                lineno = i + 1
                i += 1
                if len(row) != D + 2:
                    raise ParseError(f"expected {D + 2} fields, got {len(row)}", lineno)
                t_idx, action = _ints(row[:2], lineno, "step index and action")
                if t_idx != t:
                    raise ParseError(f"expected step index {t}, got {t_idx}", lineno)
                try:
                    persons[k, t] = [float(v) for v in row[2:]]
                except ValueError:
                    raise ParseError("malformed feature value", lineno) from None
                if not np.isfinite(persons[k, t]).all():
                    raise ParseError("non-finite feature value", lineno)
                labels[k, t] = action
        try:
            scene = Scene(persons, labels, g, scene_id)
            scenes.append(scene)
            Dataset([scene], D, A, G)
        except InputError as exc:
            raise ParseError(str(exc), lineno) from None
    return Dataset(scenes, D, A, G)


def load_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError:
        raise ParseError("file is not text", None) from None
    return parse_dataset(text)


# ---------------------------------------------------------------------------

def scene_group(scene_id: str) -> str:
    """Split key of a scene: the id up to the first '/', i.e. its source video."""
    return scene_id.split("/", 1)[0]


def split(ds: Dataset, train_fraction: float = 2 / 3, seed=0) -> tuple[Dataset, Dataset]:
    """Partition by scene group so no group lands on both sides."""
    if not 0 < train_fraction < 1:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    groups = sorted({scene_group(s.scene_id) for s in ds.scenes})
    if len(groups) < 2:
        raise SplitError(f"need at least 2 scene groups to split, found {len(groups)}")
    n_train = min(max(int(round(train_fraction * len(groups))), 1), len(groups) - 1)
    order = np.random.default_rng(seed).permutation(len(groups))
    train_groups = {groups[j] for j in order[:n_train]}
    train = [s for s in ds.scenes if scene_group(s.scene_id) in train_groups]
    test = [s for s in ds.scenes if scene_group(s.scene_id) not in train_groups]
    return ds.subset(train), ds.subset(test)
