"""Two-stage person/group model and the ablation variants built from its parts.

Every architecture is a subset of six parts::

    encoder        FC   D_in -> D_enc (relu)     per person (per scene for b1)
    lstm1          LSTM D_enc -> N1              per person
    action_head    FC   -> A (linear)            per person, per timestep
    group_fc       FC   -> F (relu)              per scene, after pooling
    lstm2          LSTM -> N2                    per scene
    activity_head  FC   -> G (linear)            per scene, per timestep

The two-stage model concatenates each person's encoding with their LSTM1
hidden state, pools over persons, and runs the group stage on the pooled
sequence. Scenes of different sizes are batched by stacking persons and
keeping segment offsets; nothing is padded.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, EmptySceneError, InputError, ParseError, VersionError
from .lstm import LstmParams, lstm_backward, lstm_forward, lstm_init
from .nn import (FcParams, POOL_MODES, concat, concat_backward, fc_backward, fc_forward, fc_init,
                 normalize_pool_mode, pool_segments, pool_segments_backward)

VARIANTS = (
    "two_stage",
    "b1_frame",
    "b2_person_pool",
    "b3_finetuned_person_pool",
    "b4_temporal_image",
    "b5_temporal_person",
    "b6_no_lstm1",
    "b7_no_lstm2",
)
# variants whose person parts are first trained on action labels, then frozen
PERSON_STAGE_VARIANTS = ("two_stage", "b3_finetuned_person_pool", "b6_no_lstm1", "b7_no_lstm2")
# variants that only ever see the per-timestep mean over persons (no per-person modelling)
SCENE_LEVEL_VARIANTS = ("b1_frame", "b4_temporal_image")
PART_ORDER = ("encoder", "lstm1", "action_head", "group_fc", "lstm2", "activity_head")
PERSON_PARTS = ("encoder", "lstm1", "action_head")
GROUP_PARTS = ("group_fc", "lstm2", "activity_head")
_CONFIG_INTS = ("feature_dim", "encoder_dim", "lstm1_hidden", "group_fc_dim", "lstm2_hidden",
                "timesteps", "num_actions", "num_activities")


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 12
    encoder_dim: int = 16
    lstm1_hidden: int = 24
    group_fc_dim: int = 24
    lstm2_hidden: int = 12
    timesteps: int = 9
    num_actions: int = 5
    num_activities: int = 6
    pool: str = "max"
    variant: str = "two_stage"

    def __post_init__(self):
        for name in _CONFIG_INTS:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        try:
            object.__setattr__(self, "pool", normalize_pool_mode(self.pool))
        except InputError as exc:
            raise ConfigError(str(exc)) from None
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        base = dict(feature_dim=6, encoder_dim=5, lstm1_hidden=8, group_fc_dim=8, lstm2_hidden=8,
                    timesteps=5, num_actions=3, num_activities=4)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ModelConfig":
        return replace(self, **changes)

    def part_specs(self) -> dict[str, tuple[str, int, int, str]]:
        """Ordered ``{part: (kind, n_in, n_out, activation)}`` for this variant."""
        D, E, N1, F, N2 = (self.feature_dim, self.encoder_dim, self.lstm1_hidden,
                           self.group_fc_dim, self.lstm2_hidden)
        A, G, v = self.num_actions, self.num_activities, self.variant
        enc = ("fc", D, E, "relu")
        specs: dict[str, tuple[str, int, int, str]]
        if v == "two_stage":
            specs = {"encoder": enc, "lstm1": ("lstm", E, N1, ""), "action_head": ("fc", N1, A, "linear"),
                     "group_fc": ("fc", E + N1, F, "relu"), "lstm2": ("lstm", F, N2, ""),
                     "activity_head": ("fc", N2, G, "linear")}
        elif v == "b7_no_lstm2":
            specs = {"encoder": enc, "lstm1": ("lstm", E, N1, ""), "action_head": ("fc", N1, A, "linear"),
                     "group_fc": ("fc", E + N1, F, "relu"), "activity_head": ("fc", F, G, "linear")}
        elif v == "b6_no_lstm1":
            specs = {"encoder": enc, "action_head": ("fc", E, A, "linear"),
                     "group_fc": ("fc", E, F, "relu"), "lstm2": ("lstm", F, N2, ""),
                     "activity_head": ("fc", N2, G, "linear")}
        elif v == "b5_temporal_person":
            specs = {"encoder": enc, "lstm2": ("lstm", E, N2, ""), "activity_head": ("fc", N2, G, "linear")}
        elif v == "b4_temporal_image":
            specs = {"lstm2": ("lstm", D, N2, ""), "activity_head": ("fc", N2, G, "linear")}
        elif v == "b3_finetuned_person_pool":
            specs = {"encoder": enc, "action_head": ("fc", E, A, "linear"),
                     "activity_head": ("fc", E, G, "linear")}
        else:  # b1_frame, b2_person_pool
            specs = {"encoder": enc, "activity_head": ("fc", E, G, "linear")}
        return specs

    @property
    def has_person_stage(self) -> bool:
        return self.variant in PERSON_STAGE_VARIANTS

    @property
    def scene_level(self) -> bool:
        return self.variant in SCENE_LEVEL_VARIANTS


Part = FcParams | LstmParams


@dataclass
class PersonModel:
    encoder: FcParams
    lstm1: LstmParams | None = None
    action_head: FcParams | None = None


@dataclass
class GroupModel:
    activity_head: FcParams
    group_fc: FcParams | None = None
    lstm2: LstmParams | None = None


@dataclass
class Model:
    config: ModelConfig
    parts: dict[str, Part]

    def __post_init__(self):
        specs = self.config.part_specs()
        if list(self.parts) != list(specs):
            raise ConfigError(f"variant {self.config.variant} needs parts {list(specs)}, got {list(self.parts)}")
        for name, (kind, n_in, n_out, _) in specs.items():
            p = self.parts[name]
            got = (p.input_dim, p.hidden_dim) if isinstance(p, LstmParams) else (p.n_in, p.n_out)
            if got != (n_in, n_out):
                raise ConfigError(f"part {name}: expected {n_in}->{n_out}, got {got[0]}->{got[1]}")

    @property
    def person(self) -> PersonModel | None:
        if self.config.scene_level:
            return None
        return PersonModel(self.parts["encoder"], self.parts.get("lstm1"), self.parts.get("action_head"))

    @property
    def group(self) -> GroupModel:
        return GroupModel(self.parts["activity_head"], self.parts.get("group_fc"), self.parts.get("lstm2"))

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{part}.{name}", arr) for part, p in self.parts.items() for name, arr in p.tensors()]

    def num_params(self) -> int:
        return sum(arr.size for _, arr in self.named_tensors())

    def copy(self) -> "Model":
        return Model(self.config, {k: p.copy() for k, p in self.parts.items()})

    def trainable_parts(self, stage: int) -> tuple[str, ...]:
        """Parts updated in a stage: 1 = person pretraining, 2 = group training."""
        if stage == 1:
            if not self.config.has_person_stage:
                return ()
            return tuple(p for p in PERSON_PARTS if p in self.parts)
        if self.config.has_person_stage:
            return tuple(p for p in GROUP_PARTS if p in self.parts)
        return tuple(self.parts)


def init_model(config: ModelConfig, seed=0, forget_bias: float = 0.0) -> Model:
    """Random weights from a seeded generator; classifier heads start at zero."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts: dict[str, Part] = {}
    for name, (kind, n_in, n_out, act) in config.part_specs().items():
        if kind == "lstm":
            parts[name] = lstm_init(n_in, n_out, rng, forget_bias=forget_bias)
        else:
            parts[name] = fc_init(n_in, n_out, rng, act, zero=name.endswith("_head"))
    return Model(config, parts)


def flatten(parts: dict[str, Part], names=None) -> list[np.ndarray]:
    names = parts.keys() if names is None else names
    return [arr for n in names for _, arr in parts[n].tensors()]


@dataclass
class SceneBatch:
    """Persons of several scenes stacked along axis 0.

    Scene ``i`` owns rows ``offsets[i]:offsets[i+1]`` of ``features``.
    """
    features: np.ndarray
    offsets: np.ndarray
    action_labels: np.ndarray | None = None
    activity_labels: np.ndarray | None = None

    @property
    def n_scenes(self) -> int:
        return len(self.offsets) - 1

    @classmethod
    def from_scenes(cls, scenes) -> "SceneBatch":
        scenes = list(scenes)
        if not scenes:
            raise InputError("empty batch")
        for s in scenes:
            if len(s.persons) == 0:
                raise EmptySceneError(f"scene {s.scene_id} has no persons")
        Ts = {np.asarray(s.persons).shape[1] for s in scenes}
        if len(Ts) != 1:
            raise InputError(f"scenes disagree on number of timesteps: {sorted(Ts)}")
        feats = np.concatenate([np.asarray(s.persons, dtype=T.DTYPE) for s in scenes])
        counts = [len(s.persons) for s in scenes]
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.intp)
        acts = None
        if all(s.action_labels is not None for s in scenes):
            acts = np.concatenate([np.asarray(s.action_labels, dtype=np.intp) for s in scenes])
        groups = None
        if all(s.activity_label is not None for s in scenes):
            groups = np.array([s.activity_label for s in scenes], dtype=np.intp)
        return cls(feats, offsets, acts, groups)


def as_batch(scenes_or_batch) -> SceneBatch:
    if isinstance(scenes_or_batch, SceneBatch):
        return scenes_or_batch
    if hasattr(scenes_or_batch, "persons"):
        return SceneBatch.from_scenes([scenes_or_batch])
    return SceneBatch.from_scenes(scenes_or_batch)


@dataclass
class PersonOutput:
    action_logits: np.ndarray | None
    enc: np.ndarray
    hidden: np.ndarray | None
    cache: dict = field(repr=False, default_factory=dict)


def person_forward(pm: PersonModel, tracklets) -> PersonOutput:
    """Run encoder, LSTM1 and the action head over (K, T, D_in) tracklets.

    A single (T, D_in) tracklet is accepted and treated as K = 1.
    """
    x = T.float_array(tracklets)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != pm.encoder.n_in:
        raise DimensionError(f"tracklets of shape {x.shape} do not fit encoder input {pm.encoder.n_in}")
    cache = {}
    enc, cache["encoder"] = fc_forward(pm.encoder, x)
    head_in, hidden = enc, None
    if pm.lstm1 is not None:
        hs, cache["lstm1"] = lstm_forward(pm.lstm1, enc.transpose(1, 0, 2))
        hidden = hs.transpose(1, 0, 2)
        head_in = hidden
    logits = None
    if pm.action_head is not None:
        logits, cache["action_head"] = fc_forward(pm.action_head, head_in)
    return PersonOutput(logits, enc, hidden, cache)


def person_backward(pm: PersonModel, out: PersonOutput, d_logits=None, d_enc=None,
                    d_hidden=None) -> dict[str, Part]:
    grads: dict[str, Part] = {}
    d_enc = np.zeros_like(out.enc) if d_enc is None else d_enc.copy()
    d_head_in = None
    if pm.action_head is not None:
        if d_logits is None:
            grads["action_head"] = pm.action_head.zeros_like()
        else:
            grads["action_head"], d_head_in = fc_backward(pm.action_head, out.cache["action_head"], d_logits)
    if pm.lstm1 is not None:
        dh = np.zeros_like(out.hidden)
        if d_hidden is not None:
            dh += d_hidden
        if d_head_in is not None:
            dh += d_head_in
        grads["lstm1"], dxs = lstm_backward(pm.lstm1, out.cache["lstm1"], dh.transpose(1, 0, 2))
        d_enc += dxs.transpose(1, 0, 2)
    elif d_head_in is not None:
        d_enc += d_head_in
    grads["encoder"], _ = fc_backward(pm.encoder, out.cache["encoder"], d_enc)
    return grads


def person_features(model: Model, features) -> np.ndarray:
    """Per-person inputs to the pooling layer: enc (+) hidden, or enc alone."""
    out = person_forward(model.person, features)
    return concat(out.enc, out.hidden) if out.hidden is not None else out.enc


def group_forward(model: Model, scenes, person_feats: np.ndarray | None = None):
    """Activity logits of shape (B, T, G) for a batch, plus a cache for backward.

    ``person_feats`` may carry precomputed pooling inputs (frozen stage 1).
    """
    batch = as_batch(scenes)
    cfg, parts = model.config, model.parts
    cache: dict = {"batch": batch}
    if batch.features.shape[-1] != cfg.feature_dim:
        raise DimensionError(f"scene features have width {batch.features.shape[-1]}, model expects {cfg.feature_dim}")
    if cfg.scene_level:
        x, cache["mean"] = pool_segments(batch.features, batch.offsets, "average")
        if "encoder" in parts:
            x, cache["encoder"] = fc_forward(parts["encoder"], x)
    else:
        if person_feats is None:
            out = person_forward(model.person, batch.features)
            cache["person"] = out
            person_feats = concat(out.enc, out.hidden) if out.hidden is not None else out.enc
        x, cache["pool"] = pool_segments(person_feats, batch.offsets, cfg.pool)
    if "group_fc" in parts:
        x, cache["group_fc"] = fc_forward(parts["group_fc"], x)
    if "lstm2" in parts:
        hs, cache["lstm2"] = lstm_forward(parts["lstm2"], x.transpose(1, 0, 2))
        x = hs.transpose(1, 0, 2)
    logits, cache["activity_head"] = fc_forward(parts["activity_head"], x)
    return logits, cache


def group_backward(model: Model, cache, dlogits: np.ndarray, through_person: bool = False) -> dict[str, Part]:
    """Gradients of group-stage parts; with ``through_person`` also person parts."""
    parts = model.parts
    grads: dict[str, Part] = {}
    grads["activity_head"], dx = fc_backward(parts["activity_head"], cache["activity_head"], dlogits)
    if "lstm2" in parts:
        grads["lstm2"], dxs = lstm_backward(parts["lstm2"], cache["lstm2"], dx.transpose(1, 0, 2))
        dx = dxs.transpose(1, 0, 2)
    if "group_fc" in parts:
        grads["group_fc"], dx = fc_backward(parts["group_fc"], cache["group_fc"], dx)
    if model.config.scene_level:
        if "encoder" in parts:
            grads["encoder"], dx = fc_backward(parts["encoder"], cache["encoder"], dx)
        return grads
    if through_person:
        if "person" not in cache:
            raise InputError("person gradients need a forward pass without precomputed person features")
        dq = pool_segments_backward(cache["pool"], dx)
        out = cache["person"]
        if out.hidden is not None:
            d_enc, d_hidden = concat_backward(dq, out.enc.shape[-1])
        else:
            d_enc, d_hidden = dq, None
        grads.update(person_backward(model.person, out, None, d_enc, d_hidden))
    return grads


def predict_sequence(logits) -> int:
    """Class whose logits summed over time are largest (ties: lowest index)."""
    logits = T.float_array(logits)
    if logits.ndim == 1:
        logits = logits[None]
    if logits.shape[0] < 1:
        raise InputError("need at least one timestep")
    return int(np.argmax(logits.sum(axis=0)))


def baseline_forward(config: ModelConfig, params: Model | dict, scene) -> np.ndarray:
    """(T, G) activity logits of one scene for any variant."""
    model = params if isinstance(params, Model) else Model(config, params)
    if model.config != config:
        if model.config.variant != config.variant:
            raise ConfigError(f"parameters are for {model.config.variant}, config asks for {config.variant}")
        raise ConfigError("parameters do not match the configuration")
    logits, _ = group_forward(model, scene)
    return logits[0]


def scene_logits(model: Model, scenes, batch_size: int = 64) -> list[np.ndarray]:
    scenes = list(scenes)
    out = []
    for a in range(0, len(scenes), batch_size):
        logits, _ = group_forward(model, scenes[a:a + batch_size])
        out.extend(logits)
    return out


def predict(model: Model, scenes, batch_size: int = 64) -> np.ndarray:
    return np.array([predict_sequence(l) for l in scene_logits(model, scenes, batch_size)], dtype=np.intp)


# ---------------------------------------------------------------------------
# checkpoint format
#
#   bytes 0-3   b"HGR1"
#   10 x uint32 feature_dim, encoder_dim, lstm1_hidden, group_fc_dim, lstm2_hidden,
#               timesteps, num_actions, num_activities, variant index, pool index
#   uint32      number of parameter tensors
#   float64[]   every tensor of Model.named_tensors(), row-major, in that order
#
# All integers and doubles are little-endian.

MAGIC = b"HGR1"
_HEADER = struct.Struct("<4s10II")


def checkpoint_bytes(model: Model) -> bytes:
    cfg = model.config
    tensors = model.named_tensors()
    head = _HEADER.pack(MAGIC, *(getattr(cfg, k) for k in _CONFIG_INTS),
                        VARIANTS.index(cfg.variant), POOL_MODES.index(cfg.pool), len(tensors))
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in tensors)
    return head + body


def model_from_bytes(data: bytes) -> Model:
    if len(data) < 4 or data[:3] != MAGIC[:3]:
        raise ParseError("not a model checkpoint (bad magic)")
    if data[:4] != MAGIC:
        raise VersionError(f"unsupported checkpoint version {data[3:4]!r}; expected {MAGIC[3:4]!r}")
    if len(data) < _HEADER.size:
        raise ParseError("truncated checkpoint header")
    vals = _HEADER.unpack_from(data)
    ints = dict(zip(_CONFIG_INTS, vals[1:9]))
    variant_idx, pool_idx, n_tensors = vals[9:12]
    if variant_idx >= len(VARIANTS) or pool_idx >= len(POOL_MODES):
        raise ParseError(f"bad variant/pool tag {variant_idx}/{pool_idx}")
    try:
        cfg = ModelConfig(**ints, variant=VARIANTS[variant_idx], pool=POOL_MODES[pool_idx])
    except ConfigError as exc:
        raise ParseError(f"bad checkpoint config: {exc}") from None
    template = init_model(cfg, seed=0)
    tensors = template.named_tensors()
    if n_tensors != len(tensors):
        raise ParseError(f"checkpoint holds {n_tensors} tensors, {cfg.variant} needs {len(tensors)}")
    expected = _HEADER.size + 8 * sum(arr.size for _, arr in tensors)
    if len(data) != expected:
        raise ParseError(f"checkpoint is {len(data)} bytes, expected {expected}")
    pos = _HEADER.size
    for _, arr in tensors:
        n = arr.size
        arr[...] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(arr.shape)
        pos += 8 * n
    return template


def save_checkpoint(model: Model, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
