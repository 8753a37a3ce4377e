"""Hierarchical two-stage LSTM model for group activity recognition."""

from .data import Dataset, GenConfig, Scene, generate, load_dataset, save_dataset, split
from .errors import (ConfigError, DimensionError, DivergenceError, EmptySceneError, GroupLSTMError,
                     InputError, ParseError, SplitError, VersionError)
from .lstm import LstmParams, LstmState, TapeCache, lstm_backward, lstm_forward, lstm_init, lstm_step
from .model import (VARIANTS, GroupModel, Model, ModelConfig, PersonModel, SceneBatch, baseline_forward,
                    group_forward, init_model, load_checkpoint, person_forward, predict_sequence,
                    save_checkpoint)
from .nn import FcParams, concat, fc_forward, pool_persons, softmax_xent
from .optim import OptimState, grad_check, sgd_step
from .pipeline import (BENCH_VARIANTS, ConfusionMatrix, TrainConfig, TrainReport, bench_all, evaluate,
                       train_model, train_stage1, train_stage2)

__version__ = "0.1.0"
