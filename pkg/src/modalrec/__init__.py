"""Transferable multi-modal sequential recommendation engine."""

from .adaptation import AdaptSpec, adapt, score_all_items
from .checkpoint import Checkpoint, InteractionEmb, load_checkpoint, save_checkpoint
from .config import VERSION, EngineConfig
from .dataio import (ItemRecord, SplitDataset, TaskDataset, UserSplit,
                     load_task_dataset, read_embedding_file,
                     split_leave_one_out, write_embedding_file)
from .evaluation import (MetricsReport, evaluate, ndcg_at_k, paired_t_test,
                         recall_at_k)
from .intent import IntentConfig, IntentParams, encode_sequence
from .irl import (IrlConfig, IrlParams, encode_price, fuse, gaussian_route,
                  item_embedding, linear_project, whiten_project)
from .objective import (LossBreakdown, alignment_regularizer, pretrain_objective,
                        recommendation_loss)
from .probe import ProbeResult, build_probe_dataset, probe_pair, train_linear_probe
from .synth import SynthConfig, generate_synthetic_suite
from .training import (GradCheckConfig, TrainConfig, adam_step, gradient_check,
                       pretrain)

__version__ = VERSION
