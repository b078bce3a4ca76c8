"""Autodiff core and the attention-based latency model."""

from .autograd import Tensor, concat, einsum, parameter
from .batching import Batch, BatchSource, labels_for, make_batch
from .checkpoint import group_hash, load_checkpoint, save_checkpoint
from .model import HEADS, LabelBatch, ModelConfig, Predictions, TaoModel, attend, embed, heads, loss
from .optim import SGD, Adam
from .train import TrainConfig, evaluate, init_head_biases, train
