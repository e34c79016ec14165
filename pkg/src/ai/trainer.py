"""
MSE regression of partition-score means onto MOS, optimized with Adam.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.ai.autodiff import Node, NodeLike, add, backward, leaf, lift, multiply_elementwise, scalar_multiply, subtract
from src.ai.network import ModelParams, init_model, partition_score
from src.ai.preprocess import preprocess_cloud
from src.data.patch_cache import PatchCache, stimulus_key
from src.data.ply_reader import read_ply_file
from src.data.weights_io import write_weights_file
from src.models.config import ModelConfig, PreprocessConfig, TrainConfig
from src.models.manifest import DatasetManifest
from src.models.point_cloud import Patch

logger = logging.getLogger(__name__)


class StimulusError(ValueError):
    """A stimulus could not be loaded; the message starts with its path."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path


@dataclass
class Sample:
    """One preprocessed stimulus ready for training."""
    name: str
    mos: float
    partitions: List[List[Patch]]


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    stimulus: str
    loss: float


@dataclass
class OptimizerState:
    """Adam moments per parameter name plus the shared step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def initial(cls, params: Dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


@dataclass
class TrainResult:
    params: ModelParams
    trace: List[LossRecord]


def loss(partition_scores: Sequence[NodeLike], mos: float) -> Node:
    """(mean(scores) - mos)^2 as a 1 x 1 node."""
    if not partition_scores:
        raise ValueError("loss needs at least one partition score")
    total = lift(partition_scores[0])
    for score in partition_scores[1:]:
        total = add(total, score)
    error = subtract(scalar_multiply(total, 1.0 / len(partition_scores)), float(mos))
    return multiply_elementwise(error, error)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState,
              cfg: TrainConfig) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.t + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ValueError(f"shape mismatch for {name}: param {p.shape}, grad {g.shape}")
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps_adam)
        new_m[name], new_v[name] = m, v
    return new_params, OptimizerState(new_m, new_v, t)


def load_sample(path: str, mos: float, pre_cfg: PreprocessConfig,
                base_dir: Optional[Union[str, Path]] = None,
                cache: Optional[PatchCache] = None) -> Sample:
    """Read and preprocess one stimulus, through the patch cache when one is given."""
    full_path = Path(base_dir) / path if base_dir else Path(path)
    try:
        if cache is None:
            prepared = preprocess_cloud(read_ply_file(full_path), pre_cfg)
        else:
            prepared = cache.get_patches(stimulus_key(full_path), pre_cfg,
                                         lambda: preprocess_cloud(read_ply_file(full_path), pre_cfg))
    except (ValueError, OSError) as e:
        raise StimulusError(path, str(e)) from e
    return Sample(name=path, mos=mos, partitions=prepared.patches)


def prepare_samples(manifest: DatasetManifest, pre_cfg: PreprocessConfig,
                    base_dir: Optional[Union[str, Path]] = None,
                    threads: Optional[int] = None,
                    cache: Optional[PatchCache] = None) -> List[Sample]:
    """Parse and preprocess every stimulus once, in manifest order."""
    entries = manifest.entries
    workers = max(1, min(threads or 1, len(entries)))
    if workers == 1:
        samples = [load_sample(e.path, e.mos, pre_cfg, base_dir, cache) for e in entries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(lambda e: load_sample(e.path, e.mos, pre_cfg, base_dir, cache), entries))
    logger.info("✓ Prepared %d stimuli (%d patches)", len(samples),
                sum(len(p) for s in samples for p in s.partitions))
    return samples


def sample_gradients(sample: Sample, tensors: Dict[str, np.ndarray],
                     cfg: ModelConfig) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss value and gradient of every parameter for one stimulus."""
    leaves = {name: leaf(value, name) for name, value in tensors.items()}
    scores = [partition_score(patches, leaves, cfg) for patches in sample.partitions]
    loss_node = loss(scores, sample.mos)
    grads = backward(loss_node, list(leaves.values()))
    return loss_node.item(), dict(zip(leaves, grads))


class Trainer:
    """
    Batch size one Adam training: each step is one stimulus, visited in a
    seed-determined shuffled order per epoch.
    """

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg

    def fit(self, samples: Sequence[Sample], init: Optional[ModelParams] = None) -> TrainResult:
        if not samples:
            raise ValueError("training needs at least one stimulus")
        tensors = (init or init_model(self.model_cfg)).copy().tensors
        state = OptimizerState.initial(tensors)
        rng = np.random.Generator(np.random.Philox(self.train_cfg.seed))
        trace: List[LossRecord] = []

        for epoch in range(1, self.train_cfg.epochs + 1):
            order = rng.permutation(len(samples))
            tensors, state = self._run_epoch(epoch, [samples[int(i)] for i in order], tensors, state, trace)
            self._checkpoint(epoch, tensors)

        return TrainResult(ModelParams(self.model_cfg, tensors), trace)

    def _run_epoch(self, epoch: int, ordered: Sequence[Sample], tensors: Dict[str, np.ndarray],
                   state: OptimizerState, trace: List[LossRecord]) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
        epoch_losses = []
        for sample in ordered:
            value, grads = sample_gradients(sample, tensors, self.model_cfg)
            tensors, state = adam_step(tensors, grads, state, self.train_cfg)
            trace.append(LossRecord(epoch, len(trace), sample.name, value))
            epoch_losses.append(value)
        logger.info("epoch %d/%d mean loss %.6f", epoch, self.train_cfg.epochs, float(np.mean(epoch_losses)))
        return tensors, state

    def _checkpoint(self, epoch: int, tensors: Dict[str, np.ndarray]):
        checkpoint = self.train_cfg.checkpoint_path(epoch)
        if checkpoint is not None:
            write_weights_file(ModelParams(self.model_cfg, tensors), checkpoint)
            logger.info("checkpoint written: %s", checkpoint)


def train(manifest: DatasetManifest, pre_cfg: PreprocessConfig, model_cfg: ModelConfig,
          train_cfg: TrainConfig, base_dir: Optional[Union[str, Path]] = None,
          threads: Optional[int] = None, cache: Optional[PatchCache] = None) -> TrainResult:
    """Train end to end on every stimulus of the manifest."""
    if len(manifest) == 0:
        raise ValueError("manifest is empty")
    samples = prepare_samples(manifest, pre_cfg, base_dir, threads, cache)
    return Trainer(model_cfg, train_cfg).fit(samples)


def trace_to_frame(trace: Sequence[LossRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.epoch, r.step, r.stimulus, r.loss) for r in trace],
        columns=['epoch', 'step', 'stimulus', 'loss'],
    )


def write_loss_trace(trace: Sequence[LossRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_to_frame(trace).to_csv(path, index=False, float_format='%.17g')
    return path
