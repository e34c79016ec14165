"""
End-to-end finite-difference check of the network on a micro configuration.
"""
import logging
import time
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from src.ai.autodiff import finite_difference_check
from src.ai.network import init_model, partition_score
from src.ai.preprocess import normalize_patch
from src.ai.trainer import loss
from src.models.config import ModelConfig
from src.models.point_cloud import Patch

logger = logging.getLogger(__name__)

TOLERANCE = 1e-4
MICRO_CONFIG = dict(block_widths=(4, 4, 4), heads=2, patch_size=6, head_hidden=(4,))


@dataclass(frozen=True)
class GradcheckReport:
    max_error: float
    parameters: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def micro_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(seed=seed, **MICRO_CONFIG)


def micro_patches(cfg: ModelConfig, count: int = 2, seed: int = 0) -> List[Patch]:
    rng = np.random.Generator(np.random.Philox(seed + 1))
    return [normalize_patch(rng.normal(size=(cfg.patch_size, 3)), rng.uniform(size=(cfg.patch_size, 3)))
            for _ in range(count)]


def micro_params(cfg: ModelConfig) -> Dict[str, np.ndarray]:
    """Initialized weights with biases and norm parameters moved off their constant defaults."""
    rng = np.random.Generator(np.random.Philox(cfg.seed + 2))
    tensors = init_model(cfg).tensors
    for name, value in tensors.items():
        if value.ndim == 1:
            tensors[name] = value + rng.uniform(-0.5, 0.5, size=value.shape)
    return tensors


def _corrupt(grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    broken = {k: v.copy() for k, v in grads.items()}
    for value in broken.values():
        value.reshape(-1)[0] += 1.0
    return broken


def run_gradcheck(seed: int = 0, corrupt: bool = False, h: float = 1e-6) -> GradcheckReport:
    """Compare backprop with central differences over every parameter of the micro model."""
    started = time.time()
    cfg = micro_config(seed)
    patches = micro_patches(cfg, seed=seed)
    params = micro_params(cfg)
    mos = 3.0

    def objective(leaves):
        return loss([partition_score(patches, leaves, cfg)], mos)

    error = finite_difference_check(objective, params, h=h, analytic_hook=_corrupt if corrupt else None)
    report = GradcheckReport(error, int(sum(v.size for v in params.values())), time.time() - started)
    logger.info("%s gradient check: max relative error %.3e over %d parameters",
                "✓" if report.passed else "✗", report.max_error, report.parameters)
    return report
