"""
Experiment protocols: k-fold by reference content, cross-dataset testing,
and scoring a trained model against a manifest.
"""
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.ai.metrics import ScorePairs, plcc, srocc
from src.ai.network import ModelParams, mean_score, partition_forward
from src.ai.trainer import LossRecord, Sample, Trainer, prepare_samples
from src.data.patch_cache import PatchCache
from src.models.config import ModelConfig, PreprocessConfig, TrainConfig
from src.models.manifest import DatasetManifest
from src.models.report import FoldMetrics, RunReport, StimulusScore

logger = logging.getLogger(__name__)


class FoldError(ValueError):
    """The manifest cannot be split into the requested folds."""


@dataclass
class FoldRun:
    fold: int
    train: DatasetManifest
    test: DatasetManifest
    params: ModelParams
    trace: List[LossRecord]


def _check_separation(train: DatasetManifest, test: DatasetManifest):
    shared = set(train.reference_ids()) & set(test.reference_ids())
    if shared:
        raise FoldError(f"references in both train and test: {sorted(shared)}")


def kfold_split(manifest: DatasetManifest, k: int, seed: int = 0) -> List[Tuple[DatasetManifest, DatasetManifest]]:
    """
    Split by reference content: every degraded version of a reference lands
    in the same test fold. References are shuffled by seed, then dealt
    round-robin into k folds.
    """
    references = sorted(manifest.reference_ids())
    if k < 1:
        raise FoldError(f"fold count must be >= 1, got {k}")
    if len(references) < k:
        raise FoldError(f"{len(references)} references cannot fill {k} folds")
    if k == 1:
        raise FoldError("a single fold leaves an empty training set")

    rng = np.random.Generator(np.random.Philox(seed))
    shuffled = [references[i] for i in rng.permutation(len(references))]
    splits = []
    for fold in range(k):
        test_refs = shuffled[fold::k]
        train_refs = [r for r in shuffled if r not in test_refs]
        train, test = manifest.subset(train_refs), manifest.subset(test_refs)
        _check_separation(train, test)
        splits.append((train, test))
    return splits


def predefined_split(manifest: DatasetManifest) -> List[Tuple[DatasetManifest, DatasetManifest]]:
    """Folds taken from the manifest's fold column: fold i is the test set of split i."""
    if not manifest.has_folds() or any(e.fold is None for e in manifest.entries):
        raise FoldError("every manifest row needs a fold value")
    fold_ids = manifest.fold_ids()
    if len(fold_ids) < 2:
        raise FoldError("a single fold leaves an empty training set")
    splits = []
    for fold in fold_ids:
        train = DatasetManifest([replace(e, fold=None) for e in manifest.entries if e.fold != fold])
        test = DatasetManifest([replace(e, fold=None) for e in manifest.entries if e.fold == fold])
        _check_separation(train, test)
        splits.append((train, test))
    return splits


def fold_assignment(splits: Sequence[Tuple[DatasetManifest, DatasetManifest]]) -> Dict[str, int]:
    """reference_id -> index of the fold that tests it."""
    return {ref: i for i, (_, test) in enumerate(splits) for ref in test.reference_ids()}


def apply_folds(manifest: DatasetManifest, assigned: DatasetManifest) -> DatasetManifest:
    """Copy the fold column of `assigned` onto `manifest`, matched by reference id."""
    folds = {e.reference_id: e.fold for e in assigned.entries if e.fold is not None}
    missing = [ref for ref in manifest.reference_ids() if ref not in folds]
    if missing:
        raise FoldError(f"no fold recorded for references: {missing}")
    return manifest.with_folds(folds)


def score_samples(samples: Sequence[Sample], params: ModelParams) -> List[float]:
    return [mean_score([partition_forward(p, params) for p in s.partitions]) for s in samples]


def fold_metrics(fold: int, test: DatasetManifest, predictions: Sequence[float]) -> FoldMetrics:
    pairs = ScorePairs.of(predictions, test.mos_values())
    return FoldMetrics(fold=fold, test_references=test.reference_ids(),
                       plcc=plcc(pairs), srocc=srocc(pairs), stimuli=len(test))


def _stimulus_scores(test: DatasetManifest, predictions: Sequence[float],
                     fold: Optional[int]) -> List[StimulusScore]:
    return [StimulusScore(path=e.path, reference_id=e.reference_id, mos=e.mos,
                          predicted=float(p), fold=fold)
            for e, p in zip(test.entries, predictions)]


def evaluate_model(params: ModelParams, manifest: DatasetManifest, pre_cfg: PreprocessConfig,
                   base_dir: Optional[Union[str, Path]] = None, threads: Optional[int] = None,
                   fold: int = 0, cache: Optional[PatchCache] = None) -> Tuple[List[StimulusScore], FoldMetrics]:
    """Predict every stimulus of `manifest` and correlate with its MOS."""
    samples = prepare_samples(manifest, pre_cfg, base_dir, threads, cache)
    predictions = score_samples(samples, params)
    return _stimulus_scores(manifest, predictions, fold), fold_metrics(fold, manifest, predictions)


def run_kfold(manifest: DatasetManifest, pre_cfg: PreprocessConfig, model_cfg: ModelConfig,
              train_cfg: TrainConfig, base_dir: Optional[Union[str, Path]] = None,
              threads: Optional[int] = None, folds: Optional[int] = None,
              cache: Optional[PatchCache] = None) -> Tuple[List[FoldRun], RunReport]:
    """
    Train one model per fold and test it on the held-out references.
    Uses the manifest's fold column when present, otherwise a seeded split.
    """
    started = time.time()
    k = folds or train_cfg.fold_count
    if manifest.has_folds():
        splits = predefined_split(manifest)
        if folds is not None and folds != len(splits):
            raise FoldError(f"manifest defines {len(splits)} folds, {folds} requested")
    else:
        splits = kfold_split(manifest, k, train_cfg.seed)

    # every stimulus is preprocessed once and shared across folds
    samples = {s.name: s for s in prepare_samples(manifest, pre_cfg, base_dir, threads, cache)}

    runs: List[FoldRun] = []
    stimuli: List[StimulusScore] = []
    metrics: List[FoldMetrics] = []
    for fold, (train_set, test_set) in enumerate(splits):
        logger.info("fold %d/%d: %d train, %d test stimuli", fold + 1, len(splits),
                    len(train_set), len(test_set))
        result = Trainer(model_cfg, train_cfg).fit([samples[e.path] for e in train_set.entries])
        predictions = score_samples([samples[e.path] for e in test_set.entries], result.params)
        stimuli += _stimulus_scores(test_set, predictions, fold)
        metrics.append(fold_metrics(fold, test_set, predictions))
        runs.append(FoldRun(fold, train_set, test_set, result.params, result.trace))
        logger.info("✓ fold %d: PLCC %.4f SROCC %.4f", fold, metrics[-1].plcc, metrics[-1].srocc)

    report = RunReport.build(
        command='train', seed=train_cfg.seed,
        config={'preprocess': pre_cfg.to_dict(), 'model': model_cfg.to_dict(), 'train': train_cfg.to_dict()},
        stimuli=stimuli, folds=metrics, wall_time_s=time.time() - started,
    )
    return runs, report


def cross_dataset(train_manifest: DatasetManifest, test_manifest: DatasetManifest,
                  pre_cfg: PreprocessConfig, model_cfg: ModelConfig, train_cfg: TrainConfig,
                  train_dir: Optional[Union[str, Path]] = None,
                  test_dir: Optional[Union[str, Path]] = None,
                  threads: Optional[int] = None,
                  cache: Optional[PatchCache] = None) -> Tuple[ModelParams, RunReport]:
    """Train on every stimulus of one dataset, test on another."""
    started = time.time()
    samples = prepare_samples(train_manifest, pre_cfg, train_dir, threads, cache)
    result = Trainer(model_cfg, train_cfg).fit(samples)
    stimuli, metrics = evaluate_model(result.params, test_manifest, pre_cfg, test_dir, threads, cache=cache)
    report = RunReport.build(
        command='train', seed=train_cfg.seed,
        config={'preprocess': pre_cfg.to_dict(), 'model': model_cfg.to_dict(), 'train': train_cfg.to_dict(),
                'protocol': 'cross-dataset'},
        stimuli=stimuli, folds=[metrics], wall_time_s=time.time() - started,
    )
    return result.params, report
