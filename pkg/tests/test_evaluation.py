import sys

import pytest
sys.path.insert(0, '.')

from src.ai.evaluation import (
    FoldError, apply_folds, cross_dataset, evaluate_model, fold_assignment, fold_metrics, kfold_split,
    predefined_split, run_kfold,
)
from src.ai.network import init_model
from src.data.manifest_loader import ManifestLoader
from src.data.patch_cache import PatchCache
from src.data.synthetic import make_noise_ladder_dataset
from src.models.config import ModelConfig, PreprocessConfig, TrainConfig
from src.models.manifest import DatasetManifest, ManifestEntry
from src.models.report import RunReport

TINY = ModelConfig(block_widths=(4, 4, 4), heads=2, patch_size=8, head_hidden=(4,), seed=0)
PRE = PreprocessConfig(patch_size=8, partitions=2)


def build_manifest(references=6, per_reference=3, folds=None):
    entries = []
    for r in range(references):
        for d in range(per_reference):
            fold = None if folds is None else r % folds
            entries.append(ManifestEntry(f"ref{r}_d{d}.ply", 1.0 + r + 0.1 * d, f"ref{r}", fold))
    return DatasetManifest(entries)


def test_kfold_keeps_references_together():
    manifest = build_manifest(references=12)
    splits = kfold_split(manifest, 6, seed=0)
    assert len(splits) == 6
    tested = []
    for train, test in splits:
        assert not set(train.reference_ids()) & set(test.reference_ids())
        assert len(train) + len(test) == len(manifest)
        tested += test.reference_ids()
    assert sorted(tested) == sorted(manifest.reference_ids())


def test_kfold_is_seeded():
    manifest = build_manifest(references=12)
    first = [t.reference_ids() for _, t in kfold_split(manifest, 4, seed=1)]
    again = [t.reference_ids() for _, t in kfold_split(manifest, 4, seed=1)]
    other = [t.reference_ids() for _, t in kfold_split(manifest, 4, seed=2)]
    assert first == again
    assert first != other


def test_kfold_with_one_reference_per_fold():
    splits = kfold_split(build_manifest(references=3), 3)
    assert all(len(test.reference_ids()) == 1 for _, test in splits)


def test_too_few_references_for_folds():
    with pytest.raises(FoldError):
        kfold_split(build_manifest(references=5), 6)


def test_single_fold_is_rejected():
    with pytest.raises(FoldError, match="empty training set"):
        kfold_split(build_manifest(references=3), 1)


def test_predefined_split_uses_fold_column():
    manifest = build_manifest(references=6, folds=3)
    splits = predefined_split(manifest)
    assert len(splits) == 3
    assert fold_assignment(splits) == {f"ref{r}": r % 3 for r in range(6)}


def test_fold_metrics_for_perfect_predictions():
    test = build_manifest(references=3)
    metrics = fold_metrics(0, test, test.mos_values())
    assert metrics.plcc == pytest.approx(1.0)
    assert metrics.srocc == pytest.approx(1.0)


def test_report_means_are_fold_means():
    test = build_manifest(references=3)
    folds = [fold_metrics(0, test, test.mos_values()),
             fold_metrics(1, test, [m * m for m in test.mos_values()])]
    report = RunReport.build('train', 0, {}, [], folds)
    assert report.mean_plcc == pytest.approx((folds[0].plcc + folds[1].plcc) / 2)
    assert report.mean_srocc == pytest.approx(1.0)
    assert RunReport.model_validate_json(report.to_json()) == report


@pytest.fixture
def ladder(tmp_path):
    path = make_noise_ladder_dataset(tmp_path, n_points=64, seed=0, noise_levels=(0.0, 0.05, 0.1))
    return ManifestLoader.load_manifest_file(path), tmp_path


def test_run_kfold_on_tiny_ladder(ladder):
    manifest, base_dir = ladder
    runs, report = run_kfold(manifest, PRE, TINY, TrainConfig(epochs=1, fold_count=2), base_dir, threads=2)
    assert len(runs) == 2 == len(report.folds)
    assert len(report.stimuli) == len(manifest)
    assert {s.path for s in report.stimuli} == {e.path for e in manifest.entries}
    for run in runs:
        assert not set(run.train.reference_ids()) & set(run.test.reference_ids())


def test_run_kfold_fold_count_must_match_manifest(ladder):
    manifest, base_dir = ladder
    folded = manifest.with_folds({ref: i % 2 for i, ref in enumerate(manifest.reference_ids())})
    with pytest.raises(FoldError):
        run_kfold(folded, PRE, TINY, TrainConfig(epochs=0), base_dir, folds=3)


def test_cross_dataset_and_evaluate(ladder):
    manifest, base_dir = ladder
    train_set, test_set = manifest.subset(['sphere', 'box']), manifest.subset(['torus', 'cylinder'])
    params, report = cross_dataset(train_set, test_set, PRE, TINY, TrainConfig(epochs=1), base_dir, base_dir)
    assert len(report.folds) == 1
    assert report.folds[0].stimuli == len(test_set)
    stimuli, metrics = evaluate_model(init_model(TINY), test_set, PRE, base_dir)
    assert len(stimuli) == len(test_set)
    assert -1.0 <= metrics.plcc <= 1.0


def test_apply_folds_reproduces_a_recorded_split():
    manifest = build_manifest(references=6)
    recorded = kfold_split(manifest, 3, seed=3)
    assigned = manifest.with_folds(fold_assignment(recorded))
    replayed = predefined_split(apply_folds(manifest, assigned))
    assert [t.reference_ids() for _, t in replayed] == [t.reference_ids() for _, t in recorded]


def test_apply_folds_needs_every_reference():
    manifest = build_manifest(references=4)
    partial = build_manifest(references=3, folds=3)
    with pytest.raises(FoldError, match="ref3"):
        apply_folds(manifest, partial)


def test_run_kfold_through_patch_cache(ladder, tmp_path):
    manifest, base_dir = ladder
    cache = PatchCache(tmp_path / "cache")
    cfg = TrainConfig(epochs=1, fold_count=2)
    _, first = run_kfold(manifest, PRE, TINY, cfg, base_dir, cache=cache)
    assert len(list((tmp_path / "cache").glob("*.patches"))) == len(manifest)
    _, again = run_kfold(manifest, PRE, TINY, cfg, base_dir, cache=cache)
    assert [f.plcc for f in again.folds] == [f.plcc for f in first.folds]
    assert [s.predicted for s in again.stimuli] == [s.predicted for s in first.stimuli]
