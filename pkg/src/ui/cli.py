"""
Command-line surface: preprocess, train, predict, eval, gradcheck, synth.

Scores and reports go to stdout, diagnostics to stderr through logging.
Exit codes: 0 ok, 1 check failure, 2 input error.
"""
import argparse
import logging
import os
import time
from pathlib import Path
from typing import List, Optional, Union

from src.ai.evaluation import (
    FoldError, apply_folds, cross_dataset, evaluate_model, fold_assignment, predefined_split, run_kfold,
)
from src.ai.gradcheck import TOLERANCE, run_gradcheck
from src.ai.metrics import UndefinedCorrelationError
from src.ai.network import predict
from src.ai.preprocess import preprocess_cloud
from src.ai.trainer import train, write_loss_trace
from src.data.manifest_loader import ManifestLoader
from src.data.patch_cache import PatchCache, stimulus_key
from src.data.ply_reader import read_ply_file
from src.data.synthetic import make_blob_dataset, make_noise_ladder_dataset
from src.data.weights_io import read_weights_file, write_weights_file
from src.models.config import ModelConfig, PreprocessConfig, TrainConfig
from src.models.report import RunReport
from src.ui.plots import plot_loss_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2

THREADS_ENV = "PCQA_THREADS"
FOLDS_FILE = "folds.csv"


def resolve_threads(flag: Optional[int]) -> int:
    """--threads, then $PCQA_THREADS, then the machine's CPU count."""
    if flag is not None:
        value = flag
    elif os.environ.get(THREADS_ENV):
        try:
            value = int(os.environ[THREADS_ENV])
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}")
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise ValueError(f"thread count must be >= 1, got {value}")
    return value


def _partitions(value: str) -> Union[str, int]:
    if value == "auto":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or an integer, got {value!r}")


def _folds(value: str) -> Optional[int]:
    if value.lower() == "none":
        return None
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'none', got {value!r}")


def _int_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def _ply_inputs(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(path.glob("*.ply"))
    if not path.exists():
        raise FileNotFoundError(f"Input not found: {path}")
    return [path]


def _base_dir(manifest_path: str, data_dir: Optional[str]) -> Path:
    return Path(data_dir) if data_dir else Path(manifest_path).parent


def _preprocess_config(args, patch_size: Optional[int] = None) -> PreprocessConfig:
    return PreprocessConfig(patch_size=patch_size or args.patch_size, partitions=args.partitions)


def _cache(args) -> Optional[PatchCache]:
    return PatchCache(args.cache_dir) if args.cache_dir else None


def _emit_report(report: RunReport, out: Optional[Path]):
    text = report.to_json()
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding='utf-8')
        logger.info("report written: %s", out)
    print(text)


# ---- commands ----

def cmd_preprocess(args) -> int:
    cfg = _preprocess_config(args)
    threads = resolve_threads(args.threads)
    cache = PatchCache(args.out)
    logger.debug("preprocess seed %d (patch extraction is deterministic)", args.seed)

    inputs = _ply_inputs(Path(args.input))
    if not inputs:
        raise FileNotFoundError(f"No .ply files in {args.input}")
    failures = 0
    for path in inputs:
        try:
            prepared = preprocess_cloud(read_ply_file(path), cfg, threads)
        except (ValueError, OSError) as e:
            logger.error("✗ %s: %s", path, e)
            failures += 1
            continue
        cache.store(prepared, cfg, key=stimulus_key(path))
        print(f"{path.name}\tpartitions={len(prepared.partitions)}\tpatches={prepared.patch_count}")
    logger.info("✓ Preprocessed %d/%d clouds", len(inputs) - failures, len(inputs))
    return EXIT_INPUT_ERROR if failures else EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    threads = resolve_threads(args.threads)
    pre_cfg = _preprocess_config(args)
    model_cfg = ModelConfig(block_widths=tuple(args.widths), heads=args.heads, patch_size=args.patch_size,
                            head_hidden=tuple(args.head_hidden), seed=args.seed)
    train_cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, seed=args.seed,
                            fold_count=args.folds or TrainConfig.fold_count,
                            checkpoint_every=args.checkpoint_every,
                            checkpoint_dir=args.checkpoint_dir)
    manifest = ManifestLoader.load_manifest_file(args.manifest)
    base_dir = _base_dir(args.manifest, args.data_dir)
    out = Path(args.out)

    if args.folds is not None or (manifest.has_folds() and args.folds_from_manifest):
        runs, report = run_kfold(manifest, pre_cfg, model_cfg, train_cfg, base_dir, threads, args.folds,
                                 cache=_cache(args))
        out.mkdir(parents=True, exist_ok=True)
        for run in runs:
            write_weights_file(run.params, out / f"fold_{run.fold}.weights")
            write_loss_trace(run.trace, out / f"fold_{run.fold}_loss.csv")
            if args.plot:
                plot_loss_trace(run.trace, out / f"fold_{run.fold}_loss_curve.png")
        if manifest.has_folds():
            assigned = manifest
        else:
            assigned = manifest.with_folds(fold_assignment([(r.train, r.test) for r in runs]))
        (out / FOLDS_FILE).write_text(ManifestLoader.save_manifest(assigned), encoding='utf-8')
        _emit_report(report, out / "report.json")
        return EXIT_OK

    if args.test_manifest:
        test_manifest = ManifestLoader.load_manifest_file(args.test_manifest)
        params, report = cross_dataset(manifest, test_manifest, pre_cfg, model_cfg, train_cfg,
                                       base_dir, _base_dir(args.test_manifest, None), threads,
                                       cache=_cache(args))
        write_weights_file(params, out)
        _emit_report(report, out.parent / f"{out.stem}_report.json")
        return EXIT_OK

    result = train(manifest, pre_cfg, model_cfg, train_cfg, base_dir, threads, _cache(args))
    write_weights_file(result.params, out)
    write_loss_trace(result.trace, out.parent / f"{out.stem}_loss.csv")
    if args.plot:
        plot_loss_trace(result.trace, out.parent / "loss_curve.png")
    logger.info("✓ Trained %d parameters on %d stimuli in %.1fs: %s",
                result.params.count(), len(manifest), time.time() - started, out)
    return EXIT_OK


def cmd_predict(args) -> int:
    params = read_weights_file(args.weights)
    pre_cfg = _preprocess_config(args, patch_size=params.config.patch_size)
    cloud = read_ply_file(args.input)
    score = predict(cloud, params, pre_cfg, threads=resolve_threads(args.threads))
    print(f"{score:.17g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.time()
    threads = resolve_threads(args.threads)
    manifest = ManifestLoader.load_manifest_file(args.manifest)
    base_dir = _base_dir(args.manifest, args.data_dir)
    weights = Path(args.weights)

    cache = _cache(args)
    stimuli, folds = [], []
    if weights.is_dir():
        if manifest.has_folds():
            assigned = manifest
        elif (weights / FOLDS_FILE).exists():
            assigned = apply_folds(manifest, ManifestLoader.load_manifest_file(weights / FOLDS_FILE))
        else:
            raise FoldError(f"{weights} has no {FOLDS_FILE} and the manifest has no fold column")
        splits = predefined_split(assigned)
        for i, (_, test) in enumerate(splits):
            params = read_weights_file(weights / f"fold_{i}.weights")
            pre_cfg = _preprocess_config(args, patch_size=params.config.patch_size)
            fold_stimuli, metrics = evaluate_model(params, test, pre_cfg, base_dir, threads, fold=i, cache=cache)
            stimuli += fold_stimuli
            folds.append(metrics)
        config = {'weights_dir': str(weights), 'folds': len(splits)}
    else:
        params = read_weights_file(weights)
        pre_cfg = _preprocess_config(args, patch_size=params.config.patch_size)
        stimuli, metrics = evaluate_model(params, manifest, pre_cfg, base_dir, threads, cache=cache)
        folds.append(metrics)
        config = {'preprocess': pre_cfg.to_dict(), 'model': params.config.to_dict()}

    report = RunReport.build(command='eval', seed=args.seed, config=config, stimuli=stimuli,
                             folds=folds, wall_time_s=time.time() - started)
    _emit_report(report, Path(args.report) if args.report else None)
    logger.info("✓ PLCC %.4f SROCC %.4f over %d fold(s)", report.mean_plcc, report.mean_srocc, len(folds))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(seed=args.seed, corrupt=args.corrupt_gradient)
    print(f"max relative error {report.max_error:.3e} (tolerance {TOLERANCE:.0e}, "
          f"{report.parameters} parameters, {report.seconds:.1f}s)")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_synth(args) -> int:
    if args.kind == 'blobs':
        manifest_path = make_blob_dataset(args.out, count=args.count, n_points=args.points, seed=args.seed)
    else:
        manifest_path = make_noise_ladder_dataset(args.out, n_points=args.points, seed=args.seed)
    print(manifest_path)
    return EXIT_OK


# ---- parser ----

def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--threads', type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV}, then CPU count)")
    parser.add_argument('--verbose', action='store_true', help="debug logging")
    parser.add_argument('--quiet', action='store_true', help="warnings and errors only")


def _preprocess_flags(parser: argparse.ArgumentParser, patch_size: bool = True):
    if patch_size:
        parser.add_argument('--patch-size', type=int, default=512)
    parser.add_argument('--partitions', type=_partitions, default="auto", help="'auto' or a slab count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='pcqa', description="No-reference point cloud quality assessment")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', help="cut clouds into partitions and patches, write the patch cache")
    p.add_argument('--input', required=True, help="PLY file or directory of PLY files")
    p.add_argument('--out', required=True, help="cache directory")
    p.add_argument('--seed', type=int, default=0)
    _preprocess_flags(p)
    _common(p)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser('train', help="train on a manifest (optionally k-fold)")
    p.add_argument('--manifest', required=True)
    p.add_argument('--out', required=True, help="weights file, or output directory with --folds")
    p.add_argument('--data-dir', default=None, help="base for manifest paths (default: manifest directory)")
    p.add_argument('--epochs', type=int, default=TrainConfig.epochs)
    p.add_argument('--lr', type=float, default=TrainConfig.learning_rate)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--folds', type=_folds, default=None, help="fold count or 'none'")
    p.add_argument('--folds-from-manifest', action='store_true',
                   help="run the manifest's fold column as a cross-validation")
    p.add_argument('--test-manifest', default=None, help="train on --manifest, test on this one")
    p.add_argument('--widths', type=_int_list, default=list(ModelConfig.block_widths))
    p.add_argument('--heads', type=int, default=ModelConfig.heads)
    p.add_argument('--head-hidden', type=_int_list, default=list(ModelConfig.head_hidden))
    p.add_argument('--checkpoint-every', type=int, default=None)
    p.add_argument('--checkpoint-dir', default=None)
    p.add_argument('--plot', action='store_true', help="write the loss curve PNG")
    p.add_argument('--cache-dir', default=None, help="read and fill the patch cache here")
    _preprocess_flags(p)
    _common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('predict', help="score one cloud")
    p.add_argument('--weights', required=True)
    p.add_argument('--input', required=True)
    _preprocess_flags(p, patch_size=False)
    _common(p)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser('eval', help="PLCC/SROCC of a model (or fold models) on a manifest")
    p.add_argument('--weights', required=True, help="weights file, or directory of fold_<i>.weights")
    p.add_argument('--manifest', required=True)
    p.add_argument('--data-dir', default=None)
    p.add_argument('--report', default=None, help="also write the JSON report here")
    p.add_argument('--seed', type=int, default=0, help="seed recorded in the report")
    p.add_argument('--cache-dir', default=None, help="read and fill the patch cache here")
    _preprocess_flags(p, patch_size=False)
    _common(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('gradcheck', help="finite-difference check of the network gradients")
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--corrupt-gradient', action='store_true', help=argparse.SUPPRESS)
    _common(p)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser('synth', help="write a synthetic dataset")
    p.add_argument('--out', required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--points', type=int, default=2048)
    p.add_argument('--kind', choices=('ladder', 'blobs'), default='ladder')
    p.add_argument('--count', type=int, default=8, help="number of blob clouds")
    _common(p)
    p.set_defaults(handler=cmd_synth)
    return parser


def run_command(args: argparse.Namespace) -> int:
    """Dispatch and map exceptions onto exit codes."""
    try:
        return args.handler(args)
    except (UndefinedCorrelationError, FloatingPointError) as e:
        logger.error("✗ %s", e)
        return EXIT_CHECK_FAILED
    except (ValueError, OSError) as e:
        logger.error("✗ %s", e)
        return EXIT_INPUT_ERROR
