"""
FA-Mamba restoration toolkit command line.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from config.run_config import RunConfig
from config.settings import settings
from models.frequency import SubBandKind
from models.restoration import DegradeKind, DegradeSpec, EvaluationReport, LossWeights, ModelConfig
from services.benchmark import bench_scan
from services.checkpoint import load_checkpoint, save_checkpoint
from services.datasynth import load_pairs, make_dataset, read_manifest, write_dataset
from services.diagnostics import model_gradcheck
from services.loss import format_db
from services.network import build, flop_estimate, param_count
from services.numerics import Tensor
from services.ssm import set_scan_threads
from services.trainer import evaluate, train, write_loss_history
from services.wavelet import dwt_multi, iwt_multi
from utils.errors import AcceptanceError, ConfigError, FAMambaError
from utils.helpers import FileUtils, ImageIO, ValidationUtils

logger = logging.getLogger(__name__)

DWT_RECONSTRUCTION_LIMIT = 1e-4
SCAN_SLOPE_RANGE = (0.8, 1.3)
ATTENTION_SLOPE_RANGE = (1.7, 2.3)


class FAMambaCLI:
    """Runs one subcommand per call; failures surface as FAMambaError subclasses."""

    def __init__(self, threads: Optional[int] = None, seed: Optional[int] = None, out=None):
        self.threads = threads
        self.seed = seed
        self.out = out or sys.stdout

    def emit(self, line: str) -> None:
        print(line, file=self.out)

    def _run_config(self, path: Optional[str], overrides: Sequence[str] = ()) -> RunConfig:
        config = RunConfig.from_file(path)
        if self.seed is not None:
            config.seed = self.seed
        if self.threads is not None:
            config.threads = self.threads
        config.apply_overrides(overrides)
        in_effect = set_scan_threads(config.threads)
        logger.info(f"Effective configuration ({in_effect} scan threads):\n{config.to_text()}")
        return config

    def _report(self, report: EvaluationReport) -> None:
        for row in report.table.itertuples(index=False):
            self.emit(f"pair={row.pair} psnr={format_db(row.psnr)} ssim={row.ssim:.4f} "
                      f"input_psnr={format_db(row.input_psnr)} input_ssim={row.input_ssim:.4f}")
        self.emit(f"mean_psnr={format_db(report.mean_psnr)} mean_ssim={report.mean_ssim:.4f} "
                  f"mean_input_psnr={format_db(report.mean_input_psnr)} "
                  f"mean_input_ssim={report.mean_input_ssim:.4f} gain_db={format_db(report.gain_db)}")

    # commands

    def dwt(self, in_path: str, out_dir: str, levels: int = 1) -> float:
        """Write every sub-band of every level as a PNG; returns the reconstruction error."""
        if levels < 1:
            raise ConfigError(f"--levels must be at least 1, got {levels}")
        if self.threads is not None:
            set_scan_threads(self.threads)
        image = ImageIO.load_png(in_path, dtype=np.float64)
        ValidationUtils.check_spatial(image.shape, 2 ** levels, what=in_path)

        pyramid = dwt_multi(Tensor(image), levels)
        for bands in pyramid:
            for kind, band in bands.as_dict().items():
                view = ImageIO.band_to_display(band.data, kind is not SubBandKind.LL, gain=2.0 ** bands.level)
                ImageIO.save_png(view, os.path.join(out_dir, f"{kind.value}_L{bands.level}.png"))

        error = float(np.max(np.abs(iwt_multi(pyramid).data - image)))
        self.emit(f"levels={levels} band_files={4 * levels} reconstruction_error={error:.3e}")
        if error > DWT_RECONSTRUCTION_LIMIT:
            raise AcceptanceError(f"reconstruction error {error:.3e} exceeds {DWT_RECONSTRUCTION_LIMIT:g}")
        return error

    def synth(self, n: int, h: int, w: int, spec: DegradeSpec, out_dir: str) -> str:
        seed = self.seed if self.seed is not None else settings.SEED
        manifest = write_dataset(n, h, w, spec.validate(), seed, out_dir)
        self.emit(f"pairs={n} size={h}x{w} kind={spec.kind.value} manifest={manifest}")
        return manifest

    def train(self, config_path: Optional[str], out_checkpoint: str, history_path: Optional[str] = None,
              overrides: Sequence[str] = ()) -> EvaluationReport:
        """Train on a manifest (or a synthesized set) and evaluate on the held-out tail."""
        config = self._run_config(config_path, overrides)
        for line in config.to_text().splitlines():
            self.emit(line)
        model_config = config.model_config()
        train_config = config.train_config()

        if config.manifest:
            dataset = load_pairs(read_manifest(config.manifest), dtype=model_config.dtype)
        else:
            dataset = make_dataset(config.pairs, config.height, config.width, config.degrade_spec(),
                                   config.seed, dtype=model_config.dtype)
        if not 0 <= config.holdout < len(dataset):
            raise ConfigError(f"holdout must leave training pairs: holdout={config.holdout}, pairs={len(dataset)}")
        split = len(dataset) - config.holdout
        training, held_out = dataset[:split], dataset[split:]
        for clean, _ in dataset:
            ValidationUtils.check_spatial(clean.shape, model_config.required_multiple, what="training image")

        model = build(model_config)
        model, history = train(model, training, train_config, LossWeights(model_config.lambda_perceptual))
        save_checkpoint(model, out_checkpoint, step=model.trained_steps)
        if history_path:
            write_loss_history(history, history_path)
        self.emit(f"steps={len(history)} final_loss={history[-1][1]:.6f} checkpoint={out_checkpoint}")

        report = evaluate(model, held_out or training)
        self._report(report)
        return report

    def restore(self, checkpoint: str, in_path: str, out_path: str) -> None:
        if self.threads is not None:
            set_scan_threads(self.threads)
        model = load_checkpoint(checkpoint)
        image = ImageIO.load_png(in_path, dtype=model.config.dtype)
        ValidationUtils.check_spatial(image.shape, model.config.required_multiple, what=in_path)
        restored = model.restore(Tensor(image))
        ImageIO.save_png(restored.data, out_path)
        self.emit(f"restored {image.shape[3]}x{image.shape[2]} {in_path} -> {out_path}")

    def eval(self, checkpoint: str, manifest: str, min_gain: Optional[float] = None) -> EvaluationReport:
        if self.threads is not None:
            set_scan_threads(self.threads)
        model = load_checkpoint(checkpoint)
        report = evaluate(model, load_pairs(read_manifest(manifest), dtype=model.config.dtype))
        self._report(report)
        if min_gain is not None and not report.gain_db >= min_gain:
            raise AcceptanceError(f"mean gain {report.gain_db:.3f} dB is below {min_gain:g} dB")
        return report

    def bench_scan(self, lengths: List[int], d_inner: int, d_state: int, repeats: int,
                   attention_max_length: int, check: bool = False):
        if self.threads is not None:
            set_scan_threads(self.threads)
        seed = self.seed if self.seed is not None else 0
        result = bench_scan(lengths, d_inner=d_inner, d_state=d_state, repeats=repeats,
                            attention_max_length=attention_max_length or None, seed=seed)
        self.emit(result.table.to_string(index=False, float_format=lambda v: f"{v:.6f}"))
        self.emit(f"scan_slope={result.scan_slope:.3f} attention_slope={result.attention_slope:.3f}")
        if check:
            low, high = SCAN_SLOPE_RANGE
            if not low <= result.scan_slope <= high:
                raise AcceptanceError(f"scan slope {result.scan_slope:.3f} outside [{low}, {high}]")
            low, high = ATTENTION_SLOPE_RANGE
            if not low <= result.attention_slope <= high:
                raise AcceptanceError(f"attention slope {result.attention_slope:.3f} outside [{low}, {high}]")
        return result

    def gradcheck(self, config_path: Optional[str], samples: int, tolerance: float,
                  overrides: Sequence[str] = ()):
        config = self._run_config(config_path, overrides)
        result = model_gradcheck(config.model_config(), samples=samples, seed=config.seed,
                                 h=settings.GRADCHECK_STEP)
        self.emit(f"checked={result.checked} max_relative_error={result.max_relative_error:.3e} "
                  f"worst={result.worst}")
        if not result.passed(tolerance):
            raise AcceptanceError(f"max relative error {result.max_relative_error:.3e} exceeds {tolerance:g}")
        return result

    def info(self, config_path: Optional[str], published: bool, h: int, w: int,
             overrides: Sequence[str] = ()) -> int:
        if published:
            # model keys only, over the full-size defaults
            model_config = ModelConfig.from_text("\n".join(overrides))
        else:
            model_config = self._run_config(config_path, overrides).model_config()
        model = build(model_config)
        count = param_count(model)
        self.emit(f"depths={','.join(map(str, model_config.depths))} channels={model_config.channels} "
                  f"global_branch={model_config.global_branch.value} "
                  f"params={count} ({count / 1e6:.2f}M) flops@{h}x{w}={flop_estimate(model, h, w) / 1e9:.2f}G")
        return count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="famamba", description="FA-Mamba image restoration toolkit")
    parser.add_argument('--log-level', type=str, default=settings.LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--threads', type=int, default=None, help='Scan kernel threads (1 = fully deterministic)')
    parser.add_argument('--seed', type=int, default=None, help='Seed overriding config and defaults')
    commands = parser.add_subparsers(dest='command', required=True)

    dwt = commands.add_parser('dwt', help='Write wavelet sub-bands of an image')
    dwt.add_argument('--in', dest='in_path', required=True)
    dwt.add_argument('--out-dir', required=True)
    dwt.add_argument('--levels', type=int, default=1)

    synth = commands.add_parser('synth', help='Write a synthetic degraded dataset with a manifest')
    synth.add_argument('--n', type=int, required=True)
    synth.add_argument('--h', type=int, default=32)
    synth.add_argument('--w', type=int, default=32)
    synth.add_argument('--kind', type=DegradeKind, choices=list(DegradeKind), default=DegradeKind.RAIN)
    synth.add_argument('--density', type=float, default=0.3)
    synth.add_argument('--angle', type=float, default=15.0)
    synth.add_argument('--particle-radius', type=float, default=1.5)
    synth.add_argument('--intensity', type=float, default=0.8)
    synth.add_argument('--out-dir', default=settings.DATA_DIR)

    train = commands.add_parser('train', help='Train a model and write a checkpoint')
    train.add_argument('--config', default=None)
    train.add_argument('--out-checkpoint', default=os.path.join(settings.CHECKPOINT_DIR, 'model.famamba'))
    train.add_argument('--history', default=None, help='step,loss CSV output')
    train.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE')

    restore = commands.add_parser('restore', help='Restore one image with a checkpoint')
    restore.add_argument('--checkpoint', required=True)
    restore.add_argument('--in', dest='in_path', required=True)
    restore.add_argument('--out', dest='out_path', required=True)

    evaluate_cmd = commands.add_parser('eval', help='PSNR/SSIM of a checkpoint over a manifest')
    evaluate_cmd.add_argument('--checkpoint', required=True)
    evaluate_cmd.add_argument('--manifest', required=True)
    evaluate_cmd.add_argument('--min-gain', type=float, default=None, help='Fail below this mean gain in dB')

    bench = commands.add_parser('bench-scan', help='Time the selective scan against quadratic attention')
    bench.add_argument('--lens', type=ValidationUtils.parse_int_list, default=[1024, 2048, 4096, 8192])
    bench.add_argument('--dims', type=int, default=16, help='Inner channel count')
    bench.add_argument('--d-state', type=int, default=settings.D_STATE)
    bench.add_argument('--repeats', type=int, default=9)
    bench.add_argument('--attention-max-len', type=int, default=16384, help='0 times attention at every length')
    bench.add_argument('--check', action='store_true', help='Fail when a fitted slope leaves its bracket')

    grad = commands.add_parser('gradcheck', help='Finite differences against backward on a toy model')
    grad.add_argument('--config', default=None)
    grad.add_argument('--samples', type=int, default=100)
    grad.add_argument('--tolerance', type=float, default=settings.GRADCHECK_TOLERANCE)
    grad.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE')

    info = commands.add_parser('info', help='Parameter count and FLOP estimate')
    info.add_argument('--config', default=None)
    info.add_argument('--published', action='store_true',
                      help='Full-size default configuration; --set applies model keys on top')
    info.add_argument('--height', type=int, default=256)
    info.add_argument('--width', type=int, default=256)
    info.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE')
    return parser


def dispatch(cli: FAMambaCLI, args: argparse.Namespace) -> None:
    if args.command == 'dwt':
        cli.dwt(args.in_path, args.out_dir, args.levels)
    elif args.command == 'synth':
        spec = DegradeSpec(kind=args.kind, density=args.density, angle=args.angle,
                           particle_radius=args.particle_radius, intensity=args.intensity)
        cli.synth(args.n, args.h, args.w, spec, args.out_dir)
    elif args.command == 'train':
        cli.train(args.config, args.out_checkpoint, args.history, args.overrides)
    elif args.command == 'restore':
        cli.restore(args.checkpoint, args.in_path, args.out_path)
    elif args.command == 'eval':
        cli.eval(args.checkpoint, args.manifest, args.min_gain)
    elif args.command == 'bench-scan':
        cli.bench_scan(args.lens, args.dims, args.d_state, args.repeats, args.attention_max_len, args.check)
    elif args.command == 'gradcheck':
        cli.gradcheck(args.config, args.samples, args.tolerance, args.overrides)
    elif args.command == 'info':
        cli.info(args.config, args.published, args.height, args.width, args.overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except FAMambaError as e:
        print(f"famamba: {e}", file=sys.stderr)
        return e.exit_code

    FileUtils.setup_logging(args.log_level, settings.LOG_DIR)
    validation_errors = settings.validate()
    if validation_errors:
        logger.error(f"Configuration errors: {', '.join(validation_errors)}")
        print(f"famamba: invalid environment: {'; '.join(validation_errors)}", file=sys.stderr)
        return ConfigError.exit_code

    cli = FAMambaCLI(threads=args.threads, seed=args.seed)
    try:
        dispatch(cli, args)
    except FAMambaError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"famamba {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
