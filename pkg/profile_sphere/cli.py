# cli.py

"""
Command-line front end: fit | outliers | order | generate | demo | report | help.

Human-readable summaries go to stdout, diagnostics (logging) to stderr.
"""

import argparse
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from profile_sphere.analytics import (
    format_acceptance,
    format_cev_table,
    format_metrics_table,
    format_moment_table,
)
from profile_sphere.config import PipelineConfig
from profile_sphere.errors import ParameterError, ProfileSphereError
from profile_sphere.generative import DEFAULT_PER_POINT
from profile_sphere.model import FittedModel
from profile_sphere.pipeline import PipelineManager

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.json'


def float_list(text: str) -> List[float]:
    """Parse '0.2,0.4,0.6' into a list of floats (argparse type)."""
    try:
        values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    """DEBUG with --verbose, WARNING with --quiet, INFO otherwise; always on stderr."""
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format='%(levelname)s %(name)s: %(message)s',
        force=True,
    )


class CLIInterface:
    """
    Command dispatcher for the profile-sphere toolkit.

    Every command takes the parsed argparse namespace and returns the exit code.
    """

    def __init__(self, manager: PipelineManager, overrides: Optional[Dict[str, Any]] = None,
                 parser: Optional['CLIArgumentParser'] = None):
        """
        Initialize the CLI interface.

        Args:
            manager: PipelineManager doing the work
            overrides: Config values given on the command line; they win over stored model config
            parser: Argument parser used by the help command
        """
        self.manager = manager
        self.overrides = dict(overrides or {})
        self.parser = parser
        self.commands = self._register_commands()

    def _register_commands(self) -> Dict[str, Callable[[argparse.Namespace], int]]:
        """Register all available commands."""
        return {
            'fit': self.cmd_fit,
            'outliers': self.cmd_outliers,
            'order': self.cmd_order,
            'generate': self.cmd_generate,
            'demo': self.cmd_demo,
            'report': self.cmd_report,
            'help': self.cmd_help,
        }

    def run(self, args: argparse.Namespace) -> int:
        command = args.command or 'help'
        if command not in self.commands:
            print(f"❌ Unknown command: {command}", file=sys.stderr)
            return 2
        return self.commands[command](args)

    # ==================== HELPERS ====================

    def _model_path(self, args: argparse.Namespace) -> str:
        model = getattr(args, 'model', None)
        return model if model else str(self.manager.writer.output_dir / MODEL_FILE)

    def _load_model(self, args: argparse.Namespace) -> FittedModel:
        """Load the model and adopt its config (command-line values still win)."""
        model = self.manager.load_model(self._model_path(args))
        self.manager.config = model.config.with_overrides(**self.overrides)
        return model

    def _print_written(self) -> None:
        for path in dict.fromkeys(self.manager.writer.written):
            print(f"   📄 {path}")

    # ==================== COMMAND IMPLEMENTATIONS ====================

    def cmd_fit(self, args: argparse.Namespace) -> int:
        """Fit the embedding, sphere and marginals; write model.json."""
        profiles = self.manager.load_profiles(args.input)
        if profiles.quarantine:
            print(f"⚠️  {len(profiles.quarantine)} meter(s) quarantined (see model summary)")
        model = self.manager.fit(profiles)
        model_path = self._model_path(args)
        self.manager.save_model(model, model_path)
        self.manager.write_fit_artifacts(model)

        print(f"✅ Fitted model on {profiles.shape[0]} profiles x {profiles.steps} steps -> {model_path}")
        print("\n📊 Cumulative explained variance:")
        print(format_cev_table(model.summary['cev']))
        print("\n📊 Spherical coordinate moments (angles in degrees):")
        print(format_moment_table(model.summary['moments']))
        self._print_written()
        return 0

    def cmd_outliers(self, args: argparse.Namespace) -> int:
        """Flag meters in the rejection regions of the fitted marginals."""
        model = self._load_model(args)
        profiles = self.manager.load_profiles(args.input)
        result = self.manager.outliers(model, profiles, level=args.level)
        self.manager.write_outlier_artifacts(model, result)

        report = result.report
        print(f"✅ Scored {len(report.meter_ids)} meters at level {report.level:g}")
        print("\n📊 Flag rates:")
        for variable, rate in report.flag_rates().items():
            print(f"  {variable:<10} {100.0 * rate:6.2f}%")
        flagged = report.flagged_ids()
        if flagged:
            print(f"\n⚠️  {len(flagged)} meter(s) flagged: {', '.join(flagged[:10])}"
                  f"{' ...' if len(flagged) > 10 else ''}")
        self._print_written()
        return 0

    def cmd_order(self, args: argparse.Namespace) -> int:
        """Fit the principal curve, order and bin the meters; store the curve in the model."""
        model = self._load_model(args)
        profiles = self.manager.load_profiles(args.input)
        result = self.manager.order(model, profiles, bins=args.bins,
                                    exclude_outliers=args.exclude_outliers, level=args.level)
        self.manager.write_order_artifacts(result)
        self.manager.save_model(result.model, self._model_path(args))

        curve = result.model.curve
        print(f"✅ Ordered {len(result.ordered.meter_ids)} meters along the principal curve "
              f"({curve.iterations} iterations, explained {100.0 * curve.explained:.1f}%)")
        if not curve.converged:
            print("⚠️  Curve fit did not converge; the best iterate was kept")
        if curve.weak_fit:
            print("⚠️  The curve explains little of the spread; ordering may be unreliable")
        print("\n📊 Cluster sizes:")
        for name, count in result.bins.counts().items():
            print(f"  {name}: {count}")
        if result.contrast is not None:
            print(f"\n📊 Ordered similarity: near {result.contrast.near_mean:.4f}, far {result.contrast.far_mean:.4f}")
        self._print_written()
        return 0

    def cmd_generate(self, args: argparse.Namespace) -> int:
        """Sample synthetic profiles along the curve (VMF, optional MVG baseline)."""
        model = self._load_model(args)
        if not model.has_curve:
            raise ParameterError("Model has no principal curve; run 'order' first")
        real = self.manager.load_profiles(args.input) if args.input else None
        kwargs: Dict[str, Any] = {'per_point': args.per_point, 'kappa': args.kappa,
                                  'seed': args.seed, 'baseline_mvg': args.baseline == 'mvg', 'real': real}
        if args.s_grid is not None:
            kwargs['s_values'] = args.s_grid
        result = self.manager.generate(model, **kwargs)
        self.manager.write_generation_artifacts(result)

        print(f"✅ Generated {len(result.batch)} VMF profiles"
              + (f" and {len(result.mvg_labels)} MVG profiles" if result.mvg_profiles is not None else ""))
        if result.metrics is not None:
            print("\n📊 Per-cluster comparison with the real corpus:")
            print(format_metrics_table(result.metrics))
        else:
            print("⚠️  No real corpus given (--input); metrics.json not written")
        self._print_written()
        return 0

    def cmd_demo(self, args: argparse.Namespace) -> int:
        """Run the full pipeline on the oracle corpus and print the acceptance summary."""
        summary = self.manager.run_demo(seed=args.seed)
        print("📊 Acceptance summary:")
        print(format_acceptance(summary))
        self._print_written()
        if summary['passed']:
            print("\n✅ All checks passed")
            return 0
        print("\n❌ Some checks failed", file=sys.stderr)
        return 1

    def cmd_report(self, args: argparse.Namespace) -> int:
        """Print the tables stored in a model file."""
        path = self._model_path(args)
        model = self.manager.load_model(path)
        info = self.manager.get_storage_info(path)
        fingerprint = model.fingerprint
        print(f"📊 Model {info['file_path']} ({info['file_size_human']})")
        print(f"   Corpus: {fingerprint.get('rows')} x {fingerprint.get('columns')}, "
              f"{model.resolution_minutes}-minute steps")
        print(f"   Sphere radius: {model.sphere.sphere.radius:.6f}")
        print(f"   Principal curve: {'yes' if model.has_curve else 'no'}")
        print("\n📊 Cumulative explained variance:")
        print(format_cev_table(model.summary.get('cev', [])))
        if model.summary.get('moments'):
            print("\n📊 Spherical coordinate moments (angles in degrees):")
            print(format_moment_table(model.summary['moments']))
        return 0

    def cmd_help(self, args: argparse.Namespace) -> int:
        """Print usage for all commands or one command."""
        parser = self.parser or CLIArgumentParser()
        topic = getattr(args, 'topic', None)
        parser.print_help(topic)
        return 0


class CLIArgumentParser:
    """argparse front end with one subparser per command."""

    def __init__(self):
        self.parser = argparse.ArgumentParser(
            prog='profile-sphere',
            description="Load-profile sphere toolkit: embedding, outliers, ordering and synthesis",
        )
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument('--config', help='JSON file with pipeline settings')
        common.add_argument('--out', default='.', help='Output directory for artifacts (default: .)')
        common.add_argument('--seed', type=int, help='Seed for every random stream')
        verbosity = common.add_mutually_exclusive_group()
        verbosity.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
        verbosity.add_argument('-q', '--quiet', action='store_true', help='Warnings and errors only')

        subparsers = self.parser.add_subparsers(dest='command', metavar='command')
        self.commands: Dict[str, argparse.ArgumentParser] = {}

        fit = self._add(subparsers, common, 'fit', 'Fit embedding, sphere and marginal distributions')
        fit.add_argument('input', help='Profile CSV')
        fit.add_argument('--model', help='Model file to write (default: <out>/model.json)')

        outliers = self._add(subparsers, common, 'outliers', 'Flag meters outside the confidence regions')
        outliers.add_argument('model', help='Model file')
        outliers.add_argument('input', help='Profile CSV')
        outliers.add_argument('--level', type=float, help='Confidence level (default: 0.95)')

        order = self._add(subparsers, common, 'order', 'Order meters along the principal curve')
        order.add_argument('model', help='Model file (updated with the curve)')
        order.add_argument('input', help='Profile CSV')
        order.add_argument('--bins', type=float_list, help='Comma-separated s cut-points (default: 0.2,0.4,0.6)')
        order.add_argument('--exclude-outliers', action='store_true', help='Leave flagged meters out of the curve fit')
        order.add_argument('--level', type=float, help='Confidence level for --exclude-outliers')

        generate = self._add(subparsers, common, 'generate', 'Sample synthetic profiles along the curve')
        generate.add_argument('model', help='Model file with a fitted curve')
        generate.add_argument('--input', help='Real profile CSV for metrics and the MVG baseline')
        generate.add_argument('--s-grid', type=float_list, help='Comma-separated curve positions (default: k/25)')
        generate.add_argument('--per-point', type=int, default=DEFAULT_PER_POINT,
                              help=f'Profiles per position (default: {DEFAULT_PER_POINT})')
        generate.add_argument('--kappa', type=float, help='VMF concentration (default: polar-angle kappa)')
        generate.add_argument('--baseline', choices=['mvg'], help='Also sample the per-cluster Gaussian baseline')

        self._add(subparsers, common, 'demo', 'Run the whole pipeline on a synthetic ground-truth corpus')

        report = self._add(subparsers, common, 'report', 'Print the tables stored in a model file')
        report.add_argument('model', help='Model file')

        help_parser = self._add(subparsers, common, 'help', 'Show help for a command')
        help_parser.add_argument('topic', nargs='?', help='Command name')

    def _add(self, subparsers: Any, common: argparse.ArgumentParser, name: str, text: str) -> argparse.ArgumentParser:
        parser = subparsers.add_parser(name, parents=[common], help=text, description=text)
        self.commands[name] = parser
        return parser

    def parse_args(self, args: Optional[Sequence[str]] = None) -> argparse.Namespace:
        return self.parser.parse_args(args)

    def print_help(self, topic: Optional[str] = None) -> None:
        parser = self.commands.get(topic, self.parser) if topic else self.parser
        parser.print_help()


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file (if any) with command-line overrides applied."""
    base = PipelineConfig.from_json(args.config) if getattr(args, 'config', None) else PipelineConfig()
    return base.with_overrides(**config_overrides(args))


def config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {
        'level': getattr(args, 'level', None),
        'bins': getattr(args, 'bins', None),
        'seed': getattr(args, 'seed', None),
    }
    return {k: v for k, v in overrides.items() if v is not None}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the CLI application."""
    parser = CLIArgumentParser()
    args = parser.parse_args(argv)
    configure_logging(getattr(args, 'verbose', False), getattr(args, 'quiet', False))

    try:
        config = build_config(args)
        manager = PipelineManager(config, output_dir=getattr(args, 'out', '.'))
        cli = CLIInterface(manager, overrides=config_overrides(args), parser=parser)
        return cli.run(args)
    except ProfileSphereError as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("\n❌ Interrupted", file=sys.stderr)
        return 130
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"❌ Fatal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
