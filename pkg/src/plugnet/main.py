"""
Main plugnet Class

Scenario orchestration and the ``plugnet`` command line.

Exit codes: 0 when every scenario postcondition holds (or an analysis
command succeeded), 1 when a scenario ran but a postcondition failed,
2 for usage, configuration, I/O and parse errors.
"""

import argparse
import json
import logging
import os
import sys
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np

from .analysis import FirmwareScanner, classify_trace_fields, plot_entropy_report
from .config import SCENARIOS, ScenarioConfig, build_config
from .exceptions import ConfigError, ParseError, PlugNetError
from .report_generator import ReportGenerator
from .scenarios import run_scenario
from .trace_loader import TraceLoader, filter_records, parse_filter, render_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


class PlugNet:
    """
    Runs scenarios and writes their artifacts.

    Args:
        output_dir (str): Directory for scenario artifacts
        verbose (bool): Keep INFO logging; False lowers the root logger to WARNING
    """

    def __init__(self, output_dir: str = "output", verbose: bool = True):
        self.output_dir = output_dir
        self.verbose = verbose
        if not verbose:
            logging.getLogger().setLevel(logging.WARNING)
        logger.info(f"plugnet initialized - Output: {output_dir}")

    def run_scenario(self, config: ScenarioConfig, output_dir: Optional[str] = None) -> Dict:
        """
        Run one scenario and write trace.jsonl, report.json, final_states.json
        and summary.txt.

        Args:
            config (ScenarioConfig): Validated configuration
            output_dir (str): Overrides the configured output directory

        Returns:
            Dict: Run summary with ``status`` 'success' or 'error'
        """
        output_dir = output_dir or config.output_dir
        logger.info(f"Starting scenario {config.scenario} with seed {config.seed}")
        start_time = datetime.now()
        try:
            logger.info("Step 1: Running scenario...")
            result = run_scenario(config)

            logger.info("Step 2: Generating reports...")
            report_results = ReportGenerator(output_dir).generate_scenario_report(result, config)

            processing_time = datetime.now() - start_time
            summary = {
                'scenario': config.scenario,
                'seed': config.seed,
                'patched': result.patched,
                'status': 'success',
                'outcome': result.outcome.kind.value if result.outcome else None,
                'passed': result.passed,
                'checks_passed': len(result.checks) - len(result.failed_checks),
                'checks_total': len(result.checks),
                'failed_checks': [c.name for c in result.failed_checks],
                'trace_records': len(result.world.sim.trace),
                'output_dir': output_dir,
                'processing_time_seconds': processing_time.total_seconds(),
                'report_results': report_results,
            }
            logger.info(f"Scenario completed in {processing_time.total_seconds():.2f} seconds")
            return summary

        except (PlugNetError, OSError) as e:
            logger.error(f"Scenario {config.scenario} failed: {type(e).__name__}: {e}")
            return self._error_summary(config, output_dir, start_time, e)
        except Exception as e:
            logger.error(f"Scenario {config.scenario} (seed {config.seed}) crashed: {type(e).__name__}: {e}",
                         exc_info=True)
            return self._error_summary(config, output_dir, start_time, e)

    @staticmethod
    def _error_summary(config: ScenarioConfig, output_dir: str, start_time: datetime, error: Exception) -> Dict:
        processing_time = datetime.now() - start_time
        return {
            'scenario': config.scenario,
            'seed': config.seed,
            'patched': config.effective_patched,
            'status': 'error',
            'error': f"{type(error).__name__}: {error}",
            'passed': False,
            'output_dir': output_dir,
            'processing_time_seconds': processing_time.total_seconds(),
        }

    def run_seed_sweep(self, base_config: ScenarioConfig, seeds: List[int]) -> List[Dict]:
        """
        Run one scenario for every seed, each into ``<output_dir>/seed-<n>``,
        then write batch_summary.csv.
        """
        if not seeds:
            logger.warning("No seeds to sweep")
            return []
        logger.info(f"Sweeping {base_config.scenario} over {len(seeds)} seeds")
        results = []
        for i, seed in enumerate(seeds, 1):
            logger.info(f"Processing seed {i}/{len(seeds)}: {seed}")
            config = ScenarioConfig(**{**vars(base_config), 'seed': seed}).validate()
            result = self.run_scenario(config, os.path.join(self.output_dir, f"seed-{seed}"))
            results.append(result)
            if result['status'] == 'success' and result['passed']:
                logger.info(f"seed {seed} verified")
            else:
                logger.warning(f"seed {seed} failed: {result.get('error') or result.get('failed_checks')}")

        summary_file = ReportGenerator(self.output_dir).generate_batch_summary(results)
        verified = len([r for r in results if r.get('passed')])
        logger.info(f"Sweep completed: {verified} verified, {len(results) - verified} failed")
        logger.info(f"Batch summary saved to: {summary_file}")
        return results

    @staticmethod
    def get_sweep_summary(results: List[Dict]) -> Dict:
        if not results:
            return {'error': 'No runs to summarize'}
        succeeded = [r for r in results if r.get('status') == 'success']
        records = [r['trace_records'] for r in succeeded]
        outcomes: Dict[str, int] = {}
        for r in succeeded:
            outcomes[r.get('outcome') or 'n/a'] = outcomes.get(r.get('outcome') or 'n/a', 0) + 1
        return {
            'total_runs': len(results),
            'verified_runs': len([r for r in results if r.get('passed')]),
            'errored_runs': len(results) - len(succeeded),
            'outcomes': outcomes,
            'trace_records': {
                'mean': float(np.mean(records)) if records else 0,
                'min': int(np.min(records)) if records else 0,
                'max': int(np.max(records)) if records else 0,
            },
        }

    def print_summary(self, results: List[Dict]) -> None:
        summary = self.get_sweep_summary(results)
        if 'error' in summary:
            print(f"Error: {summary['error']}")
            return
        print("\n" + "=" * 60)
        print("plugnet Sweep Summary")
        print("=" * 60)
        print(f"Total runs: {summary['total_runs']}")
        print(f"Postconditions verified: {summary['verified_runs']}")
        print(f"Errored runs: {summary['errored_runs']}")
        for outcome, count in sorted(summary['outcomes'].items()):
            print(f"  {outcome}: {count}")
        tr = summary['trace_records']
        print(f"Trace records: mean {tr['mean']:.1f}, range {tr['min']} - {tr['max']}")
        print("=" * 60)


# Command line

def parse_seeds(text: str) -> List[int]:
    """``"1-20"`` or ``"1,4,9"`` or a mix of both."""
    seeds = []
    for part in text.split(','):
        part = part.strip()
        if not part:
            continue
        low, sep, high = part.partition('-')
        try:
            if sep:
                first, last = int(low), int(high)
                if last < first:
                    raise ValueError(f"empty range {part}")
                seeds.extend(range(first, last + 1))
            else:
                seeds.append(int(part))
        except ValueError as e:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}: {e}") from e
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plugnet", description="Smart-plug cloud protocol emulation and analysis")
    parser.add_argument("--quiet", "-q", action="store_true", help="only log warnings and errors")
    commands = parser.add_subparsers(dest="command", required=True)

    scenario = commands.add_parser("scenario", help="run protocol scenarios")
    scenario_cmds = scenario.add_subparsers(dest="action", required=True)
    for name in ("run", "sweep"):
        sub = scenario_cmds.add_parser(name)
        sub.add_argument("--name", required=True, choices=SCENARIOS)
        if name == "run":
            sub.add_argument("--seed", type=int)
        else:
            sub.add_argument("--seeds", type=parse_seeds, required=True)
        sub.add_argument("--patched", action="store_true", default=None)
        sub.add_argument("--config")
        sub.add_argument("--output-dir")

    analyze = commands.add_parser("analyze", help="trace and firmware analysis")
    analyze_cmds = analyze.add_subparsers(dest="action", required=True)
    entropy = analyze_cmds.add_parser("entropy")
    entropy.add_argument("--trace", required=True)
    entropy.add_argument("--threshold", type=float, default=7.0,
                         help="flag a field when the normalized entropy of all its distinct values, pooled "
                              "per field name, reaches this many bits per byte (0-8, corrected for pool size "
                              "so short random fields can reach 8; default: %(default)s)")
    entropy.add_argument("--min-len", type=int, default=16,
                         help="minimum pooled bytes a field needs before it can be flagged (default: %(default)s)")
    entropy.add_argument("--plot")
    entropy.add_argument("--csv")
    for name in ("find-cert", "fs-magic"):
        analyze_cmds.add_parser(name).add_argument("--blob", required=True)
    survey = analyze_cmds.add_parser("fs-survey")
    survey.add_argument("--dir", required=True)
    survey.add_argument("--csv")

    trace = commands.add_parser("trace", help="trace files")
    trace_cmds = trace.add_subparsers(dest="action", required=True)
    inspect = trace_cmds.add_parser("inspect")
    inspect.add_argument("--trace", required=True)
    inspect.add_argument("--filter")
    return parser


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, default=str))


def _scenario_command(args) -> int:
    flags = {'scenario': args.name, 'patched': args.patched, 'output_dir': args.output_dir}
    if args.action == "run":
        flags['seed'] = args.seed
    else:
        flags['seed'] = args.seeds[0]
    config = build_config(flags, args.config)
    app = PlugNet(config.output_dir, verbose=not args.quiet)

    if args.action == "run":
        result = app.run_scenario(config)
        _print_json({k: result.get(k) for k in ('scenario', 'seed', 'patched', 'status', 'outcome', 'passed',
                                                 'failed_checks', 'error', 'output_dir') if k in result})
        return EXIT_OK if result['passed'] else EXIT_FAILED

    results = app.run_seed_sweep(config, args.seeds)
    app.print_summary(results)
    return EXIT_OK if all(r['passed'] for r in results) else EXIT_FAILED


def _read_blob(path: str) -> bytes:
    with open(path, 'rb') as f:
        return f.read()


def _analyze_command(args) -> int:
    if args.action == "entropy":
        report = classify_trace_fields(args.trace, threshold=args.threshold, min_len=args.min_len)
        if args.plot:
            plot_entropy_report(report, args.plot)
        if args.csv:
            ReportGenerator.export_entropy_csv(report, args.csv)
        _print_json(report.to_dict())
        return EXIT_OK

    scanner = FirmwareScanner()
    if args.action == "find-cert":
        findings = scanner.find_pem_certificates(_read_blob(args.blob))
        _print_json({'findings': [f.to_dict() for f in findings]})
    elif args.action == "fs-magic":
        findings = scanner.identify_filesystems(_read_blob(args.blob))
        _print_json({'findings': [f.to_dict() for f in findings]})
    else:
        if not os.path.isdir(args.dir):
            raise FileNotFoundError(f"not a directory: {args.dir}")
        survey = scanner.survey_directory(args.dir)
        if args.csv:
            ReportGenerator.export_survey_csv(survey['table'], args.csv, survey['files'])
        _print_json({
            'files': survey['files'].to_dict(orient='records'),
            'table': {vendor: {k: int(v) for k, v in row.items()}
                      for vendor, row in survey['table'].to_dict(orient='index').items()},
        })
    return EXIT_OK


def _trace_command(args) -> int:
    criteria = parse_filter(args.filter)
    loader = TraceLoader()
    records = filter_records(loader.load_file(args.trace), criteria)
    for line in render_trace(records):
        print(line)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    handlers = {'scenario': _scenario_command, 'analyze': _analyze_command, 'trace': _trace_command}
    try:
        return handlers[args.command](args)
    except ParseError as e:
        print(f"plugnet: parse error: {e}", file=sys.stderr)
    except (ConfigError, ValueError) as e:
        print(f"plugnet: {e}", file=sys.stderr)
    except OSError as e:
        print(f"plugnet: {e}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
