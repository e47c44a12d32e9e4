"""
Report Generator Module for plugnet

Writes scenario artifacts (trace, attack report, final actor states and a
text summary), seed-sweep batch summaries and analysis exports.
"""

import json
import logging
import os
from typing import Dict, List, Optional

import pandas as pd

from .analysis import EntropyReport
from .config import ScenarioConfig
from .scenarios import ScenarioResult

logger = logging.getLogger(__name__)

REPORT_VERSION = "0.1.0"
TRACE_FILE = "trace.jsonl"
REPORT_FILE = "report.json"
STATES_FILE = "final_states.json"
SUMMARY_FILE = "summary.txt"
BATCH_FILE = "batch_summary.csv"


def _write_json(path: str, data) -> str:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=str)
        f.write('\n')
    return path


class ReportGenerator:
    """
    Generate scenario and analysis artifacts.

    Nothing written here depends on wall-clock time, so equal
    (scenario, seed, config) inputs give byte-identical files.
    """

    def __init__(self, output_dir: str = "output"):
        self.output_dir = output_dir
        self.ensure_output_directory()

    def ensure_output_directory(self):
        os.makedirs(self.output_dir, exist_ok=True)

    def generate_scenario_report(self, result: ScenarioResult, config: ScenarioConfig) -> Dict:
        """
        Write all artifacts of one scenario run.

        Args:
            result (ScenarioResult): Finished scenario
            config (ScenarioConfig): Configuration it ran with

        Returns:
            Dict: Paths of the generated files and the key findings
        """
        logger.info(f"Generating report for {result.scenario} (seed {result.seed}) in {self.output_dir}")
        files = {}

        # 1. Trace
        files['trace'] = result.world.sim.write_trace(os.path.join(self.output_dir, TRACE_FILE))

        # 2. Attack report
        files['report'] = _write_json(os.path.join(self.output_dir, REPORT_FILE),
                                      self._generate_json_report(result, config))

        # 3. Final actor states
        files['final_states'] = _write_json(os.path.join(self.output_dir, STATES_FILE),
                                            result.world.final_states())

        # 4. Text summary
        summary_path = os.path.join(self.output_dir, SUMMARY_FILE)
        with open(summary_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(self._generate_text_summary(result, config))
        files['summary'] = summary_path

        logger.info(f"Report generation completed. Files: {list(files.keys())}")
        return {
            'scenario': result.scenario,
            'seed': result.seed,
            'files_generated': files,
            'key_findings': self._extract_key_findings(result),
        }

    def _generate_json_report(self, result: ScenarioResult, config: ScenarioConfig) -> Dict:
        report = result.to_report()
        report['report_info'] = {'plugnet_version': REPORT_VERSION, 'trace_records': len(result.world.sim.trace)}
        report['config'] = config.to_dict()
        report['key_findings'] = self._extract_key_findings(result)
        return report

    def _generate_text_summary(self, result: ScenarioResult, config: ScenarioConfig) -> str:
        outcome = result.outcome.kind.value if result.outcome else "n/a"
        lines = [
            "=" * 72,
            "plugnet scenario report",
            f"Scenario: {result.scenario}",
            f"Seed: {result.seed}",
            f"Server patched: {'yes' if result.patched else 'no'}",
            "=" * 72,
            "",
            "OUTCOME",
            "-" * 40,
            f"Outcome: {outcome}",
        ]
        if result.outcome is not None:
            lines.append(f"Detail: {result.outcome.detail}")
            lines.append(f"Evidence records: {', '.join(str(s) for s in result.outcome.evidence) or 'none'}")
        lines.extend([
            f"Trace records: {len(result.world.sim.trace)}",
            "",
            "CHECKS",
            "-" * 40,
        ])
        for check in result.checks:
            mark = "PASS" if check.passed else "FAIL"
            lines.append(f"  [{mark}] {check.name}" + (f" ({check.detail})" if check.detail else ""))
        lines.extend(["", "KEY FINDINGS", "-" * 40])
        lines.extend(f"  - {finding}" for finding in self._extract_key_findings(result))
        lines.extend([
            "",
            f"Result: {'all postconditions verified' if result.passed else 'postconditions FAILED'}",
            "=" * 72,
        ])
        return "\n".join(lines) + "\n"

    def _extract_key_findings(self, result: ScenarioResult) -> List[str]:
        findings = []
        world = result.world
        if result.outcome is not None:
            kind = result.outcome.kind.value
            if kind == "AttackerControls":
                findings.append("Attacker obtained the original plug key and switched the victim plug")
            elif kind == "VictimDoS":
                findings.append("Victim plug lost its cloud connection to the attacker")
            else:
                findings.append("Attack did not succeed")
        holder = world.turn.holder_of(world.plug.serial)
        if holder is not None and holder != world.plug.node_id:
            findings.append(f"TURN relay for {world.plug.serial} is held by {holder}")
        if world.plug.integrity_failures:
            findings.append(f"Victim plug discarded {world.plug.integrity_failures} relayed command(s) "
                            f"with bad MESSAGE-INTEGRITY")
        record = world.https.state.bindings.get(world.plug.serial)
        if record is not None and len(record.phone_keys) > 1:
            findings.append(f"{len(record.phone_keys)} phones share plug {world.plug.serial}")
        if result.failed_checks:
            findings.append(f"{len(result.failed_checks)} postcondition(s) failed")
        return findings

    def generate_batch_summary(self, batch_results: List[Dict], file_name: str = BATCH_FILE) -> str:
        """Write one CSV row per scenario run of a sweep."""
        logger.info(f"Generating batch summary for {len(batch_results)} runs")
        summary_file = os.path.join(self.output_dir, file_name)
        rows = []
        for result in batch_results:
            rows.append({
                'scenario': result.get('scenario', 'unknown'),
                'seed': result.get('seed'),
                'processing_status': result.get('status', 'unknown'),
                'patched': result.get('patched'),
                'outcome': result.get('outcome') or '',
                'checks_passed': result.get('checks_passed', 0),
                'checks_total': result.get('checks_total', 0),
                'postconditions_ok': result.get('passed', False),
                'trace_records': result.get('trace_records', 0),
                'error': result.get('error', ''),
            })
        pd.DataFrame(rows).to_csv(summary_file, index=False)
        logger.info(f"Batch summary saved to {summary_file}")
        return summary_file

    @staticmethod
    def export_entropy_csv(report: EntropyReport, path: str) -> str:
        report.to_dataframe().to_csv(path, index=False)
        logger.info(f"Entropy table saved to {path}")
        return path

    @staticmethod
    def export_survey_csv(table: pd.DataFrame, path: str, files: Optional[pd.DataFrame] = None) -> str:
        table.to_csv(path)
        if files is not None:
            root, ext = os.path.splitext(path)
            files.to_csv(f"{root}_files{ext or '.csv'}", index=False)
        logger.info(f"Firmware survey saved to {path}")
        return path
