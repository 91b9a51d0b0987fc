"""
Export module for HiveSim.
Handles writing synthesis and experiment results in various formats.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from hivesim.utils import sanitize

logger = logging.getLogger(__name__)

PLANS_SCHEMA = 'hivesim.plans/1'

EVAL_FIELDS = ['plan_id', 'selected', 'feasible', 'p50_ms', 'p99_ms', 'battery_drain_pct',
               'peak_bandwidth_mbps', 'cloud_cost_fs', 'throughput_rps', 'assignment']


class ReportExporter:
    """Export plan synthesis results and experiment summaries."""

    def __init__(self, synthesis=None, summary_rows: Optional[Sequence[Dict[str, Any]]] = None,
                 scenario_name: str = 'scenario', constraints: Sequence = ()):
        """
        Initialize exporter.

        Args:
            synthesis: SynthesisResult from plan synthesis
            summary_rows: Rows produced by an experiment run
            scenario_name: Label used in report headers
            constraints: Performance constraints of the task graph
        """
        self.synthesis = synthesis
        self.summary_rows = list(summary_rows or [])
        self.scenario_name = scenario_name
        self.constraints = list(constraints)

    def _plan_rows(self) -> List[Dict[str, Any]]:
        result = self.synthesis
        plans = {p.plan_id: p for p in result.plans}
        selected = result.selected.plan_id if result.selected is not None else None
        rows = []
        for evaluation in sorted(result.evaluations, key=lambda e: e.plan_id):
            row = evaluation.to_dict()
            row['selected'] = evaluation.plan_id == selected
            row['feasible'] = not evaluation.violations(self.constraints)
            row['assignment'] = plans[evaluation.plan_id].describe()
            rows.append(row)
        return rows

    def export_plans_json(self, output_path: str) -> bool:
        """
        Export every enumerated plan with its evaluation and the selection.

        Args:
            output_path: Path to save JSON file

        Returns:
            True if successful
        """
        try:
            result = self.synthesis
            evaluations = {e.plan_id: e.to_dict() for e in result.evaluations}
            data = {
                'schema': PLANS_SCHEMA,
                'scenario': self.scenario_name,
                'constraints': [c.describe() for c in self.constraints],
                'plans': [{**plan.to_dict(), 'evaluation': evaluations.get(plan.plan_id)}
                          for plan in result.plans],
                'selected': result.selected.to_dict() if result.selected is not None else None,
                'nearest_miss': result.nearest_miss.to_dict() if result.nearest_miss is not None else None,
                'violations': list(result.violations),
            }
            Path(output_path).parent.mkdir(parents=True, exist_ok=True)
            with open(output_path, 'w', encoding='utf-8', newline='\n') as f:
                json.dump(sanitize(data), f, indent=2, sort_keys=True)
                f.write('\n')

            logger.info(f"Plans saved to {output_path}")
            return True

        except Exception as e:
            logger.error(f"Error exporting plans: {e}")
            return False

    def export_evals_csv(self, output_path: str) -> bool:
        """
        Export the plan evaluations as a CSV table.

        Args:
            output_path: Path to save CSV file

        Returns:
            True if successful
        """
        try:
            Path(output_path).parent.mkdir(parents=True, exist_ok=True)
            with open(output_path, 'w', encoding='utf-8', newline='') as f:
                writer = csv.DictWriter(f, fieldnames=EVAL_FIELDS, lineterminator='\n')
                writer.writeheader()
                for row in self._plan_rows():
                    writer.writerow(sanitize(row))

            logger.info(f"Evaluations saved to {output_path}")
            return True

        except Exception as e:
            logger.error(f"Error exporting evaluations: {e}")
            return False

    def export_markdown(self, output_path: str) -> bool:
        """
        Export as Markdown report.

        Args:
            output_path: Path to save Markdown file

        Returns:
            True if successful
        """
        try:
            md = [f"# HiveSim Report: {self.scenario_name}\n\n"]

            if self.synthesis is not None:
                md.append("## Placement\n\n")
                md.append(f"- **Plans evaluated:** {len(self.synthesis.evaluations)}\n")
                if self.constraints:
                    md.append(f"- **Constraints:** {', '.join(c.describe() for c in self.constraints)}\n")
                if self.synthesis.selected is not None:
                    md.append(f"- **Selected:** plan {self.synthesis.selected.plan_id} "
                              f"({self.synthesis.selected.describe()})\n")
                else:
                    md.append(f"- **No feasible plan.** Nearest miss violates "
                              f"{', '.join(self.synthesis.violations)}\n")
                md.append("\n| plan | p50 ms | p99 ms | battery % | peak Mbps | cloud fs |\n")
                md.append("|---:|---:|---:|---:|---:|---:|\n")
                for row in self._plan_rows():
                    mark = ' *' if row['selected'] else ''
                    md.append(f"| {row['plan_id']}{mark} | {row['p50_ms']:.1f} | {row['p99_ms']:.1f} | "
                              f"{row['battery_drain_pct']:.3f} | {row['peak_bandwidth_mbps']:.1f} | "
                              f"{row['cloud_cost_fs']:.2f} |\n")
                md.append("\n")

            if self.summary_rows:
                md.append("## Runs\n\n")
                md.append("| point | mode | seed | p50 ms | p99 ms | battery % | peak Mbps | coverage |\n")
                md.append("|---|---|---:|---:|---:|---:|---:|---:|\n")
                for row in self.summary_rows:
                    md.append(f"| {row['point']} | {row['mode']} | {row['seed']} | {row['p50_ms']:.1f} | "
                              f"{row['p99_ms']:.1f} | {row['mean_battery_drain_pct']:.3f} | "
                              f"{row['peak_wireless_mbps']:.1f} | {row['coverage']:.3f} |\n")

            with open(output_path, 'w', encoding='utf-8') as f:
                f.write(''.join(md))

            logger.info(f"Markdown export saved to {output_path}")
            return True

        except Exception as e:
            logger.error(f"Error exporting Markdown: {e}")
            return False

