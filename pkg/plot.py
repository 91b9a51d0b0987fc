#!/usr/bin/env python3
"""
Render HTML charts from a HiveSim results directory.

Usage: plot.py <results-dir> [--out <dir>]
"""

import argparse
import json
import sys
from pathlib import Path

from hivesim.visualize import ResultsVisualizer


def load_reports(results_dir: Path) -> dict:
    """Every metrics.json below the directory, keyed point/mode/seed."""
    reports = {}
    for path in sorted(results_dir.rglob('metrics.json')):
        with open(path, encoding='utf-8') as f:
            report = json.load(f)
        reports['/'.join(path.parent.relative_to(results_dir).parts)] = report
    return reports


def main() -> int:
    parser = argparse.ArgumentParser(description='Render HiveSim result charts')
    parser.add_argument('results', type=str, help='Results directory written by `main.py run`')
    parser.add_argument('--out', type=str, default=None, help='Output directory (default: <results>/plots)')
    args = parser.parse_args()

    results_dir = Path(args.results)
    reports = load_reports(results_dir)
    if not reports:
        print(f"❌ No metrics.json found under {results_dir}")
        return 1
    out = Path(args.out) if args.out else results_dir / 'plots'
    out.mkdir(parents=True, exist_ok=True)

    print(f"📈 Rendering {len(reports)} run(s)")
    visualizer = ResultsVisualizer(reports)
    for name, render in (('latency.html', visualizer.create_latency_chart),
                         ('battery.html', visualizer.create_battery_chart),
                         ('bandwidth.html', visualizer.create_bandwidth_chart)):
        if render(str(out / name)):
            print(f"   ✓ {out / name}")

    plans = {}
    for label, report in reports.items():
        plans.setdefault(report['plan']['plan_id'], (label, report['plan']))
    for plan_id, (label, plan) in sorted(plans.items()):
        path = out / f"plan-{plan_id}.html"
        if visualizer.create_plan_graph(plan, str(path)):
            print(f"   ✓ {path} ({label})")

    print(f"\n✅ Charts saved to {out}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
