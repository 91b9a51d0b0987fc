"""
Visualization module for HiveSim.
Creates latency, battery and bandwidth charts and placement plan graphs.
"""

import logging
from typing import Any, Dict, Optional

from hivesim.sim.net import DataPathKind

logger = logging.getLogger(__name__)

SIDE_COLORS = {'Cloud': '#45b7d1', 'Edge': '#f9ca24'}

PATH_COLORS = {
    DataPathKind.RPC_CLOUD_EDGE: '#ff6b6b',
    DataPathKind.RPC_ACCELERATED: '#fd79a8',
    DataPathKind.STORE_EXCHANGE: '#95a5a6',
    DataPathKind.REMOTE_MEMORY: '#6c5ce7',
    DataPathKind.SAME_CONTAINER: '#4ecdc4',
    DataPathKind.ON_DEVICE_LOCAL: '#2ecc71',
}


class ResultsVisualizer:
    """Create visualizations from run reports."""

    def __init__(self, reports: Dict[str, Dict[str, Any]]):
        """
        Initialize visualizer.

        Args:
            reports: Run label -> metrics report (as written to metrics.json)
        """
        self.reports = reports

    def create_latency_chart(self, output_path: Optional[str] = None) -> Optional[str]:
        """
        Plot end-to-end latency percentiles per run using plotly.

        Args:
            output_path: Path to save HTML chart

        Returns:
            HTML string or path to saved file
        """
        try:
            import plotly.graph_objects as go

            fig = go.Figure()
            for label, report in sorted(self.reports.items()):
                e2e = report['metrics']['latency'].get('e2e')
                if not e2e:
                    continue
                fig.add_trace(go.Scatter(
                    x=[e2e['p50_ms'], e2e['p90_ms'], e2e['p99_ms']],
                    y=[0.50, 0.90, 0.99],
                    mode='lines+markers',
                    name=label
                ))
            fig.update_layout(title_text='End-to-end latency', xaxis_title='latency (ms)',
                              yaxis_title='quantile', xaxis_type='log')
            return self._emit(fig, output_path)

        except Exception as e:
            logger.error(f"Error creating latency chart: {e}")
            return None

    def create_battery_chart(self, output_path: Optional[str] = None) -> Optional[str]:
        """Swarm-mean battery level over time, one line per run."""
        try:
            import plotly.graph_objects as go

            fig = go.Figure()
            for label, report in sorted(self.reports.items()):
                traces = report['metrics']['battery']['traces']
                by_time: Dict[float, list] = {}
                for trace in traces.values():
                    for t, pct in trace:
                        by_time.setdefault(t, []).append(pct)
                times = sorted(by_time)
                fig.add_trace(go.Scatter(
                    x=times,
                    y=[sum(by_time[t]) / len(by_time[t]) for t in times],
                    mode='lines',
                    name=label
                ))
            fig.update_layout(title_text='Mean battery level', xaxis_title='time (s)',
                              yaxis_title='battery (%)')
            return self._emit(fig, output_path)

        except Exception as e:
            logger.error(f"Error creating battery chart: {e}")
            return None

    def create_bandwidth_chart(self, output_path: Optional[str] = None) -> Optional[str]:
        """Aggregate wireless throughput per second, one line per run."""
        try:
            import plotly.graph_objects as go

            fig = go.Figure()
            for label, report in sorted(self.reports.items()):
                totals: Dict[int, float] = {}
                for link, trace in report['metrics']['bandwidth']['traces'].items():
                    if not link.startswith('wireless'):
                        continue
                    for second, mbps in trace:
                        totals[second] = totals.get(second, 0.0) + mbps
                seconds = sorted(totals)
                fig.add_trace(go.Scatter(x=seconds, y=[totals[s] for s in seconds],
                                         mode='lines', name=label))
            fig.update_layout(title_text='Wireless bandwidth', xaxis_title='time (s)',
                              yaxis_title='Mbps')
            return self._emit(fig, output_path)

        except Exception as e:
            logger.error(f"Error creating bandwidth chart: {e}")
            return None

    @staticmethod
    def create_plan_graph(plan: Dict[str, Any], output_path: Optional[str] = None) -> Optional[str]:
        """
        Draw a placement plan with PyVis: tasks colored by side, edges by data path.

        Args:
            plan: Plan dictionary (PlacementPlan.to_dict())
            output_path: Path to save HTML graph

        Returns:
            HTML string or path to saved file
        """
        try:
            from pyvis.network import Network

            net = Network(height='500px', width='100%', directed=True,
                          bgcolor='#222222', font_color='white')
            for task, location in plan['assignment'].items():
                side = 'Edge' if location.startswith('Edge') else 'Cloud'
                net.add_node(task, label=task, title=location, color=SIDE_COLORS[side])
            for key, kind in sorted(plan.get('edge_paths', {}).items()):
                parent, child = key.split('->', 1)
                net.add_edge(parent, child, title=kind, color=PATH_COLORS.get(kind, '#95a5a6'))
            net.set_options("""
            {
              "layout": {"hierarchical": {"enabled": true, "direction": "LR", "sortMethod": "directed"}},
              "physics": {"enabled": false}
            }
            """)

            if output_path:
                net.save_graph(output_path)
                return output_path
            return net.generate_html()

        except Exception as e:
            logger.error(f"Error creating plan graph: {e}")
            return None

    @staticmethod
    def _emit(fig, output_path: Optional[str]) -> str:
        if output_path:
            fig.write_html(output_path, include_plotlyjs='cdn')
            return output_path
        return fig.to_html(include_plotlyjs=False)
