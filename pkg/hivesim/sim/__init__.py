"""
Discrete-event simulation of the swarm, the network and the serverless cluster.
"""

from hivesim.sim.kernel import Distribution, Kernel, MetricsReport, ServiceStation, sample
from hivesim.sim.net import DataPathKind, HeartbeatMonitor, Network
from hivesim.sim.cloud import FunctionInvocation, ServerlessCluster
from hivesim.sim.edge import EdgeDevice, FieldModel, plan_route

__all__ = [
    'Distribution',
    'Kernel',
    'MetricsReport',
    'ServiceStation',
    'sample',
    'DataPathKind',
    'HeartbeatMonitor',
    'Network',
    'FunctionInvocation',
    'ServerlessCluster',
    'EdgeDevice',
    'FieldModel',
    'plan_route'
]
