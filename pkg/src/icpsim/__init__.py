"""Discrete-event simulator of a serverless cluster running workflow DAGs,
with concurrency-prediction based pre-warming, affinity placement and
request routing policies."""

from .cluster import InstanceRecord, InstanceState, NetworkModel, Trigger, WorkerNode
from .engine import EventKind, EventLog, SimConfig, Simulator, run
from .metrics import MetricsReport, compute_report, rpd
from .scheduler import PolicyBundle, make_policy
from .workflow import (
    FunctionSpec,
    WorkflowApplication,
    WorkflowRequest,
    WorkflowType,
    critical_path_exec_time,
    derive_workflow_type,
    validate_application,
)
from .workload import SyntheticParams, generate_synthetic, load_trace

__version__ = "0.1.0"
