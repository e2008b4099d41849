"""hpcfair: FAIR-principled management of AI artifacts.

A content-addressed artifact registry with persistent identifiers, tag
search, and credentialed access, combined with a config-driven task pipeline
that converts framework checkpoints into a neutral computational-graph
format, composes models across frameworks, runs inference, and executes
projects in reproducible sandboxes.

The quickest entry point is the client::

    from hpcfair import modelAPI

    api = modelAPI()
    api.conversion("conversion.yaml")
    api.collaborate("inference.yaml")
    api.container("container.yaml")
"""

from .client import ModelAPI, modelAPI
from .config import TaskConfig, load_config, parse_config, validate_config
from .errors import HpcfairError, ValidationReport
from .interchange import (
    GraphNode,
    InterchangeGraph,
    Tensor,
    compose_graphs,
    infer_shapes,
    parse_graph,
    serialize_graph,
    topo_sort,
    validate_graph,
)
from .registry import (
    ArtifactDraft,
    ArtifactRecord,
    Credential,
    Registry,
    SearchQuery,
    derive_pid,
)
from .runtime import NamedTensorSet, execute
from .tasks import Dispatcher, TaskResult

__version__ = "0.1.0"

__all__ = [
    "ArtifactDraft",
    "ArtifactRecord",
    "Credential",
    "Dispatcher",
    "GraphNode",
    "HpcfairError",
    "InterchangeGraph",
    "ModelAPI",
    "NamedTensorSet",
    "Registry",
    "SearchQuery",
    "TaskConfig",
    "TaskResult",
    "Tensor",
    "ValidationReport",
    "compose_graphs",
    "derive_pid",
    "execute",
    "infer_shapes",
    "load_config",
    "modelAPI",
    "parse_config",
    "parse_graph",
    "serialize_graph",
    "topo_sort",
    "validate_config",
    "validate_graph",
    "__version__",
]
