"""Deterministic interpreter for interchange graphs.

Nodes are evaluated in ``topo_sort`` order with numpy kernels operating in
the tensor's own dtype; there is no fusion, reordering, or broadcasting, so
two executions of the same graph on the same inputs produce bit-identical
results.  ``device: "gpu"`` requests are honored on CPU with a logged
warning; this runtime has no accelerator backend.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ._canonical import dumps_canonical, loads_canonical
from .config import TaskConfig, as_list
from .errors import (
    ConfigError,
    ExecutionError,
    InvalidGraphError,
    MalformedDocumentError,
    MissingTensorError,
    ShapeMismatchError,
    UnknownBackendError,
)
from .interchange import (
    GraphNode,
    InterchangeGraph,
    Tensor,
    compose_graphs,
    node_output_shapes,
    parse_graph,
    shape_numel,
    topo_sort,
    validate_graph,
)

logger = logging.getLogger(__name__)

_NP_DTYPES = {"f32": np.float32, "f64": np.float64, "i64": np.int64}
_FLOAT_ONLY_OPS = ("Sigmoid", "Tanh", "Softmax")


@dataclass(frozen=True)
class NamedTensorSet:
    """Immutable bundle of uniquely named tensors, all carrying data."""

    entries: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def from_tensors(cls, tensors: Iterable[Tensor]) -> "NamedTensorSet":
        entries: dict[str, Tensor] = {}
        for t in tensors:
            if t.name in entries:
                raise ExecutionError(f"duplicate tensor name '{t.name}'")
            if t.data is None:
                raise ExecutionError(f"tensor '{t.name}' carries no data")
            entries[t.name] = t
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def names(self) -> list[str]:
        return sorted(self.entries)


def serialize_tensor_set(ts: NamedTensorSet) -> bytes:
    """Canonical bytes: entries sorted by name, interchange number rules."""
    doc = [
        {
            "name": t.name,
            "dtype": t.dtype,
            "shape": list(t.shape),
            "data": [int(x) if t.dtype == "i64" else float(x)
                     for x in (t.data or ())],
        }
        for t in (ts[name] for name in ts.names())
    ]
    return dumps_canonical(doc)


def parse_tensor_set(data: bytes | str) -> NamedTensorSet:
    try:
        doc = loads_canonical(data)
    except ValueError as exc:
        raise MalformedDocumentError(f"invalid tensor document: {exc}")
    if not isinstance(doc, list):
        raise MalformedDocumentError("tensor document must be an array")
    tensors = []
    for entry in doc:
        if not isinstance(entry, dict) or \
                set(entry) != {"name", "dtype", "shape", "data"}:
            raise MalformedDocumentError(
                "each tensor entry needs exactly name/dtype/shape/data")
        t = Tensor(entry["name"], entry["dtype"], tuple(entry["shape"]),
                   tuple(entry["data"]))
        if t.dtype not in _NP_DTYPES:
            raise MalformedDocumentError(
                f"tensor '{t.name}': unknown dtype {t.dtype!r}")
        if t.data is None or len(t.data) != shape_numel(t.shape):
            raise MalformedDocumentError(
                f"tensor '{t.name}': data does not match shape")
        tensors.append(t)
    return NamedTensorSet.from_tensors(tensors)


# ---------------------------------------------------------------------------
# kernels


def to_array(t: Tensor) -> np.ndarray:
    if t.data is None:
        raise ExecutionError(f"tensor '{t.name}' carries no data")
    return np.array(t.data, dtype=_NP_DTYPES[t.dtype]).reshape(t.shape)


def from_array(name: str, dtype: str, arr: np.ndarray) -> Tensor:
    flat = tuple(arr.reshape(-1).tolist())
    return Tensor(name, dtype, tuple(int(d) for d in arr.shape), flat)


def _kernel(node: GraphNode, arrays: Sequence[np.ndarray]) -> np.ndarray:
    op = node.op_type
    if op == "MatMul":
        return arrays[0] @ arrays[1]
    if op == "Add":
        return arrays[0] + arrays[1]
    if op == "Relu":
        return np.maximum(arrays[0], np.zeros((), dtype=arrays[0].dtype))
    if op == "Sigmoid":
        one = np.ones((), dtype=arrays[0].dtype)
        return one / (one + np.exp(-arrays[0]))
    if op == "Tanh":
        return np.tanh(arrays[0])
    if op == "Softmax":
        axis = node.attributes["axis"]
        shifted = arrays[0] - np.max(arrays[0], axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=axis, keepdims=True)
    if op == "Concat":
        return np.concatenate(arrays, axis=node.attributes["axis"])
    if op == "Reshape":
        return arrays[0].reshape(node.attributes["target_shape"])
    if op == "Identity":
        return arrays[0].copy()
    raise ExecutionError(f"node '{node.id}' has unknown op_type '{op}'")


def apply_node(node: GraphNode, inputs: Sequence[Tensor]) -> list[Tensor]:
    """Evaluate one node; checks dtype agreement and shape legality."""
    if not inputs:
        raise ExecutionError(f"node '{node.id}' received no inputs")
    dtype = inputs[0].dtype
    for t in inputs[1:]:
        if t.dtype != dtype:
            raise ExecutionError(
                f"node '{node.id}': mixed input dtypes "
                f"{dtype} and {t.dtype}")
    if dtype == "i64" and node.op_type in _FLOAT_ONLY_OPS:
        raise ExecutionError(
            f"node '{node.id}': {node.op_type} requires a floating dtype")

    out_shapes = node_output_shapes(node, [t.shape for t in inputs])
    result = _kernel(node, [to_array(t) for t in inputs])
    out = from_array(node.outputs[0], dtype, result)
    if out.shape != out_shapes[0]:
        raise ShapeMismatchError(
            f"node '{node.id}': kernel produced shape {list(out.shape)}, "
            f"expected {list(out_shapes[0])}")
    return [out]


def execute(g: InterchangeGraph, inputs: NamedTensorSet) -> NamedTensorSet:
    """Run the graph; returns exactly its declared outputs."""
    report = validate_graph(g)
    if not report.ok:
        raise InvalidGraphError(
            "cannot execute invalid graph: " + report.violations[0])

    env: dict[str, Tensor] = {}
    for spec in g.inputs:
        if spec.name not in inputs:
            raise MissingTensorError(
                f"graph input '{spec.name}' not supplied")
        t = inputs[spec.name]
        if t.shape != spec.shape:
            raise ShapeMismatchError(
                f"input '{spec.name}': supplied shape {list(t.shape)} does "
                f"not match declared {list(spec.shape)}")
        if t.dtype != spec.dtype:
            raise ExecutionError(
                f"input '{spec.name}': supplied dtype {t.dtype} does not "
                f"match declared {spec.dtype}")
        env[spec.name] = t
    for init in g.initializers:
        env[init.name] = init

    by_id = {node.id: node for node in g.nodes}
    for node_id in topo_sort(g):
        node = by_id[node_id]
        produced = apply_node(node, [env[name] for name in node.inputs])
        for t in produced:
            env[t.name] = t

    results = []
    for spec in g.outputs:
        t = env[spec.name]
        if t.shape != spec.shape:
            raise ShapeMismatchError(
                f"output '{spec.name}': produced shape {list(t.shape)} does "
                f"not match declared {list(spec.shape)}")
        results.append(t)
    return NamedTensorSet.from_tensors(results)


# ---------------------------------------------------------------------------
# inference task


def _bind_inputs(g: InterchangeGraph, ts: NamedTensorSet) -> NamedTensorSet:
    """Match supplied tensors to graph inputs.

    Exact names win; otherwise a tensor may match by basename (the part
    after the last '/'), which covers composition-prefixed inputs fed from
    user files written against the original model's names.
    """
    bound = []
    for spec in g.inputs:
        if spec.name in ts:
            bound.append(ts[spec.name])
            continue
        base = spec.name.rsplit("/", 1)[-1]
        candidates = [name for name in ts.names()
                      if name.rsplit("/", 1)[-1] == base]
        if len(candidates) != 1:
            raise MissingTensorError(
                f"graph input '{spec.name}' not found in the input set "
                f"(names: {ts.names()})")
        bound.append(ts[candidates[0]].renamed(spec.name))
    return NamedTensorSet.from_tensors(bound)


def _load_model(cfg: TaskConfig, ref: str, store: Any) -> InterchangeGraph:
    # pid references resolve through the store's trusted server-side reader
    if store is not None and ref.startswith("hpcf-"):
        return parse_graph(store.read_blob_by_pid(ref))
    path = cfg.resolve(ref)
    if not path.is_file():
        raise ExecutionError(f"model file not found: {ref}")
    return parse_graph(path.read_bytes())


def run_inference_task(cfg: TaskConfig, store: Any = None) -> Path:
    """Load model(s), optionally compose for collaboration, run, write out.

    With ``tag: "collaboration"`` exactly two models are composed in listed
    order (first feeds second); model references may be registry pids when a
    store is supplied.
    """
    if cfg.general.task != "inference":
        raise ConfigError(
            f"inference task got config for task {cfg.general.task!r}")
    backend = cfg.general.backend
    if backend != "onnx":
        raise UnknownBackendError(
            f"inference supports backend 'onnx', got {backend!r}")
    if cfg.device.device == "gpu":
        logger.warning("executing on cpu (gpu unavailable in reference "
                       "runtime)")

    files = as_list(cfg.task_args.get("model_file"))
    if not files:
        raise ConfigError("inference requires task_args.model_file")
    graphs = [_load_model(cfg, ref, store) for ref in files]

    if cfg.general.tag == "collaboration":
        if len(graphs) != 2:
            raise ConfigError(
                f"collaboration requires exactly two models, "
                f"got {len(graphs)}")
        producer, consumer = graphs
        binding = [(src.name, dst.name)
                   for src, dst in zip(producer.outputs, consumer.inputs)]
        graph = compose_graphs(producer, consumer, binding)
    elif len(graphs) == 1:
        graph = graphs[0]
    else:
        raise ConfigError(
            "multiple model files require general_args.tag 'collaboration'")

    input_ref = cfg.task_args.get("input")
    if not input_ref:
        raise ConfigError("inference requires task_args.input")
    input_path = cfg.resolve(input_ref)
    if not input_path.is_file():
        raise ExecutionError(f"input file not found: {input_ref}")
    tensor_set = parse_tensor_set(input_path.read_bytes())

    outputs = execute(graph, _bind_inputs(graph, tensor_set))

    exports = cfg.export_files
    if len(exports) != 1:
        raise ConfigError(
            f"inference requires a single out_args.export_file, "
            f"got {len(exports)}")
    out_path = cfg.resolve(exports[0])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(serialize_tensor_set(outputs))
    logger.info("inference output written: %s", out_path)
    return out_path
