"""Framework-neutral computational graph format.

Converted models are expressed as an :class:`InterchangeGraph`: named tensors,
a flat list of nodes drawn from a fixed nine-operator set, and weight
initializers.  The module provides structural validation, deterministic
topological ordering, shape inference, a canonical byte serialization
(``.onnx`` files in this system are these documents, not protobuf), and graph
composition for stitching a producer model into a consumer model.

All types are immutable values; every operation here is a pure function, so
graphs can be shared freely across threads.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from ._canonical import dumps_canonical, loads_canonical
from .errors import (
    CompositionError,
    CycleError,
    MalformedDocumentError,
    ShapeMismatchError,
    UnknownOperatorError,
    ValidationReport,
)

DTYPES = ("f32", "f64", "i64")

Shape = tuple[int, ...]
AttrValue = Any  # int | tuple[int, ...] | str


@dataclass(frozen=True)
class OpSpec:
    n_inputs: int | None  # None: variadic, at least min_inputs
    n_outputs: int
    min_inputs: int = 0
    required_attrs: tuple[str, ...] = ()


OPERATORS: dict[str, OpSpec] = {
    "MatMul": OpSpec(2, 1),
    "Add": OpSpec(2, 1),
    "Relu": OpSpec(1, 1),
    "Sigmoid": OpSpec(1, 1),
    "Tanh": OpSpec(1, 1),
    "Softmax": OpSpec(1, 1, required_attrs=("axis",)),
    "Concat": OpSpec(None, 1, min_inputs=2, required_attrs=("axis",)),
    "Reshape": OpSpec(1, 1, required_attrs=("target_shape",)),
    "Identity": OpSpec(1, 1),
}


def shape_numel(shape: Sequence[int]) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


@dataclass(frozen=True)
class Tensor:
    """Dense numeric array; ``data`` is row-major and absent for pure specs.

    An empty shape denotes a scalar holding one element.
    """

    name: str
    dtype: str
    shape: Shape
    data: tuple[float | int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(self.shape))
        if self.data is not None:
            object.__setattr__(self, "data", tuple(self.data))

    @property
    def numel(self) -> int:
        return shape_numel(self.shape)

    def spec_only(self) -> "Tensor":
        return Tensor(self.name, self.dtype, self.shape)

    def renamed(self, name: str) -> "Tensor":
        return Tensor(name, self.dtype, self.shape, self.data)


@dataclass(frozen=True)
class GraphNode:
    id: str
    op_type: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    attributes: dict[str, AttrValue] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        attrs = {k: tuple(v) if isinstance(v, (list, tuple)) else v
                 for k, v in self.attributes.items()}
        object.__setattr__(self, "attributes", attrs)


@dataclass(frozen=True)
class InterchangeGraph:
    """A validated graph satisfies single assignment and acyclicity.

    ``initializers`` are kept sorted by tensor name and ``nodes`` by node id,
    so two graphs assembled in different insertion orders compare (and
    serialize) identically.  Input/output order is interface order and is
    preserved as given.
    """

    name: str
    ir_version: int
    inputs: tuple[Tensor, ...] = ()
    outputs: tuple[Tensor, ...] = ()
    initializers: tuple[Tensor, ...] = ()
    nodes: tuple[GraphNode, ...] = ()
    doc: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(
            self, "initializers",
            tuple(sorted(self.initializers, key=lambda t: t.name)))
        object.__setattr__(
            self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))

    def node_by_id(self, node_id: str) -> GraphNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)


# ---------------------------------------------------------------------------
# validation


def _check_tensor_spec(t: Tensor, scope: str, *, want_data: bool | None,
                       out: list[str]) -> None:
    where = f"{scope} '{t.name}'"
    if not isinstance(t.name, str) or not t.name:
        out.append(f"{scope} has an empty name")
    if t.dtype not in DTYPES:
        out.append(f"{where} has unknown dtype '{t.dtype}'")
    if not all(isinstance(d, int) and d >= 0 for d in t.shape):
        out.append(f"{where} has a negative or non-integer dimension")
        return
    if want_data is True:
        if t.data is None:
            out.append(f"{where} is missing data")
        elif len(t.data) != t.numel:
            out.append(f"{where} data length {len(t.data)} does not match "
                       f"shape {list(t.shape)} (expected {t.numel})")
    elif want_data is False and t.data is not None:
        out.append(f"{where} must not carry data")


def validate_graph(g: InterchangeGraph) -> ValidationReport:
    """Check every structural invariant; violations name the offender."""
    v: list[str] = []

    if not isinstance(g.ir_version, int) or isinstance(g.ir_version, bool) \
            or g.ir_version < 1:
        v.append(f"ir_version must be an integer >= 1, got {g.ir_version!r}")

    for t in g.inputs:
        _check_tensor_spec(t, "input", want_data=False, out=v)
    for t in g.initializers:
        _check_tensor_spec(t, "initializer", want_data=True, out=v)
    for t in g.outputs:
        _check_tensor_spec(t, "output", want_data=None, out=v)

    # single assignment: each name produced by exactly one of
    # {graph input, initializer, node output}
    producers: dict[str, list[str]] = {}
    for t in g.inputs:
        producers.setdefault(t.name, []).append("graph input")
    for t in g.initializers:
        producers.setdefault(t.name, []).append("initializer")

    seen_node_ids: set[str] = set()
    for node in g.nodes:
        if not node.id:
            v.append("node has an empty id")
        if node.id in seen_node_ids:
            v.append(f"duplicate node id '{node.id}'")
        seen_node_ids.add(node.id)

        spec = OPERATORS.get(node.op_type)
        if spec is None:
            v.append(f"node '{node.id}' has unknown op_type '{node.op_type}'")
        else:
            if spec.n_inputs is not None and len(node.inputs) != spec.n_inputs:
                v.append(f"node '{node.id}' ({node.op_type}) expects "
                         f"{spec.n_inputs} inputs, has {len(node.inputs)}")
            if spec.n_inputs is None and len(node.inputs) < spec.min_inputs:
                v.append(f"node '{node.id}' ({node.op_type}) expects at least "
                         f"{spec.min_inputs} inputs, has {len(node.inputs)}")
            if len(node.outputs) != spec.n_outputs:
                v.append(f"node '{node.id}' ({node.op_type}) expects "
                         f"{spec.n_outputs} outputs, has {len(node.outputs)}")
            for attr in spec.required_attrs:
                if attr not in node.attributes:
                    v.append(f"node '{node.id}' ({node.op_type}) is missing "
                             f"required attribute '{attr}'")
        for key, value in node.attributes.items():
            if not _attr_value_ok(value):
                v.append(f"node '{node.id}' attribute '{key}' must be an "
                         "integer, integer sequence or string")
        for out_name in node.outputs:
            if not out_name:
                v.append(f"node '{node.id}' produces a tensor with an empty name")
            producers.setdefault(out_name, []).append(f"node '{node.id}'")

    for name, who in sorted(producers.items()):
        if len(who) > 1:
            v.append(f"tensor '{name}' produced more than once: "
                     + ", ".join(who))

    for node in g.nodes:
        for in_name in node.inputs:
            if in_name not in producers:
                v.append(f"node '{node.id}' consumes tensor '{in_name}' which "
                         "is produced nowhere in the graph")

    node_outputs = {name for node in g.nodes for name in node.outputs}
    initializer_names = {t.name for t in g.initializers}
    for t in g.outputs:
        if t.name not in node_outputs and t.name not in initializer_names:
            v.append(f"output {t.name} produced by no node or initializer")

    if not any(msg.startswith("duplicate node id") for msg in v):
        try:
            _topo_order(g)
        except CycleError as exc:
            v.append(str(exc))

    return ValidationReport.from_violations(v)


def _attr_value_ok(value: AttrValue) -> bool:
    if isinstance(value, bool):
        return False
    if isinstance(value, (int, str)):
        return True
    if isinstance(value, tuple):
        return all(isinstance(x, int) and not isinstance(x, bool) for x in value)
    return False


# ---------------------------------------------------------------------------
# topological order


def _topo_order(g: InterchangeGraph) -> list[str]:
    produced_by: dict[str, str] = {}
    for node in g.nodes:
        for name in node.outputs:
            produced_by[name] = node.id

    static = {t.name for t in g.inputs} | {t.name for t in g.initializers}
    deps: dict[str, set[str]] = {}
    dependents: dict[str, set[str]] = {n.id: set() for n in g.nodes}
    for node in g.nodes:
        needed = {produced_by[name] for name in node.inputs
                  if name not in static and name in produced_by}
        deps[node.id] = needed
    for node_id, needed in deps.items():
        for parent in needed:
            dependents[parent].add(node_id)

    ready = [node_id for node_id, needed in deps.items() if not needed]
    heapq.heapify(ready)
    order: list[str] = []
    pending = {node_id: len(needed) for node_id, needed in deps.items()}
    while ready:
        node_id = heapq.heappop(ready)
        order.append(node_id)
        for child in sorted(dependents[node_id]):
            pending[child] -= 1
            if pending[child] == 0:
                heapq.heappush(ready, child)

    if len(order) < len(g.nodes):
        stuck = {node_id for node_id, n in pending.items() if n > 0}
        on_cycle = _find_cycle_member(deps, stuck)
        raise CycleError(f"cycle detected involving node '{on_cycle}'")
    return order


def _find_cycle_member(deps: dict[str, set[str]], stuck: set[str]) -> str:
    # Follow unsatisfied dependencies; within the stuck set every node has
    # one, so the walk must revisit a node, which then lies on a cycle.
    current = min(stuck)
    seen: dict[str, int] = {}
    path: list[str] = []
    while current not in seen:
        seen[current] = len(path)
        path.append(current)
        current = min(d for d in deps[current] if d in stuck)
    return min(path[seen[current]:])


def topo_sort(g: InterchangeGraph) -> list[str]:
    """Dependency-respecting node order; ties broken by ascending node id."""
    return _topo_order(g)


# ---------------------------------------------------------------------------
# shape inference


def node_output_shapes(node: GraphNode,
                       input_shapes: Sequence[Shape]) -> list[Shape]:
    """Shape rule table; raises ShapeMismatchError naming the node."""

    def fail(expected: str) -> ShapeMismatchError:
        actual = ", ".join(str(list(s)) for s in input_shapes)
        return ShapeMismatchError(
            f"node '{node.id}' ({node.op_type}): expected {expected}, "
            f"got [{actual}]")

    op = node.op_type
    if op == "MatMul":
        a, b = input_shapes
        if len(a) != 2 or len(b) != 2:
            raise fail("two rank-2 operands")
        if a[1] != b[0]:
            raise fail(f"inner dimensions to agree ([m,k] x [k,n])")
        return [(a[0], b[1])]
    if op == "Add":
        a, b = input_shapes
        if a != b:
            raise fail("equal shapes (no broadcasting)")
        return [a]
    if op in ("Relu", "Sigmoid", "Tanh", "Identity"):
        return [input_shapes[0]]
    if op == "Softmax":
        (a,) = input_shapes
        axis = node.attributes["axis"]
        if not isinstance(axis, int) or not 0 <= axis < len(a):
            raise fail(f"axis in [0, {len(a)}), got {axis!r}")
        return [a]
    if op == "Concat":
        axis = node.attributes["axis"]
        first = input_shapes[0]
        if not isinstance(axis, int) or not 0 <= axis < len(first):
            raise fail(f"axis in [0, {len(first)}), got {axis!r}")
        total = first[axis]
        for s in input_shapes[1:]:
            if len(s) != len(first):
                raise fail("operands of equal rank")
            for dim in range(len(first)):
                if dim != axis and s[dim] != first[dim]:
                    raise fail(f"equal dimensions outside axis {axis}")
            total += s[axis]
        out = list(first)
        out[axis] = total
        return [tuple(out)]
    if op == "Reshape":
        (a,) = input_shapes
        target = node.attributes["target_shape"]
        if not isinstance(target, tuple) or \
                not all(isinstance(d, int) and d >= 0 for d in target):
            raise fail(f"target_shape of non-negative integers, got {target!r}")
        if shape_numel(a) != shape_numel(target):
            raise fail(f"target_shape with {shape_numel(a)} elements, "
                       f"got {list(target)} ({shape_numel(target)})")
        return [tuple(target)]
    raise UnknownOperatorError(f"node '{node.id}' has unknown op_type '{op}'")


def infer_shapes(g: InterchangeGraph,
                 input_shapes: Mapping[str, Sequence[int]] | None = None,
                 ) -> dict[str, Shape]:
    """Shape of every tensor in the graph, derived along topological order.

    ``input_shapes`` defaults to the graph's declared input shapes; when
    given it must cover all inputs and agree with the declarations (there are
    no symbolic dimensions).
    """
    shapes: dict[str, Shape] = {}
    for t in g.inputs:
        declared = t.shape
        if input_shapes is not None:
            if t.name not in input_shapes:
                raise ShapeMismatchError(
                    f"no shape supplied for graph input '{t.name}'")
            supplied = tuple(input_shapes[t.name])
            if supplied != declared:
                raise ShapeMismatchError(
                    f"input '{t.name}': supplied shape {list(supplied)} does "
                    f"not match declared {list(declared)}")
        shapes[t.name] = declared
    for t in g.initializers:
        shapes[t.name] = t.shape

    by_id = {node.id: node for node in g.nodes}
    for node_id in _topo_order(g):
        node = by_id[node_id]
        ins = [shapes[name] for name in node.inputs]
        outs = node_output_shapes(node, ins)
        for name, shape in zip(node.outputs, outs):
            shapes[name] = shape

    for t in g.outputs:
        inferred = shapes.get(t.name)
        if inferred is not None and inferred != t.shape:
            raise ShapeMismatchError(
                f"output '{t.name}': declared shape {list(t.shape)} does not "
                f"match inferred {list(inferred)}")
    return shapes


# ---------------------------------------------------------------------------
# canonical serialization


def _tensor_to_doc(t: Tensor, *, with_data: bool) -> dict[str, Any]:
    doc: dict[str, Any] = {
        "name": t.name,
        "dtype": t.dtype,
        "shape": list(t.shape),
    }
    if with_data:
        doc["data"] = [_scalar_to_json(x, t.dtype) for x in (t.data or ())]
    return doc


def _scalar_to_json(x: float | int, dtype: str) -> float | int:
    if dtype == "i64":
        return int(x)
    return float(x)


def _attr_to_doc(value: AttrValue) -> Any:
    return list(value) if isinstance(value, tuple) else value


def serialize_graph(g: InterchangeGraph) -> bytes:
    """Canonical bytes: byte equality of serializations <=> graph equality."""
    doc = {
        "name": g.name,
        "ir_version": g.ir_version,
        "inputs": [_tensor_to_doc(t, with_data=False) for t in g.inputs],
        "outputs": [_tensor_to_doc(t, with_data=False) for t in g.outputs],
        "initializers": [_tensor_to_doc(t, with_data=True)
                         for t in g.initializers],
        "nodes": [
            {
                "id": n.id,
                "op_type": n.op_type,
                "inputs": list(n.inputs),
                "outputs": list(n.outputs),
                "attributes": {k: _attr_to_doc(n.attributes[k])
                               for k in sorted(n.attributes)},
            }
            for n in g.nodes
        ],
        "doc": g.doc,
    }
    return dumps_canonical(doc)


_GRAPH_KEYS = {"name", "ir_version", "inputs", "outputs", "initializers",
               "nodes", "doc"}
_NODE_KEYS = {"id", "op_type", "inputs", "outputs", "attributes"}


def _expect(cond: bool, message: str) -> None:
    if not cond:
        raise MalformedDocumentError(message)


def _parse_tensor(doc: Any, *, with_data: bool, where: str) -> Tensor:
    _expect(isinstance(doc, dict), f"{where}: tensor entry must be an object")
    allowed = {"name", "dtype", "shape"} | ({"data"} if with_data else set())
    unknown = set(doc) - allowed
    _expect(not unknown, f"{where}: unknown tensor keys {sorted(unknown)}")
    for key in ("name", "dtype", "shape"):
        _expect(key in doc, f"{where}: tensor entry missing '{key}'")
    name, dtype, shape = doc["name"], doc["dtype"], doc["shape"]
    _expect(isinstance(name, str) and bool(name),
            f"{where}: tensor name must be a non-empty string")
    _expect(dtype in DTYPES, f"tensor '{name}': unknown dtype {dtype!r}")
    _expect(isinstance(shape, list) and
            all(isinstance(d, int) and not isinstance(d, bool) and d >= 0
                for d in shape),
            f"tensor '{name}': shape must be a list of non-negative integers")

    data = None
    if with_data:
        _expect("data" in doc, f"initializer '{name}' is missing data")
        raw = doc["data"]
        _expect(isinstance(raw, list), f"tensor '{name}': data must be a list")
        _expect(len(raw) == shape_numel(shape),
                f"tensor '{name}': data length {len(raw)} does not match "
                f"shape {shape}")
        data = tuple(_parse_scalar(x, dtype, name) for x in raw)
    return Tensor(name, dtype, tuple(shape), data)


def _parse_scalar(x: Any, dtype: str, name: str) -> float | int:
    _expect(isinstance(x, (int, float)) and not isinstance(x, bool),
            f"tensor '{name}': data values must be numbers")
    if dtype == "i64":
        _expect(isinstance(x, int), f"tensor '{name}': i64 data must be integers")
        return int(x)
    return quantize(float(x), dtype)


def quantize(x: float, dtype: str) -> float:
    """Snap a value onto the dtype's representable grid (f32 narrowing)."""
    if dtype == "f32":
        return struct.unpack("f", struct.pack("f", x))[0]
    return x


def parse_graph(data: bytes | str) -> InterchangeGraph:
    try:
        doc = loads_canonical(data)
    except ValueError as exc:
        raise MalformedDocumentError(f"invalid interchange document: {exc}")
    _expect(isinstance(doc, dict), "interchange document must be an object")
    unknown = set(doc) - _GRAPH_KEYS
    _expect(not unknown, f"unknown graph keys {sorted(unknown)}")
    _expect(isinstance(doc.get("name"), str), "graph 'name' must be a string")
    if "ir_version" not in doc:
        raise MalformedDocumentError("graph is missing 'ir_version'")
    ir_version = doc["ir_version"]
    _expect(isinstance(ir_version, int) and not isinstance(ir_version, bool)
            and ir_version >= 1,
            f"ir_version must be an integer >= 1, got {ir_version!r}")

    def tensor_list(key: str, with_data: bool) -> tuple[Tensor, ...]:
        raw = doc.get(key, [])
        _expect(isinstance(raw, list), f"graph '{key}' must be a list")
        return tuple(_parse_tensor(t, with_data=with_data, where=key)
                     for t in raw)

    nodes_raw = doc.get("nodes", [])
    _expect(isinstance(nodes_raw, list), "graph 'nodes' must be a list")
    nodes = tuple(_parse_node(n) for n in nodes_raw)

    doc_str = doc.get("doc")
    _expect(doc_str is None or isinstance(doc_str, str),
            "graph 'doc' must be a string or null")

    return InterchangeGraph(
        name=doc["name"],
        ir_version=ir_version,
        inputs=tensor_list("inputs", with_data=False),
        outputs=tensor_list("outputs", with_data=False),
        initializers=tensor_list("initializers", with_data=True),
        nodes=nodes,
        doc=doc_str,
    )


def _parse_node(doc: Any) -> GraphNode:
    _expect(isinstance(doc, dict), "node entry must be an object")
    unknown = set(doc) - _NODE_KEYS
    _expect(not unknown, f"node: unknown keys {sorted(unknown)}")
    for key in ("id", "op_type", "inputs", "outputs"):
        _expect(key in doc, f"node entry missing '{key}'")
    node_id, op_type = doc["id"], doc["op_type"]
    _expect(isinstance(node_id, str) and bool(node_id),
            "node 'id' must be a non-empty string")
    if op_type not in OPERATORS:
        raise UnknownOperatorError(
            f"node '{node_id}' has unknown op_type '{op_type}'")
    for key in ("inputs", "outputs"):
        _expect(isinstance(doc[key], list) and
                all(isinstance(x, str) for x in doc[key]),
                f"node '{node_id}': '{key}' must be a list of tensor names")
    attrs_raw = doc.get("attributes", {})
    _expect(isinstance(attrs_raw, dict),
            f"node '{node_id}': 'attributes' must be an object")
    attrs: dict[str, AttrValue] = {}
    for key, value in attrs_raw.items():
        if isinstance(value, list):
            _expect(all(isinstance(x, int) and not isinstance(x, bool)
                        for x in value),
                    f"node '{node_id}' attribute '{key}' must hold integers")
            attrs[key] = tuple(value)
        else:
            _expect(isinstance(value, (int, str)) and not isinstance(value, bool),
                    f"node '{node_id}' attribute '{key}' must be an integer, "
                    "integer sequence or string")
            attrs[key] = value
    return GraphNode(node_id, op_type, tuple(doc["inputs"]),
                     tuple(doc["outputs"]), attrs)


# ---------------------------------------------------------------------------
# composition


def compose_graphs(producer: InterchangeGraph, consumer: InterchangeGraph,
                   binding: Iterable[tuple[str, str]]) -> InterchangeGraph:
    """Stitch ``producer`` outputs into ``consumer`` inputs.

    Every tensor and node name is prefixed with ``<graph-name>/`` so the two
    namespaces cannot collide; ``/`` is therefore reserved and graph names
    must not contain it.  The result keeps the producer's inputs and exposes
    the consumer's outputs plus any unbound producer outputs.
    """
    binding = list(binding)
    for g, side in ((producer, "producer"), (consumer, "consumer")):
        if "/" in g.name:
            raise CompositionError(
                f"{side} graph name '{g.name}' must not contain '/'")
        report = validate_graph(g)
        if not report.ok:
            raise CompositionError(
                f"{side} graph '{g.name}' is invalid: {report.violations[0]}")

    producer_outputs = {t.name: t for t in producer.outputs}
    consumer_inputs = {t.name: t for t in consumer.inputs}

    bound_producer: list[str] = []
    bound_consumer: list[str] = []
    for src, dst in binding:
        if src not in producer_outputs:
            raise CompositionError(
                f"binding source '{src}' is not a producer output")
        if dst not in consumer_inputs:
            raise CompositionError(
                f"binding target '{dst}' is not a consumer input")
        if src in bound_producer or dst in bound_consumer:
            raise CompositionError(
                f"binding is not a bijection: '{src}' -> '{dst}' repeats a name")
        bound_producer.append(src)
        bound_consumer.append(dst)

    unbound_consumer = set(consumer_inputs) - set(bound_consumer)
    if unbound_consumer:
        raise CompositionError(
            "binding does not cover consumer inputs: "
            + ", ".join(sorted(unbound_consumer)))

    producer_shapes = infer_shapes(producer)
    for src, dst in binding:
        src_shape = producer_shapes[src]
        dst_shape = consumer_inputs[dst].shape
        if src_shape != dst_shape:
            raise CompositionError(
                f"shape mismatch on binding '{src}' -> '{dst}': "
                f"{list(src_shape)} vs {list(dst_shape)}")
        if producer_outputs[src].dtype != consumer_inputs[dst].dtype:
            raise CompositionError(
                f"dtype mismatch on binding '{src}' -> '{dst}': "
                f"{producer_outputs[src].dtype} vs {consumer_inputs[dst].dtype}")

    p_prefix = producer.name + "/"
    c_prefix = consumer.name + "/"
    # dst (consumer input) name -> the producer tensor that now feeds it
    feed = {c_prefix + dst: p_prefix + src for src, dst in binding}

    def p_name(name: str) -> str:
        return p_prefix + name

    def c_name(name: str) -> str:
        full = c_prefix + name
        return feed.get(full, full)

    new_inputs = tuple(t.renamed(p_name(t.name)) for t in producer.inputs)
    new_initializers = tuple(t.renamed(p_name(t.name))
                             for t in producer.initializers)
    new_initializers += tuple(t.renamed(c_prefix + t.name)
                              for t in consumer.initializers)
    new_nodes = tuple(
        GraphNode(p_name(n.id), n.op_type,
                  tuple(p_name(x) for x in n.inputs),
                  tuple(p_name(x) for x in n.outputs), dict(n.attributes))
        for n in producer.nodes)
    new_nodes += tuple(
        GraphNode(c_prefix + n.id, n.op_type,
                  tuple(c_name(x) for x in n.inputs),
                  tuple(c_prefix + x for x in n.outputs), dict(n.attributes))
        for n in consumer.nodes)

    produced = {t.name for t in new_inputs} | {t.name for t in new_initializers}
    for n in new_nodes:
        for out in n.outputs:
            if out in produced:
                raise CompositionError(
                    f"name collision after prefixing: '{out}'")
            produced.add(out)

    unbound_outputs = tuple(t.renamed(p_name(t.name)) for t in producer.outputs
                            if t.name not in bound_producer)
    new_outputs = tuple(t.renamed(c_prefix + t.name)
                        for t in consumer.outputs) + unbound_outputs

    composed = InterchangeGraph(
        name=f"{producer.name}+{consumer.name}",
        ir_version=max(producer.ir_version, consumer.ir_version),
        inputs=new_inputs,
        outputs=new_outputs,
        initializers=new_initializers,
        nodes=new_nodes,
        doc=f"composed: {producer.name} -> {consumer.name}",
    )
    report = validate_graph(composed)
    if not report.ok:
        raise CompositionError(
            "composition produced an invalid graph: " + report.violations[0])
    return composed
