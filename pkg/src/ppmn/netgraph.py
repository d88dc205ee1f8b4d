"""Layer graph: named parameter store, DAG composition and reverse-mode passes.

A :class:`Graph` holds :class:`LayerNode` objects that refer to each other by
name and to parameters by name in a shared :class:`ParamStore`. Two nodes that
bind the same parameter names share storage, and their gradients accumulate
into the same buffer.

Any node can be fed directly in :meth:`Graph.forward`, which turns the graph
into the sub-graph downstream of the fed nodes. This is how the model scores
many pairs from cached tower representations.
"""
import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import GraphError, ShapeError

LAYER_KINDS = ("conv", "relu", "maxpool", "fc", "concat", "softmax-pair")


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    momentum: np.ndarray


class ParamStore:
    """Ordered map name -> Param with value/grad/momentum of identical shape."""

    def __init__(self):
        self._params = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise GraphError(f"parameter {name!r} already defined")
        value = np.ascontiguousarray(value)
        self._params[name] = Param(value, np.zeros_like(value), np.zeros_like(value))
        return name

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise GraphError(f"unknown parameter {name!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix=""):
        return [n for n in self._params if n.startswith(prefix)]

    def zero_grads(self):
        for p in self._params.values():
            p.grad.fill(0)

    def values(self):
        """Snapshot of parameter values (copies), in insertion order."""
        return OrderedDict((n, p.value.copy()) for n, p in self._params.items())

    def load(self, values, strict=True):
        for name, value in values.items():
            if name not in self._params:
                if strict:
                    raise GraphError(f"unexpected parameter {name!r}")
                continue
            p = self._params[name]
            if value.shape != p.value.shape:
                raise ShapeError(f"parameter {name!r}: shape {value.shape} != {p.value.shape}")
            p.value[...] = value
        if strict:
            missing = set(self._params) - set(values)
            if missing:
                raise GraphError(f"missing parameters: {sorted(missing)}")

    def astype(self, dtype):
        """Cast values, grads and momenta in place (used by the 64-bit gradient check)."""
        for p in self._params.values():
            p.value = p.value.astype(dtype)
            p.grad = p.grad.astype(dtype)
            p.momentum = p.momentum.astype(dtype)

    @property
    def dtype(self):
        for p in self._params.values():
            return p.value.dtype
        return ops.DTYPE


@dataclass
class LayerNode:
    name: str
    kind: str
    inputs: tuple
    params: tuple = ()
    spec: object = None


@dataclass
class _Cache:
    order: list
    values: dict
    ctx: dict = field(default_factory=dict)
    fed: frozenset = frozenset()


# -- per-kind forward/backward -------------------------------------------------
# forward(node, args, store) -> (out, ctx); backward(node, ctx, g, store) -> (input grads, param grads)


def _conv_fwd(node, args, store):
    w, b = (store[n].value for n in node.params)
    out, cols = ops.conv2d_forward(args[0], w, b, node.spec, return_cols=True)
    return out, (args[0], cols)


def _conv_bwd(node, ctx, g, store):
    x, cols = ctx
    w = store[node.params[0]].value
    gx, gw, gb = ops.conv2d_backward(x, w, node.spec, g, cols=cols)
    return [gx], [gw, gb]


def _relu_fwd(node, args, store):
    return ops.relu_forward(args[0]), args[0]


def _relu_bwd(node, ctx, g, store):
    return [ops.relu_backward(ctx, g)], []


def _pool_fwd(node, args, store):
    window, stride = node.spec
    return ops.maxpool_forward(args[0], window, stride)


def _pool_bwd(node, ctx, g, store):
    return [ops.maxpool_backward(ctx, g)], []


def _fc_fwd(node, args, store):
    w, b = (store[n].value for n in node.params)
    return ops.fc_forward(args[0], w, b), args[0]


def _fc_bwd(node, ctx, g, store):
    w = store[node.params[0]].value
    gx, gw, gb = ops.fc_backward(ctx, w, g)
    return [gx], [gw, gb]


def _concat_fwd(node, args, store):
    return ops.concat_channels(*args), [a.shape[1] for a in args]


def _concat_bwd(node, ctx, g, store):
    return ops.concat_backward(g, ctx), []


def _softmax_fwd(node, args, store):
    probs = ops.softmax_pair_forward(args[0])
    return probs, probs


def _softmax_bwd(node, ctx, g, store):
    return [ops.softmax_pair_backward(ctx, g)], []


_FORWARD = {
    "conv": _conv_fwd,
    "relu": _relu_fwd,
    "maxpool": _pool_fwd,
    "fc": _fc_fwd,
    "concat": _concat_fwd,
    "softmax-pair": _softmax_fwd,
}
_BACKWARD = {
    "conv": _conv_bwd,
    "relu": _relu_bwd,
    "maxpool": _pool_bwd,
    "fc": _fc_bwd,
    "concat": _concat_bwd,
    "softmax-pair": _softmax_bwd,
}


class Graph:
    def __init__(self, store=None):
        self.store = store if store is not None else ParamStore()
        self.inputs = []
        self.nodes = OrderedDict()
        self._cache = None
        self._topo = None

    # -- construction ----------------------------------------------------------

    def input(self, name):
        self._check_new(name)
        self.inputs.append(name)
        self._topo = None
        return name

    def add(self, name, kind, inputs, params=(), spec=None):
        if kind not in LAYER_KINDS:
            raise GraphError(f"unknown layer kind {kind!r}; expected one of {LAYER_KINDS}")
        self._check_new(name)
        if isinstance(inputs, str):
            inputs = (inputs,)
        for p in params:
            if p not in self.store:
                raise GraphError(f"node {name!r} binds unknown parameter {p!r}")
        self.nodes[name] = LayerNode(name, kind, tuple(inputs), tuple(params), spec)
        self._topo = None
        return name

    def _check_new(self, name):
        if name in self.nodes or name in self.inputs:
            raise GraphError(f"duplicate node name {name!r}")

    def topological_order(self):
        """Kahn's algorithm over the node DAG; raises GraphError on a cycle."""
        if self._topo is not None:
            return self._topo
        known = set(self.inputs) | set(self.nodes)
        indeg = {}
        users = {n: [] for n in known}
        for node in self.nodes.values():
            for src in node.inputs:
                if src not in known:
                    raise GraphError(f"node {node.name!r} reads undefined node {src!r}")
                users[src].append(node.name)
            indeg[node.name] = len(node.inputs)
        ready = [n for n in self.inputs] + [n for n, d in indeg.items() if d == 0]
        order = []
        while ready:
            cur = ready.pop(0)
            if cur in self.nodes:
                order.append(cur)
            for u in users[cur]:
                indeg[u] -= 1
                if indeg[u] == 0:
                    ready.append(u)
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.nodes) - set(order))
            raise GraphError(f"cycle detected among nodes {stuck}")
        self._topo = order
        return order

    # -- execution -------------------------------------------------------------

    def _plan(self, feeds, outputs):
        order = self.topological_order()
        needed = set(outputs)
        plan = []
        for name in reversed(order):
            if name in needed and name not in feeds:
                plan.append(name)
                needed.update(self.nodes[name].inputs)
        missing = sorted(n for n in needed if n not in feeds and n not in self.nodes)
        if missing:
            raise GraphError(f"unbound graph inputs: {missing}")
        return plan[::-1]

    def forward(self, feeds, outputs=None):
        """Evaluate the nodes needed for ``outputs`` given ``feeds``.

        ``feeds`` may bind graph inputs or any intermediate node. Returns a dict
        of the requested outputs (default: sink nodes) and caches everything
        needed for :meth:`backward`.
        """
        for name in feeds:
            if name not in self.nodes and name not in self.inputs:
                raise GraphError(f"cannot feed unknown node {name!r}")
        if outputs is None:
            consumed = {s for node in self.nodes.values() for s in node.inputs}
            outputs = [n for n in self.nodes if n not in consumed]
        outputs = list(outputs)
        plan = self._plan(feeds, outputs)
        values = {n: np.ascontiguousarray(v) for n, v in feeds.items()}
        ctx = {}
        for name in plan:
            node = self.nodes[name]
            args = [values[s] for s in node.inputs]
            values[name], ctx[name] = _FORWARD[node.kind](node, args, self.store)
        self._cache = _Cache(plan, values, ctx, frozenset(feeds))
        return {n: values[n] for n in outputs}

    def value(self, name):
        if self._cache is None or name not in self._cache.values:
            raise GraphError(f"no cached value for {name!r}; run forward first")
        return self._cache.values[name]

    def backward(self, grads):
        """Back-propagate ``grads`` (node name -> dL/dnode) through the cached pass.

        Parameter gradients are added (+=) into the store; the caller zeroes them
        between steps. Returns gradients with respect to the fed nodes.
        """
        cache = self._cache
        if cache is None:
            raise GraphError("backward called without a forward cache")
        acc = {}
        for name, g in grads.items():
            if name not in cache.values:
                raise GraphError(f"gradient given for {name!r}, which the last forward did not compute")
            acc[name] = np.asarray(g, dtype=cache.values[name].dtype)
        for name in reversed(cache.order):
            g = acc.pop(name, None)
            if g is None:
                continue
            node = self.nodes[name]
            in_grads, p_grads = _BACKWARD[node.kind](node, cache.ctx[name], g, self.store)
            for pname, pg in zip(node.params, p_grads):
                self.store[pname].grad += pg
            for src, sg in zip(node.inputs, in_grads):
                if src in acc:
                    acc[src] = acc[src] + sg
                else:
                    acc[src] = sg
        return {n: acc[n] for n in cache.fed if n in acc}

    def activation_signature(self):
        """Digest of every relu mask and max-pool winner in the cached pass.

        Two passes with equal signatures lie on the same linear piece of the
        network, which is what central differences need to be meaningful.
        """
        cache = self._cache
        if cache is None:
            raise GraphError("no forward cache")
        h = hashlib.blake2b(digest_size=16)
        for name in cache.order:
            kind = self.nodes[name].kind
            if kind == "relu":
                h.update(np.packbits(cache.ctx[name] > 0).tobytes())
            elif kind == "maxpool":
                h.update(cache.ctx[name].indices.tobytes())
        return h.digest()


def _scalar_objective(outputs):
    if len(outputs) != 1:
        raise GraphError(f"grad_check needs a scalar output, graph produced {sorted(outputs)}")
    (name, value), = outputs.items()
    if np.size(value) != 1:
        raise GraphError(f"grad_check needs a scalar output, {name!r} has shape {np.shape(value)}")
    return float(np.sum(value)), {name: np.ones_like(value)}


def _relative_error(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(graph, feeds, names=None, eps=1e-6, objective=None, outputs=None,
               max_coords=64, seed=0, dtype=np.float64, floor=1e-6):
    """Compare analytic parameter gradients against central differences.

    ``objective(outputs) -> (loss, {node: dloss/dnode})`` turns graph outputs into
    a scalar; by default the graph must produce a single one-element output.
    At most ``max_coords`` seeded coordinates are sampled per parameter tensor.
    Coordinates whose +/-eps perturbation changes a relu mask or pool winner
    are resampled, since the loss is not differentiable across such a kink.

    The store is temporarily cast to ``dtype`` (64-bit by default) and restored
    afterwards. Returns {parameter name: max relative error}.
    """
    objective = objective or _scalar_objective
    store = graph.store
    names = list(store) if names is None else list(names)
    rng = np.random.default_rng(seed)
    orig_dtype = store.dtype
    saved = store.values()
    store.astype(dtype)
    feeds = {k: np.asarray(v, dtype=dtype) for k, v in feeds.items()}

    def run():
        loss, _ = objective(graph.forward(feeds, outputs))
        return loss, graph.activation_signature()

    try:
        store.zero_grads()
        loss, out_grads = objective(graph.forward(feeds, outputs))
        base_sig = graph.activation_signature()
        graph.backward(out_grads)
        analytic = {n: store[n].grad.copy() for n in names}
        errors = {}
        for name in names:
            value = store[name].value
            size = value.size
            candidates = rng.permutation(size)
            worst, used = 0.0, 0
            for flat in candidates:
                if used >= max_coords:
                    break
                idx = np.unravel_index(flat, value.shape)
                old = value[idx]
                value[idx] = old + eps
                fp, sig_p = run()
                value[idx] = old - eps
                fm, sig_m = run()
                value[idx] = old
                if sig_p != base_sig or sig_m != base_sig:
                    continue
                numeric = (fp - fm) / (2 * eps)
                worst = max(worst, _relative_error(float(analytic[name][idx]), numeric, floor))
                used += 1
            if used == 0:
                raise GraphError(f"no differentiable coordinate found for {name!r}")
            errors[name] = worst
        return errors
    finally:
        store.astype(orig_dtype)
        store.load(saved)
        store.zero_grads()
