"""Pyramid person matching network assembly.

Dataflow (node names in brackets)::

    image_a -> backbone -> [rep_a] --+
                                      concat [pair] -> atrous 3x3 @ rate r -> relu [S_i]  (one per rate)
    image_b -> backbone -> [rep_b] --+
    concat(S_1..S_k) -> 1x1 conv -> relu [fusion] -> maxpool [final]
    final -> fc -> relu -> fc [logits] -> softmax-pair [prob]

Both backbones bind the same ``theta1.*`` parameters. Parameter groups:
``theta1`` backbone, ``theta2.branch{i}`` pyramid branch ``i`` (1-based),
``theta3`` fusion, ``theta4`` classifier head.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .netgraph import Graph, ParamStore


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple = (160, 80)
    backbone_channels: tuple = (16, 32, 64)
    rep_channels: int = 64
    pyramid_rates: tuple = (1, 2, 3)
    pyramid_kernel: tuple = (3, 3)
    branch_out_channels: int = 64
    fusion_out_channels: int = 64
    pool_window: tuple = (2, 2)
    pool_stride: tuple = (2, 2)
    fc_hidden: int = 1024
    seed: int = 0

    def __post_init__(self):
        for name in ("input_size", "backbone_channels", "pyramid_rates", "pyramid_kernel",
                     "pool_window", "pool_stride"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @property
    def total_stride(self):
        return 2 ** (len(self.backbone_channels) + 1)

    @property
    def rep_size(self):
        h, w = self.input_size
        return (h // self.total_stride, w // self.total_stride)

    @property
    def stage_channels(self):
        return self.backbone_channels + (self.rep_channels,)

    def validate(self):
        h, w = self.input_size
        s = self.total_stride
        if h % s or w % s:
            raise ConfigError(f"input size {self.input_size} not divisible by backbone stride {s}")
        if min(self.stage_channels) < 1 or self.branch_out_channels < 1 or self.fusion_out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if not self.pyramid_rates or min(self.pyramid_rates) < 1:
            raise ConfigError(f"pyramid rates must be >= 1, got {self.pyramid_rates}")
        if any(k % 2 == 0 for k in self.pyramid_kernel):
            raise ConfigError(f"pyramid kernel {self.pyramid_kernel} must be odd for same padding")
        if self.fc_hidden < 2:
            raise ConfigError("fc_hidden must be >= 2")
        rh, rw = self.rep_size
        (kh, kw), (sh, sw) = self.pool_window, self.pool_stride
        if kh > rh or kw > rw:
            raise ConfigError(f"pool window {self.pool_window} exceeds representation grid {self.rep_size}")
        if min(self.pool_stride) < 1:
            raise ConfigError("pool stride must be >= 1")

    @property
    def final_size(self):
        (rh, rw), (kh, kw), (sh, sw) = self.rep_size, self.pool_window, self.pool_stride
        return ((rh - kh) // sh + 1, (rw - kw) // sw + 1)

    def replace(self, **changes):
        return replace(self, **changes)


FULL_SCALE_CONFIG = ModelConfig(rep_channels=1024, branch_out_channels=1024, fusion_out_channels=1024)

# 32x16 input, rep_channels 8: small enough for whole-model finite differences.
# Three stages (stride 8) leave a 4x2 grid, so the 2x2 pool still fits.
GRADCHECK_CONFIG = ModelConfig(
    input_size=(32, 16),
    backbone_channels=(4, 4),
    rep_channels=8,
    branch_out_channels=8,
    fusion_out_channels=8,
    fc_hidden=16,
)


@dataclass
class PairScore:
    """Pair probabilities ``p`` (same person) and logits (s0, s1), batched along axis 0."""

    p: np.ndarray
    logits: np.ndarray = field(repr=False)

    @classmethod
    def from_logits(cls, logits):
        s = np.asarray(logits, dtype=np.float64).reshape(-1, 2)
        # p = exp(s1) / (exp(s0) + exp(s1)), evaluated as a logistic of the logit gap
        d = s[:, 1] - s[:, 0]
        e = np.exp(-np.abs(d))
        p = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return cls(p, s)

    @property
    def probabilities(self):
        """(n, 2) softmax activations for units (s0, s1)."""
        return np.stack([1.0 - self.p, self.p], axis=1)

    def __len__(self):
        return len(self.p)


GROUP_PREFIXES = ("theta1", "theta2", "theta3", "theta4")


def param_groups(store, rates):
    """Map group label -> parameter names: theta1, theta2.branch{i}, theta3, theta4."""
    groups = {"theta1": store.names("theta1.")}
    for i in range(1, len(rates) + 1):
        groups[f"theta2.branch{i}"] = store.names(f"theta2.branch{i}.")
    groups["theta3"] = store.names("theta3.")
    groups["theta4"] = store.names("theta4.")
    return groups


class PPMN:
    """The assembled network: one :class:`Graph` over one shared :class:`ParamStore`."""

    def __init__(self, config, graph):
        self.config = config
        self.graph = graph

    @property
    def store(self):
        return self.graph.store

    @property
    def branch_names(self):
        return [f"S_{i}" for i in range(1, len(self.config.pyramid_rates) + 1)]

    def param_groups(self):
        return param_groups(self.store, self.config.pyramid_rates)

    # -- the composable stages ---------------------------------------------------

    def _check_images(self, *images):
        expect = (3,) + self.config.input_size
        for img in images:
            if np.ndim(img) != 4 or tuple(np.shape(img)[1:]) != expect:
                raise ShapeError(f"image batch shape {np.shape(img)} does not match (n, {expect})")

    def extract_representations(self, image_a, image_b):
        """(R_A, R_B) through the shared backbone."""
        self._check_images(image_a, image_b)
        out = self.graph.forward({"image_a": image_a, "image_b": image_b}, ["rep_a", "rep_b"])
        return out["rep_a"], out["rep_b"]

    def represent(self, images):
        """Backbone output for a batch of images (either tower; they are identical)."""
        self._check_images(images)
        return self.graph.forward({"image_a": images}, ["rep_a"])["rep_a"]

    def pyramid_match(self, rep_a, rep_b):
        if np.shape(rep_a) != np.shape(rep_b):
            raise ShapeError(f"representation shapes differ: {np.shape(rep_a)} vs {np.shape(rep_b)}")
        out = self.graph.forward({"rep_a": rep_a, "rep_b": rep_b}, self.branch_names)
        return [out[n] for n in self.branch_names]

    def fuse_and_pool(self, *branches):
        shapes = {np.shape(b) for b in branches}
        if len(branches) != len(self.branch_names) or len(shapes) != 1:
            raise ShapeError(f"expected {len(self.branch_names)} equal-shape branch maps, got {shapes}")
        return self.graph.forward(dict(zip(self.branch_names, branches)), ["final"])["final"]

    def classify_pair(self, final):
        logits = self.graph.forward({"final": final}, ["logits"])["logits"]
        return PairScore.from_logits(logits)

    def forward_pair(self, image_a, image_b):
        """Full composition; leaves a forward cache that :meth:`backward_logits` consumes."""
        self._check_images(image_a, image_b)
        out = self.graph.forward({"image_a": image_a, "image_b": image_b}, ["logits"])
        return PairScore.from_logits(out["logits"])

    def match_reps(self, rep_a, rep_b):
        """Score pairs from precomputed representations (no backbone work)."""
        out = self.graph.forward({"rep_a": rep_a, "rep_b": rep_b}, ["logits"])
        return PairScore.from_logits(out["logits"])

    def backward_logits(self, grad_logits):
        g = np.asarray(grad_logits).reshape(-1, 2, 1, 1)
        return self.graph.backward({"logits": g})

    def score_matrix(self, probes, gallery, batch_size=64):
        """p for every (probe, gallery) pair; inputs are lists of (identity, image) items."""
        reps_p = self.represent_all([img for _, img in probes], batch_size)
        reps_g = self.represent_all([img for _, img in gallery], batch_size)
        return self.score_rep_pairs(reps_p, reps_g,
                                    [(i, j) for i in range(len(probes)) for j in range(len(gallery))],
                                    batch_size).reshape(len(probes), len(gallery))

    def represent_all(self, images, batch_size=64):
        out = []
        for start in range(0, len(images), batch_size):
            out.append(self.represent(np.stack(images[start:start + batch_size])))
        return np.concatenate(out) if out else np.empty((0,))

    def score_rep_pairs(self, reps_a, reps_b, index_pairs, batch_size=64):
        """p for each (i, j) in ``index_pairs`` with fixed-size chunks (order-independent results)."""
        scores = np.empty(len(index_pairs))
        idx = np.asarray(index_pairs, dtype=np.int64).reshape(-1, 2)
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            scores[start:start + len(chunk)] = self.match_reps(reps_a[chunk[:, 0]], reps_b[chunk[:, 1]]).p
        return scores

    def debug_branch_maps(self):
        """Cached S_i maps of the last pass, for inspection or PGM dumps."""
        return {n: self.graph.value(n) for n in self.branch_names}


# -- construction ------------------------------------------------------------------


def _he_init(rng, shape, fan_in, scale=1.0):
    return (rng.standard_normal(shape) * (scale * np.sqrt(2.0 / fan_in))).astype(ops.DTYPE)


def _add_conv(store, rng, prefix, cin, cout, kernel):
    kh, kw = kernel
    store.add(f"{prefix}.w", _he_init(rng, (cout, cin, kh, kw), cin * kh * kw))
    store.add(f"{prefix}.b", np.zeros(cout, dtype=ops.DTYPE))
    return (f"{prefix}.w", f"{prefix}.b")


def _add_fc(store, rng, prefix, fan_in, fan_out, scale=1.0):
    store.add(f"{prefix}.w", _he_init(rng, (fan_out, fan_in), fan_in, scale))
    store.add(f"{prefix}.b", np.zeros(fan_out, dtype=ops.DTYPE))
    return (f"{prefix}.w", f"{prefix}.b")


# Output layer starts near zero so a fresh model predicts p ~ 0.5 for every pair.
LOGIT_INIT_SCALE = 0.01


def build_model(config=None, seed=None):
    """Create the graph and seeded parameters for ``config``."""
    config = config or ModelConfig()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    store = ParamStore()
    g = Graph(store)
    g.input("image_a")
    g.input("image_b")

    stage_params = []
    cin = 3
    for i, cout in enumerate(config.stage_channels, start=1):
        stage_params.append(_add_conv(store, rng, f"theta1.stage{i}", cin, cout, (3, 3)))
        cin = cout
    for side in ("a", "b"):
        x = f"image_{side}"
        n_stages = len(stage_params)
        for i, params in enumerate(stage_params, start=1):
            spec = ops.ConvSpec(config.stage_channels[i - 1], (3, 3), (2, 2), (1, 1), 1)
            x = g.add(f"tower_{side}.conv{i}", "conv", x, params, spec)
            out_name = f"rep_{side}" if i == n_stages else f"tower_{side}.relu{i}"
            x = g.add(out_name, "relu", x)

    g.add("pair", "concat", ("rep_a", "rep_b"))
    branch_maps = []
    for i, rate in enumerate(config.pyramid_rates, start=1):
        params = _add_conv(store, rng, f"theta2.branch{i}", 2 * config.rep_channels,
                           config.branch_out_channels, config.pyramid_kernel)
        spec = ops.ConvSpec(config.branch_out_channels, config.pyramid_kernel, (1, 1),
                            ops.same_padding(config.pyramid_kernel, rate), rate)
        g.add(f"branch{i}.conv", "conv", "pair", params, spec)
        branch_maps.append(g.add(f"S_{i}", "relu", f"branch{i}.conv"))

    g.add("branches", "concat", tuple(branch_maps))
    params = _add_conv(store, rng, "theta3", len(branch_maps) * config.branch_out_channels,
                       config.fusion_out_channels, (1, 1))
    g.add("fusion.conv", "conv", "branches", params, ops.ConvSpec(config.fusion_out_channels, (1, 1)))
    g.add("fusion", "relu", "fusion.conv")
    g.add("final", "maxpool", "fusion", spec=(config.pool_window, config.pool_stride))

    fh, fw = config.final_size
    params = _add_fc(store, rng, "theta4.fc1", config.fusion_out_channels * fh * fw, config.fc_hidden)
    g.add("head.fc1", "fc", "final", params)
    g.add("head.relu", "relu", "head.fc1")
    params = _add_fc(store, rng, "theta4.fc2", config.fc_hidden, 2, scale=LOGIT_INIT_SCALE)
    g.add("logits", "fc", "head.relu", params)
    g.add("prob", "softmax-pair", "logits")
    return PPMN(config, g)


def shape_trace(config):
    """Shape calculus of the main tensors for a single pair, without computing anything."""
    h, w = config.input_size
    trace = {"image": (3, h, w)}
    for i, c in enumerate(config.stage_channels, start=1):
        h, w = (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
        trace[f"stage{i}"] = (c, h, w)
    trace["rep"] = (config.rep_channels, h, w)
    trace["pair"] = (2 * config.rep_channels, h, w)
    for i, rate in enumerate(config.pyramid_rates, start=1):
        spec = ops.ConvSpec(config.branch_out_channels, config.pyramid_kernel, 1,
                            ops.same_padding(config.pyramid_kernel, rate), rate)
        trace[f"S_{i}"] = (config.branch_out_channels,) + spec.output_size(h, w)
    trace["fusion"] = (config.fusion_out_channels, h, w)
    trace["final"] = (config.fusion_out_channels,) + config.final_size
    trace["logits"] = (2,)
    return trace


def gradcheck_groups(model, seed=0, n_pairs=2, max_coords=64):
    """Finite-difference check of the pair loss on random images, per parameter group.

    Returns {group: max relative error over its sampled coordinates}.
    """
    from .netgraph import grad_check
    from .trainer import pair_loss_and_grad

    rng = np.random.default_rng([seed, 7])
    shape = (n_pairs, 3) + model.config.input_size
    feeds = {"image_a": rng.uniform(0, 1, shape), "image_b": rng.uniform(0, 1, shape)}
    labels = np.arange(n_pairs) % 2

    def objective(outputs):
        loss, grad = pair_loss_and_grad(outputs["logits"], labels)
        return loss, {"logits": grad.reshape(-1, 2, 1, 1)}

    errs = grad_check(model.graph, feeds, objective=objective, outputs=["logits"],
                      max_coords=max_coords, seed=seed)
    return {group: max(errs[n] for n in names) for group, names in model.param_groups().items()}
