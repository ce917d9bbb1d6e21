"""Small dense networks with learnable activations, trained by hand-written backprop.

Parameters are addressed by flat names::

    layers.{i}.W          weight matrix, shape (C_out, C_in)
    layers.{i}.b          bias vector
    layers.{i}.act.{name} activation parameter shared by every unit of layer i

Weight decay is only ever applied to ``*.W`` entries; activation coefficients
and biases are trained without it.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev

from .activations import ClassicalActivation, HermiteActivation, activation_from_dict
from .errors import ConditioningFailure, NonFiniteLoss, UnsupportedFamily
from .fitting import FitGrid, fit, fit_tropical_rational
from .gains import he_style_weight_std, init_gain, init_theorem


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: object = None


class MlpModel:
    """Stack of affine layers; every layer but the last applies its activation."""

    def __init__(self, layers, input_mean=None, input_std=None):
        self.layers = list(layers)
        self.input_mean = input_mean
        self.input_std = input_std

    @classmethod
    def build(cls, sizes, activation, seed=0):
        """Random network with one copy of ``activation`` per hidden layer.

        ``activation`` is an activation instance (copied per layer) or a
        callable returning a fresh one. Weights are zero-mean normal with std
        ``sqrt(gain / fan_in)``, where ``gain`` belongs to the activation
        applied to the layer's input (1 for the standardized network input).
        Biases start at zero.
        """
        rng = np.random.default_rng(seed)
        make = activation if callable(activation) and not hasattr(activation, "eval") else activation.copy
        layers = []
        gain = 1.0
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            std = he_style_weight_std(fan_in, gain)
            W = std * rng.standard_normal((fan_out, fan_in))
            act = make() if i < len(sizes) - 2 else None
            layers.append(Layer(W, np.zeros(fan_out), act))
            if act is not None:
                gain = init_gain(act)
        return cls(layers)

    @property
    def sizes(self):
        return [self.layers[0].W.shape[1]] + [layer.W.shape[0] for layer in self.layers]

    def forward(self, x):
        """Return ``(output, cache)``; ``x`` is ``(batch, C_in)`` or a single vector."""
        h = np.asarray(x, dtype=np.float64)
        single = h.ndim == 1
        if single:
            h = h[None, :]
        if h.shape[1] != self.layers[0].W.shape[1]:
            raise ValueError(f"input has {h.shape[1]} features, network expects {self.layers[0].W.shape[1]}")
        if self.input_mean is not None:
            h = (h - self.input_mean) / self.input_std
        cache = []
        for layer in self.layers:
            z = h @ layer.W.T + layer.b
            cache.append((h, z))
            h = layer.activation.eval(z) if layer.activation is not None else z
        return (h[0] if single else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Gradients of ``sum(grad_out * output)`` with respect to every parameter."""
        g = np.asarray(grad_out, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        grads = {}
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            h, z = cache[i]
            if layer.activation is not None:
                deriv, pgrads = layer.activation.deriv_and_param_grad(z)
                for name, pg in pgrads.items():
                    grads[f"layers.{i}.act.{name}"] = np.einsum("bc,bcp->p", g, pg)
                g = g * deriv
            grads[f"layers.{i}.W"] = g.T @ h
            grads[f"layers.{i}.b"] = g.sum(axis=0)
            g = g @ layer.W
        return grads

    def parameters(self):
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"layers.{i}.W"] = layer.W
            params[f"layers.{i}.b"] = layer.b
            if layer.activation is not None:
                for name, p in layer.activation.params().items():
                    params[f"layers.{i}.act.{name}"] = p
        return params

    def predict_proba(self, x):
        return softmax(self(x))

    def to_dict(self):
        return {
            "layers": [
                {
                    "W": layer.W.tolist(),
                    "b": layer.b.tolist(),
                    "activation": None if layer.activation is None else layer.activation.to_dict(),
                }
                for layer in self.layers
            ],
            "input_mean": None if self.input_mean is None else np.asarray(self.input_mean).tolist(),
            "input_std": None if self.input_std is None else np.asarray(self.input_std).tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        layers = [
            Layer(np.array(d["W"], dtype=np.float64), np.array(d["b"], dtype=np.float64),
                  None if d["activation"] is None else activation_from_dict(d["activation"]))
            for d in doc["layers"]
        ]
        mean = doc.get("input_mean")
        std = doc.get("input_std")
        return cls(layers, None if mean is None else np.array(mean), None if std is None else np.array(std))

    def copy(self):
        return MlpModel.from_dict(self.to_dict())


def save_checkpoint(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_checkpoint(path):
    with open(path) as fh:
        return MlpModel.from_dict(json.load(fh))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def mean_squared_error(output, target):
    r = output - target
    return float(np.mean(r * r)), 2.0 * r / r.size


def decays(name):
    """True for parameters subject to weight decay (weight matrices only)."""
    return name.endswith(".W")


PARAM_GROUPS = ("hidden", "head", "activations")


def param_group(model, name):
    if ".act." in name:
        return "activations"
    index = int(name.split(".")[1])
    return "head" if index == len(model.layers) - 1 else "hidden"


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 64
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    seed: int = 0
    optimizer: str = "adamw"
    freeze: tuple = ()
    loss: str = "cross_entropy"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"optimizer must be 'adamw' or 'sgd', got {self.optimizer!r}")
        if self.loss not in ("cross_entropy", "mse"):
            raise ValueError(f"loss must be 'cross_entropy' or 'mse', got {self.loss!r}")
        for group in self.freeze:
            if group not in PARAM_GROUPS:
                raise ValueError(f"unknown parameter group {group!r}; expected one of {PARAM_GROUPS}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("invalid training configuration")


class Optimizer:
    """SGD or AdamW with decoupled weight decay restricted to weight matrices."""

    def __init__(self, params, config):
        self.params = params
        self.config = config
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        cfg = self.config
        self.t += 1
        lr, wd = cfg.learning_rate, cfg.weight_decay
        b1, b2 = cfg.betas
        for name, p in self.params.items():
            g = grads[name]
            if cfg.optimizer == "sgd":
                update = g
            else:
                self.m[name] = b1 * self.m[name] + (1 - b1) * g
                self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
                mh = self.m[name] / (1 - b1 ** self.t)
                vh = self.v[name] / (1 - b2 ** self.t)
                update = mh / (np.sqrt(vh) + cfg.eps)
            if wd and decays(name):
                p -= lr * wd * p
            p -= lr * update


@dataclass
class TrainTrace:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)

    @property
    def final_accuracy(self):
        return self.test_acc[-1] if self.test_acc else float("nan")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "test_acc"])
        for e, l, a in zip(self.epochs, self.train_loss, self.test_acc):
            w.writerow([e, f"{l:.17g}", f"{a:.17g}"])
        return buf.getvalue()


def accuracy(model, x, y):
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(model(x), axis=1) == y))


def _loss(model, x, y, kind):
    out, cache = model.forward(x)
    if kind == "mse":
        loss, grad = mean_squared_error(out, y)
    else:
        loss, grad = cross_entropy(out, y)
    return loss, grad, cache


def train(model, dataset, config=None):
    """Minibatch training; returns a per-epoch trace (epoch 0 is the initial state).

    Inputs are standardized with the training-split mean and std, which are
    stored on the model. Parameter groups listed in ``config.freeze`` are
    left untouched.
    """
    config = config or TrainConfig()
    x_tr, y_tr = dataset.x_train, dataset.y_train
    x_te, y_te = dataset.x_test, dataset.y_test
    if model.input_mean is None:
        model.input_mean = x_tr.mean(axis=0)
        model.input_std = x_tr.std(axis=0)
    trainable = {k: v for k, v in model.parameters().items()
                 if param_group(model, k) not in config.freeze}
    opt = Optimizer(trainable, config)
    rng = np.random.default_rng(config.seed)

    trace = TrainTrace()
    loss0, _, _ = _loss(model, x_tr, y_tr, config.loss)
    trace.epochs.append(0)
    trace.train_loss.append(loss0)
    trace.test_acc.append(accuracy(model, x_te, y_te))

    step = 0
    n = len(y_tr)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grad, cache = _loss(model, x_tr[idx], y_tr[idx], config.loss)
            if not math.isfinite(loss):
                raise NonFiniteLoss(step, loss)
            grads = model.backward(cache, grad)
            opt.step(grads)
            total += loss * len(idx)
            step += 1
        trace.epochs.append(epoch)
        trace.train_loss.append(total / n)
        trace.test_acc.append(accuracy(model, x_te, y_te))
    return trace


def decision_grid(model, dataset, resolution=101, margin=0.5):
    """Dense prediction grid over the data's bounding box, as CSV text.

    Columns: ``x,y,predicted_class,class_1_probability``.
    """
    lo = dataset.features.min(axis=0) - margin
    hi = dataset.features.max(axis=0) + margin
    gx = np.linspace(lo[0], hi[0], resolution)
    gy = np.linspace(lo[1], hi[1], resolution)
    xx, yy = np.meshgrid(gx, gy)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    proba = model.predict_proba(pts)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y", "predicted_class", "class_1_probability"])
    for (px, py), p in zip(pts, proba):
        w.writerow([f"{px:.17g}", f"{py:.17g}", int(np.argmax(p)), f"{p[1]:.17g}"])
    return buf.getvalue()


def make_activation(family, degree=None, init="theorem"):
    """Activation for a hidden layer: theorem/unit init, or a fit to a classical target.

    ``init`` is ``"theorem"``, ``"unit"`` or ``"fit:<target>"``.
    """
    family = family.lower()
    if family in ("relu", "gelu", "silu"):
        return ClassicalActivation(family)
    if init in ("theorem", "unit"):
        return init_theorem(family, degree, unit_gain=(init == "unit"))
    if init.startswith("fit:"):
        target = ClassicalActivation(init.split(":", 1)[1])
        if family == "tropical":
            return fit_tropical_rational(target, degree, 0, FitGrid()).activation
        return fit(target, family, degree, FitGrid(), mode="hermite").activation
    raise ValueError(f"unknown init {init!r}")


@dataclass
class FinetuneResult:
    dataset: str
    source: str
    baseline_accuracy: float
    learnable_accuracy: float
    baseline_trace: TrainTrace
    learnable_trace: TrainTrace

    @property
    def improved(self):
        return self.learnable_accuracy > self.baseline_accuracy


SOURCE_FOR = {"moons": "blobs", "circles": "blobs", "blobs": "moons"}


def finetune(target, family="hermite", degree=3, source=None, width=8, pretrain_epochs=100,
             epochs=200, seed=0, learning_rate=1e-2):
    """Transfer protocol: pretrain a GELU network, then adapt it with frozen hidden weights.

    The GELU network is pretrained on ``source`` (by default a different toy
    dataset). Two copies are then fine-tuned on ``target`` with all hidden
    weights frozen and a freshly initialized output layer:

    * baseline: GELU kept, only the output layer is trained;
    * learnable: GELU replaced by ``family`` fitted to GELU by value+derivative
      least squares, output layer and activation coefficients trained.
    """
    source = source or SOURCE_FOR.get(target.name, "moons")
    src = source if hasattr(source, "x_train") else None
    if src is None:
        from .data import generate
        src = generate(source, len(target), target.noise, target.seed + 1000)
    model = MlpModel.build([2, width, 2], ClassicalActivation("gelu"), seed=seed)
    train(model, src, TrainConfig(epochs=pretrain_epochs, seed=seed, learning_rate=learning_rate))

    head_rng = np.random.default_rng(seed + 1)
    head_W = he_style_weight_std(width, init_gain(ClassicalActivation("gelu"))) * head_rng.standard_normal((2, width))

    def adapted(activation):
        m = model.copy()
        m.input_mean = m.input_std = None
        m.layers[-1].W[:] = head_W
        m.layers[-1].b[:] = 0.0
        for layer in m.layers[:-1]:
            layer.activation = activation.copy()
        return m

    cfg = TrainConfig(epochs=epochs, seed=seed, learning_rate=learning_rate, freeze=("hidden",))
    base = adapted(ClassicalActivation("gelu"))
    base_cfg = TrainConfig(epochs=epochs, seed=seed, learning_rate=learning_rate,
                           freeze=("hidden", "activations"))
    base_trace = train(base, target, base_cfg)
    learn = adapted(make_activation(family, degree, "fit:gelu"))
    learn_trace = train(learn, target, cfg)
    return FinetuneResult(target.name, getattr(src, "name", str(source)),
                          base_trace.final_accuracy, learn_trace.final_accuracy,
                          base_trace, learn_trace)


def polynomial_network(layers, degree, width=4, in_dim=2, out_dim=1, seed=0):
    """Network with ``layers`` Hermite-activated hidden layers of polynomial degree ``degree``."""
    return MlpModel.build([in_dim] + [width] * layers + [out_dim], init_theorem("hermite", degree), seed=seed)


@dataclass
class PolymapReport:
    layers: int
    degree_bound: int
    effective_degree: int
    max_rel_error: float
    tol: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tol and self.effective_degree <= self.degree_bound

    def summary(self):
        return f"bound {self.degree_bound}: {'PASS' if self.passed else 'FAIL'}"


def verify_polynomial_mapping(model, direction, degree_bound, t_range=(-1.0, 1.0), held_out=100,
                              tol=1e-6, seed=0):
    """Check that ``t -> model(t * direction)`` is a polynomial of degree ``degree_bound``.

    The network is sampled at ``degree_bound + 1`` Chebyshev nodes and the
    unique interpolating polynomial is compared against the network at
    ``held_out`` random points. The effective degree is read off a separate
    oversampled Chebyshev fit of degree ``degree_bound + 4``.
    """
    for layer in model.layers:
        if layer.activation is not None and not isinstance(layer.activation, HermiteActivation):
            raise UnsupportedFamily("polynomial mapping check needs Hermite (polynomial) activations")
    direction = np.asarray(direction, dtype=np.float64)
    lo, hi = map(float, t_range)
    if not hi > lo or not np.any(direction):
        raise ConditioningFailure("need a non-empty t range and a non-zero direction")
    bound = int(degree_bound)

    def line(t):
        return model(np.outer(t, direction))

    def cheb_nodes(m):
        k = np.arange(m)
        u = np.cos((2 * k + 1) * np.pi / (2 * m))
        return lo + (hi - lo) * (u + 1) / 2

    def to_unit(t):
        return 2 * (t - lo) / (hi - lo) - 1

    nodes = cheb_nodes(bound + 1)
    if np.min(np.diff(np.sort(nodes))) < 1e-12 * (hi - lo):
        raise ConditioningFailure("interpolation nodes are too clustered")
    coef = chebyshev.chebfit(to_unit(nodes), line(nodes), bound)

    t_test = np.random.default_rng(seed).uniform(lo, hi, held_out)
    y_test = line(t_test)
    pred = chebyshev.chebval(to_unit(t_test), coef).T
    scale = max(np.max(np.abs(y_test)), np.finfo(float).tiny)
    err = float(np.max(np.abs(pred - y_test)) / scale)

    over = cheb_nodes(bound + 5)
    c_over = np.abs(chebyshev.chebfit(to_unit(over), line(over), bound + 4))
    mags = c_over.max(axis=1) if c_over.ndim == 2 else c_over
    significant = np.flatnonzero(mags > 1e-8 * mags.max())
    effective = int(significant[-1]) if significant.size else 0

    layers = sum(layer.activation is not None for layer in model.layers)
    return PolymapReport(layers, bound, effective, err, tol)
