"""A (K+1)-way MLP classifier with hand-written reverse-mode gradients.

The last output class is the "OOD" class: its softmax probability is the OOD
score. Class labels are 1-based throughout (1..K for in-distribution
classes, K+1 for outliers) to match the dataset files; index arithmetic
converts internally.

Weights are stored as (fan_in, fan_out) matrices so a layer is
``act(x @ W + b)`` with rows as samples.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import generator, normal

LOG_FLOOR = -50.0
ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpModel:
    layer_dims: tuple
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = tuple(int(v) for v in self.layer_dims)
        if len(self.layer_dims) < 2 or self.layer_dims[-1] < 2:
            raise ValueError("need an input width and an output width >= 2")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {i}: expected weight {shape}, got {w.shape}")

    @property
    def num_classes(self):
        """K, the number of in-distribution classes."""
        return self.layer_dims[-1] - 1

    @property
    def input_dim(self):
        return self.layer_dims[0]

    def copy(self):
        return MlpModel(self.layer_dims, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.activation)

    def params(self):
        return self.weights + self.biases


@dataclass
class GradBundle:
    loss: float
    weights: list
    biases: list = field(default_factory=list)

    def params(self):
        return self.weights + self.biases


def init_mlp(layer_dims, activation="relu", seed=0):
    """He-scaled Gaussian weights (std sqrt(2 / fan_in)), zero biases."""
    rng = generator(seed, 21)
    dims = tuple(int(v) for v in layer_dims)
    weights = [normal(rng, (a, b)) * np.sqrt(2.0 / a) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return MlpModel(dims, weights, biases, activation)


def zero_mlp(layer_dims, activation="relu"):
    dims = tuple(int(v) for v in layer_dims)
    return MlpModel(dims, [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                    [np.zeros(b) for b in dims[1:]], activation)


def _act(model, z):
    return np.maximum(z, 0.0) if model.activation == "relu" else np.tanh(z)


def _act_grad(model, z, a):
    return (z > 0).astype(z.dtype) if model.activation == "relu" else 1.0 - a * a


def _as_rows(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x[None, :] if single else x
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input width {x.shape[1]} != model input width {model.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x, single


def _forward(model, x):
    acts, pre = [x], []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = _act(model, z)
            acts.append(h)
        else:
            h = z
    return h, acts, pre


def _backward(model, acts, pre, dlogits, want_input=False):
    dws, dbs = [None] * len(model.weights), [None] * len(model.weights)
    delta = dlogits
    for i in range(len(model.weights) - 1, -1, -1):
        dws[i] = acts[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        if i > 0 or want_input:
            delta = delta @ model.weights[i].T
            if i > 0:
                delta = delta * _act_grad(model, pre[i - 1], acts[i])
    return dws, dbs, (delta if want_input else None)


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


INFER_CHUNK = 1024


def _infer(model, x):
    # fixed-size row chunks keep the activations cache-resident on large inputs
    if len(x) <= INFER_CHUNK:
        return _forward(model, x)[0]
    return np.concatenate([_forward(model, x[i:i + INFER_CHUNK])[0]
                           for i in range(0, len(x), INFER_CHUNK)])


def logits(model, x):
    x, single = _as_rows(model, x)
    out = _infer(model, x)
    return out[0] if single else out


def forward_softmax(model, x):
    """Softmax probabilities over the K+1 outputs (row-wise for matrices)."""
    x, single = _as_rows(model, x)
    p = softmax(_infer(model, x))
    return p[0] if single else p


def _check_labels(model, labels, n):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 1 and n > 1:
        labels = np.full(n, labels[0])
    if labels.size != n:
        raise ValueError("one label per row required")
    if np.any(labels < 1) or np.any(labels > model.num_classes + 1):
        raise ValueError(f"labels must lie in 1..{model.num_classes + 1}")
    return labels - 1


def _ce_terms(model, x, labels):
    out, acts, pre = _forward(model, x)
    logp = log_softmax(out)
    rows = np.arange(len(x))
    # the floor caps the reported loss only; the gradient stays the exact
    # CE gradient so saturated rows keep being corrected
    per_row = -np.maximum(logp[rows, labels], LOG_FLOOR)
    dlogits = np.exp(logp)
    dlogits[rows, labels] -= 1.0
    return per_row, dlogits, acts, pre


def loss_grad(model, batch, labels=None, weights=None):
    """Cross-entropy and exact parameter gradients.

    ``batch`` is a SampleBatch with labels, or a point matrix with ``labels``
    given separately. Rows are weighted by ``weights`` (default: the mean,
    1/n each). Log-probabilities are floored at -50 in the reported loss;
    gradients are those of the unfloored CE (identical unless a row is
    saturated beyond the floor).
    """
    if labels is None:
        points, labels = batch.points, batch.labels
        if labels is None:
            raise ValueError("batch has no labels")
    else:
        points = batch
    x, _ = _as_rows(model, points)
    y = _check_labels(model, labels, len(x))
    n = len(x)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    per_row, dlogits, acts, pre = _ce_terms(model, x, y)
    dws, dbs, _ = _backward(model, acts, pre, dlogits * w[:, None])
    return GradBundle(float(per_row @ w), dws, dbs)


def input_grad_from_logits(model, x, dlogits_fn):
    """Per-row gradient of a per-row objective w.r.t. the inputs.

    ``dlogits_fn(logits)`` returns (objective per row, d objective / d logits).
    """
    x, single = _as_rows(model, x)
    out, acts, pre = _forward(model, x)
    value, dlogits = dlogits_fn(out)
    _, _, dx = _backward(model, acts, pre, dlogits, want_input=True)
    return (value[0], dx[0]) if single else (value, dx)


def grad_wrt_input(model, x, label):
    """d CE(x_i, label_i) / d x_i for each row (no averaging over rows)."""
    x, single = _as_rows(model, x)
    y = _check_labels(model, label, len(x))
    per_row, dlogits, acts, pre = _ce_terms(model, x, y)
    _, _, dx = _backward(model, acts, pre, dlogits, want_input=True)
    return dx[0] if single else dx


def sgd_step(model, grads, lr, momentum=0.9, weight_decay=0.0, velocity=None, nesterov=True):
    """One SGD step; returns (new_model, new_velocity).

    With g = grad + weight_decay * theta and v <- momentum * v + g, the update
    is theta <- theta - lr * (g + momentum * v) (Nesterov) or
    theta <- theta - lr * v (heavy ball).
    """
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not 0 <= momentum < 1:
        raise ValueError("momentum must lie in [0, 1)")
    if weight_decay < 0:
        raise ValueError("weight_decay must be nonnegative")
    params = model.params()
    gs = grads.params()
    if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
        raise ValueError("gradient shapes do not match the model")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_params, new_vel = [], []
    for p, g, v in zip(params, gs, velocity):
        if weight_decay:
            g = g + weight_decay * p
        v = momentum * v + g
        step = g + momentum * v if nesterov else v
        new_params.append(p - lr * step)
        new_vel.append(v)
    k = len(model.weights)
    return MlpModel(model.layer_dims, new_params[:k], new_params[k:], model.activation), new_vel


def ood_score(model, x):
    """Softmax probability of the OOD class, F(x)_{K+1}."""
    p = forward_softmax(model, x)
    return p[..., -1]


def predict_label(model, x):
    """argmax over the first K softmax outputs; ties go to the smaller label."""
    p = forward_softmax(model, x)
    return np.argmax(p[..., :-1], axis=-1) + 1


def save_checkpoint(model, path, velocity=None, meta=None):
    """JSON checkpoint; ``meta`` is a dict of extra JSON-safe fields stored under "meta"."""
    obj = {
        "layer_dims": list(model.layer_dims),
        "activation": model.activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }
    if velocity is not None:
        obj["velocity"] = [v.tolist() for v in velocity]
    if meta is not None:
        obj["meta"] = meta
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def checkpoint_meta(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh).get("meta", {})


def load_checkpoint(path, with_velocity=False):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    dims = obj["layer_dims"]
    weights = [np.array(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(obj["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, dtype=np.float64).reshape(-1) for b in obj["biases"]]
    model = MlpModel(dims, weights, biases, obj.get("activation", "relu"))
    if with_velocity:
        vel = obj.get("velocity")
        vel = None if vel is None else [np.array(v, dtype=np.float64).reshape(p.shape)
                                        for v, p in zip(vel, model.params())]
        return model, vel
    return model
