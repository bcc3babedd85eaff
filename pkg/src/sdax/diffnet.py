"""Small feed-forward networks with exact reverse-mode gradients.

Parameters live in one flat float64 vector so that gradients of different
networks (or of the same network at two parameter settings) can be compared
with plain dot products.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "elu", "relu", "identity")


class ConfigError(ValueError):
    """Raised for shape or configuration mismatches."""


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "elu":
        out = np.maximum(x, 0.0)
        neg = np.minimum(x, 0.0)
        np.expm1(neg, out=neg)
        out += neg
        return out
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _dact(name, pre, post):
    # derivative expressed through the pre-activation and the cached output
    if name == "tanh":
        return 1.0 - post * post
    if name == "elu":
        return np.where(pre > 0, 1.0, post + 1.0)
    if name == "relu":
        return (pre > 0).astype(np.float64)
    return np.ones_like(pre)


def mlp_specs(in_dim, hidden, out_dim, activation, out_activation="identity"):
    """Layer specs for a plain MLP: hidden layers share one activation."""
    dims = [in_dim, *hidden, out_dim]
    specs = []
    for i in range(len(dims) - 1):
        act = activation if i < len(dims) - 2 else out_activation
        specs.append(LayerSpec(dims[i], dims[i + 1], act))
    return specs


@dataclass
class ParamVector:
    """Flat parameter array plus the (weight, bias) slices of each layer."""

    values: np.ndarray
    layout: list = field(default_factory=list)

    @classmethod
    def zeros(cls, specs):
        layout, offset = [], 0
        for spec in specs:
            w = slice(offset, offset + spec.in_dim * spec.out_dim)
            offset = w.stop
            b = slice(offset, offset + spec.out_dim)
            offset = b.stop
            layout.append((w, b))
        return cls(np.zeros(offset), layout)

    def __len__(self):
        return self.values.size

    def to_dict(self):
        return {
            "values": self.values.tolist(),
            "layout": [[w.start, w.stop, b.start, b.stop] for w, b in self.layout],
        }

    @classmethod
    def from_dict(cls, d):
        layout = [(slice(a, b), slice(c, e)) for a, b, c, e in d["layout"]]
        return cls(np.asarray(d["values"], dtype=np.float64), layout)


class MLP:
    """Affine + activation stack over a flat parameter vector.

    ``forward`` accepts a single vector or a batch (rows are samples) and
    returns the output together with the activation cache that ``backward``
    needs.  ``backward`` returns d(sum_n cot_n . y_n)/d(params); with
    ``per_sample=True`` the per-row gradients are returned instead.
    """

    def __init__(self, specs, params=None):
        specs = list(specs)
        if not specs:
            raise ConfigError("an MLP needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigError(f"layer chain mismatch: {a.out_dim} -> {b.in_dim}")
        self.specs = specs
        pv = ParamVector.zeros(specs)
        self.layout = pv.layout
        self.n_params = len(pv)
        if params is None:
            params = pv.values
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params

    @property
    def in_dim(self):
        return self.specs[0].in_dim

    @property
    def out_dim(self):
        return self.specs[-1].out_dim

    def init(self, rng, gain=np.sqrt(2.0), final_scale=1.0):
        """Orthogonal init scaled by ``gain``; last layer additionally by ``final_scale``."""
        p = np.zeros(self.n_params)
        for i, (spec, (ws, _)) in enumerate(zip(self.specs, self.layout)):
            a = rng.standard_normal((max(spec.out_dim, spec.in_dim), min(spec.out_dim, spec.in_dim)))
            q, r = np.linalg.qr(a)
            q = q * np.sign(np.diag(r))
            if spec.out_dim < spec.in_dim:
                q = q.T
            scale = gain * (final_scale if i == len(self.specs) - 1 else 1.0)
            p[ws] = (scale * q).reshape(-1)
        self.params = p
        return p

    def unpack(self, params=None):
        params = self.params if params is None else params
        out = []
        for spec, (ws, bs) in zip(self.specs, self.layout):
            out.append((params[ws].reshape(spec.out_dim, spec.in_dim), params[bs]))
        return out

    def forward(self, x, params=None):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x[None, :] if single else x
        if h.shape[-1] != self.in_dim:
            raise ConfigError(f"input has {h.shape[-1]} features, network expects {self.in_dim}")
        cache = [(h, None)]
        for spec, (W, b) in zip(self.specs, self.unpack(params)):
            pre = h @ W.T + b
            h = _act(spec.activation, pre)
            cache.append((h, pre))
        y = h[0] if single else h
        return y, (single, cache)

    def __call__(self, x, params=None):
        return self.forward(x, params)[0]

    def backward(self, cache, cotangent, params=None, per_sample=False, input_grad=False):
        single, acts = cache
        cot = np.asarray(cotangent, dtype=np.float64)
        if single:
            cot = cot[None, :]
        if cot.shape != acts[-1][0].shape:
            raise ConfigError(f"cotangent shape {cot.shape} != output shape {acts[-1][0].shape}")
        n = cot.shape[0]
        grad = np.zeros((n, self.n_params)) if per_sample else np.zeros(self.n_params)
        weights = self.unpack(params)
        delta = cot
        for k in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[k]
            post, pre = acts[k + 1]
            delta = delta * _dact(spec.activation, pre, post)
            h_in = acts[k][0]
            ws, bs = self.layout[k]
            if per_sample:
                grad[:, ws] = np.einsum("ni,nj->nij", delta, h_in).reshape(n, -1)
                grad[:, bs] = delta
            else:
                grad[ws] = (delta.T @ h_in).reshape(-1)
                grad[bs] = delta.sum(axis=0)
            if k > 0 or input_grad:
                delta = delta @ weights[k][0]
        if per_sample and single:
            grad = grad[0]
        if input_grad:
            dx = delta[0] if single else delta
            return grad, dx
        return grad

    def to_dict(self):
        return {
            "specs": [[s.in_dim, s.out_dim, s.activation] for s in self.specs],
            "params": ParamVector(self.params, self.layout).to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        specs = [LayerSpec(i, o, a) for i, o, a in d["specs"]]
        return cls(specs, ParamVector.from_dict(d["params"]).values)


def save_network(net, path):
    with open(path, "w") as f:
        json.dump({"format": "sdax-mlp", "version": 1, **net.to_dict()}, f)


def load_network(path):
    with open(path) as f:
        d = json.load(f)
    if d.get("format") != "sdax-mlp":
        raise ConfigError(f"{path} is not a network checkpoint")
    return MLP.from_dict(d)


class Adam:
    """Bias-corrected adaptive-moment optimizer (minimizes)."""

    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params, grad, lr):
        """Update ``params`` in place against ``grad`` and return them."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params

    def state_dict(self):
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_state(cls, d):
        opt = cls(len(d["m"]), d["beta1"], d["beta2"], d["eps"])
        opt.m = np.asarray(d["m"], dtype=np.float64)
        opt.v = np.asarray(d["v"], dtype=np.float64)
        opt.t = d["t"]
        return opt


def clip_grad_norm(grad, max_norm):
    norm = float(np.linalg.norm(grad))
    if max_norm is not None and norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm
