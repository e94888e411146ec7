"""GCN / SAGE / dense layers, the encoder stack, cross-entropy and Adam."""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DegenerateInputError, InvalidArgumentError, ParseError

LAYER_KINDS = ("gcn", "sage", "dense")
CHECKPOINT_FORMAT = "krgnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class LayerParams:
    weight: ad.DiffValue
    bias: ad.DiffValue
    kind: str = "dense"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidArgumentError(f"layer kind must be one of {LAYER_KINDS}, got {self.kind!r}")
        w, b = self.weight.value, self.bias.value
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise InvalidArgumentError(f"inconsistent layer shapes: weight {w.shape}, bias {b.shape}")
        if self.kind == "sage" and w.shape[0] % 2:
            raise InvalidArgumentError("sage weight must stack self and neighbour halves")

    @property
    def in_dim(self):
        return self.weight.shape[0] // 2 if self.kind == "sage" else self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def parameters(self):
        return [self.weight, self.bias]


def init_layer(in_dim, out_dim, kind, rng):
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rows = 2 * in_dim if kind == "sage" else in_dim
    bound = 1.0 / np.sqrt(rows)
    w = rng.uniform(-bound, bound, size=(rows, out_dim))
    b = rng.uniform(-bound, bound, size=out_dim)
    return LayerParams(ad.param(w), ad.param(b), kind)


@dataclass
class EncoderState:
    layers: list
    activation: str = "elu"
    dropout: float = 0.0

    def __post_init__(self):
        ad.activation(self.activation)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise InvalidArgumentError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def depth(self):
        return len(self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


def init_encoder(in_dim, hidden_dims, kind, rng, activation="elu", dropout=0.0):
    dims = [in_dim, *hidden_dims]
    layers = [init_layer(a, b, kind, rng) for a, b in zip(dims, dims[1:])]
    return EncoderState(layers, activation, dropout)


def init_mlp(dims, rng):
    return [init_layer(a, b, "dense", rng) for a, b in zip(dims, dims[1:])]


def _check_rows(h, mat, what):
    if mat.shape != (h.shape[0], h.shape[0]):
        raise InvalidArgumentError(f"{what} has shape {mat.shape}, expected {(h.shape[0],) * 2}")


def _affine(h, params):
    if h.shape[1] != params.weight.shape[0]:
        raise InvalidArgumentError(
            f"input width {h.shape[1]} does not match weight rows {params.weight.shape[0]}")
    return ad.add(ad.matmul(h, params.weight), params.bias)


def dense_layer(h, params, activation="identity"):
    h = ad.as_diff(h)
    return ad.activation(activation)(_affine(h, params))


def gcn_layer(h, a_norm, params, activation="identity"):
    """activation(A_norm @ H @ W + b)."""
    h = ad.as_diff(h)
    a_norm = np.asarray(a_norm, dtype=np.float64)
    _check_rows(h, a_norm, "a_norm")
    return ad.activation(activation)(_affine(ad.matmul(a_norm, h), params))


def sage_layer(h, a_mean, params, activation="identity"):
    """activation([H, A_mean @ H] @ W + b)."""
    h = ad.as_diff(h)
    a_mean = np.asarray(a_mean, dtype=np.float64)
    _check_rows(h, a_mean, "a_mean")
    return ad.activation(activation)(_affine(ad.concat_cols([h, ad.matmul(a_mean, h)]), params))


def dropout(h, rate, rng):
    if rate <= 0 or rng is None:
        return h
    keep = (rng.random(h.shape) >= rate) / (1.0 - rate)
    return ad.mul_const(h, keep)


def encoder_forward(encoder, x, a_norm=None, a_mean=None, rng=None):
    """Return [H^0, H^1, ..., H^d]; H^0 is the input itself.

    ``rng`` enables dropout (training only) when the encoder has a rate set.
    """
    act = encoder.activation
    hs = [ad.as_diff(x)]
    for params in encoder.layers:
        h = dropout(hs[-1], encoder.dropout, rng) if len(hs) > 1 else hs[-1]
        if params.kind == "gcn":
            out = gcn_layer(h, a_norm, params, act)
        elif params.kind == "sage":
            out = sage_layer(h, a_mean, params, act)
        else:
            out = dense_layer(h, params, act)
        hs.append(out)
    return hs


def mlp_forward(h, layers, activation="relu"):
    """Dense stack; every layer except the last is followed by ``activation``."""
    out = ad.as_diff(h)
    for i, params in enumerate(layers):
        out = dense_layer(out, params, activation if i < len(layers) - 1 else "identity")
    return out


def cross_entropy(logits, labels, mask=None):
    """Mean over masked rows of -log softmax(logits)[label]."""
    logits = ad.as_diff(logits)
    z = logits.value
    n, c = z.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise InvalidArgumentError(f"labels must have length {n}, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InvalidArgumentError(f"labels must lie in [0, {c})")
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise DegenerateInputError("cross-entropy over an empty mask")
    shifted = z[rows] - z[rows].max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    picked = labels[rows]
    value = -logp[np.arange(rows.size), picked].mean()

    def vjp(g):
        soft = np.exp(logp)
        soft[np.arange(rows.size), picked] -= 1.0
        out = np.zeros_like(z)
        out[rows] = soft * (float(g) / rows.size)
        return (out,)

    return ad.make_node(np.float64(value), (logits,), vjp, "cross_entropy")


def accuracy(logits, labels, mask=None):
    z = logits.value if isinstance(logits, ad.DiffValue) else np.asarray(logits)
    labels = np.asarray(labels)
    mask = np.ones(len(labels), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float(np.mean(z[mask].argmax(axis=1) == labels[mask]))


@dataclass
class Adam:
    """Adam with bias correction; state is keyed by parameter position."""

    params: list
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            p.value, self.m[i], self.v[i] = adam_step(
                p.value, p.grad, self.m[i], self.v[i], self.t,
                self.lr, self.betas, self.eps, self.weight_decay)


def adam_step(value, grad, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One Adam update for a single array; returns (value, m, v)."""
    b1, b2 = betas
    if weight_decay:
        grad = grad + weight_decay * value
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return value - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def param_checksum(params):
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


# Checkpoint container: JSON with named, shaped, row-major float arrays.
#   {"format": "krgnn-checkpoint", "version": 1, "meta": {...},
#    "arrays": {"encoder.0.weight": {"shape": [r, c], "data": [...]}, ...}}
# Floats are written with repr precision, so values round-trip exactly.

def _pack(arrays):
    return {name: {"shape": list(a.shape), "data": a.ravel().tolist()} for name, a in arrays.items()}


def save_checkpoint(path, encoder, decoder=None, meta=None):
    arrays, layout = {}, {"encoder": [], "decoder": []}
    for i, layer in enumerate(encoder.layers):
        arrays[f"encoder.{i}.weight"] = layer.weight.value
        arrays[f"encoder.{i}.bias"] = layer.bias.value
        layout["encoder"].append(layer.kind)
    for i, layer in enumerate(decoder or []):
        arrays[f"decoder.{i}.weight"] = layer.weight.value
        arrays[f"decoder.{i}.bias"] = layer.bias.value
        layout["decoder"].append(layer.kind)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "layout": layout,
        "activation": encoder.activation,
        "dropout": encoder.dropout,
        "arrays": _pack(arrays),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_checkpoint(path):
    """Return (encoder, decoder_layers, meta)."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not a JSON checkpoint: {exc.msg}", path, exc.lineno) from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a krgnn checkpoint", path)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {doc.get('version')}", path)
    arrays = {
        name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["arrays"].items()
    }

    def build(prefix, kinds):
        return [
            LayerParams(ad.param(arrays[f"{prefix}.{i}.weight"]),
                        ad.param(arrays[f"{prefix}.{i}.bias"]), kind)
            for i, kind in enumerate(kinds)
        ]

    encoder = EncoderState(build("encoder", doc["layout"]["encoder"]),
                           doc.get("activation", "elu"), doc.get("dropout", 0.0))
    return encoder, build("decoder", doc["layout"]["decoder"]), doc.get("meta", {})
