"""GIRL self-supervised training, KR-regularized supervised training and
downstream evaluation on frozen encoders."""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .graph import mean_adjacency, normalized_adjacency, sample_neighbors, split_masks
from .kernel import KernelConfig, kr_loss_exact, kr_loss_ridge
from .nn import (Adam, LAYER_KINDS, accuracy, cross_entropy, encoder_forward,
                 init_encoder, init_mlp, mlp_forward, param_checksum)
from .errors import InvalidArgumentError

# Independent random streams derived from the run seed.
STREAMS = {"init": 0, "decoder": 1, "neighbors": 2, "subsample": 3,
           "dropout": 4, "batches": 5, "eval": 6, "split": 7}


def stream(seed, name):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[name],)))


@dataclass(frozen=True)
class TrainConfig:
    layer: str = "gcn"
    depth: int = 2
    hidden: int = 32
    activation: str = "elu"
    lr: float = 0.01
    epochs: int = 100
    kr: KernelConfig = field(default_factory=KernelConfig)
    lambda_reg: float = 0.0
    n_kr: int = 256
    batch_size: int = 0
    seed: int = 0
    detach_targets: bool = False
    dropout: float = 0.0
    weight_decay: float = 0.0
    decoder_hidden: int = 32
    decoder_layers: int = 2
    eval_epochs: int = 200
    eval_lr: float = 0.01
    split: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if self.layer not in LAYER_KINDS:
            raise InvalidArgumentError(f"layer must be one of {LAYER_KINDS}, got {self.layer!r}")
        if self.depth < 1:
            raise InvalidArgumentError(f"depth must be >= 1, got {self.depth}")
        if self.hidden < 1 or self.decoder_hidden < 1 or self.decoder_layers < 1:
            raise InvalidArgumentError("hidden widths and decoder_layers must be positive")
        if self.n_kr < 2:
            raise InvalidArgumentError(f"n_kr must be >= 2, got {self.n_kr}")
        if self.lambda_reg < 0:
            raise InvalidArgumentError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.lr < 0 or self.eval_lr < 0 or self.epochs < 0 or self.eval_epochs < 0:
            raise InvalidArgumentError("learning rates and epoch counts must be nonnegative")
        if not 0 <= self.dropout < 1:
            raise InvalidArgumentError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.weight_decay and self.lambda_reg:
            raise InvalidArgumentError("weight_decay is only supported with lambda_reg = 0")

    @property
    def hidden_dims(self):
        return [self.hidden] * self.depth

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["split"] = list(self.split)
        return d


@dataclass
class LayerLossReport:
    epoch: int
    self_terms: list
    neighbor_terms: list

    @property
    def per_layer(self):
        return [a + b for a, b in zip(self.self_terms, self.neighbor_terms)]

    @property
    def total(self):
        return float(sum(self.per_layer))


def build_encoder(in_dim, cfg):
    return init_encoder(in_dim, cfg.hidden_dims, cfg.layer, stream(cfg.seed, "init"),
                        cfg.activation, cfg.dropout)


def build_decoder(in_dim, n_classes, cfg, layers=None, name="decoder"):
    layers = cfg.decoder_layers if layers is None else layers
    dims = [in_dim] + [cfg.decoder_hidden] * (layers - 1) + [n_classes]
    return init_mlp(dims, stream(cfg.seed, name))


def graph_operators(g, encoder):
    kinds = {layer.kind for layer in encoder.layers}
    return (normalized_adjacency(g) if "gcn" in kinds else None,
            mean_adjacency(g) if "sage" in kinds else None)


def embed(g, encoder, ops=None):
    """Final-layer representations as a plain array (no tape kept)."""
    a_norm, a_mean = ops if ops is not None else graph_operators(g, encoder)
    return encoder_forward(encoder, g.features, a_norm, a_mean)[-1].value


def subsample_index(n, n_kr, rng):
    if n <= n_kr:
        return np.arange(n)
    return np.sort(rng.choice(n, size=n_kr, replace=False))


def _take(a, idx):
    return ad.gather_rows(a, idx) if isinstance(a, ad.DiffValue) else np.asarray(a)[idx]


def kr_subsample(h, companions, n_kr, rng):
    """Apply one uniformly drawn row subset of size ``n_kr`` to ``h`` and every
    companion (DiffValues or arrays). Returns ``(h_sub, [companions_sub])``;
    inputs with at most ``n_kr`` rows come back untouched."""
    n = h.shape[0]
    if n <= n_kr:
        return h, list(companions)
    idx = subsample_index(n, n_kr, rng)
    return _take(h, idx), [_take(c, idx) for c in companions]


def _batches(n, batch_size, rng):
    if batch_size <= 0 or batch_size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [np.sort(perm[i:i + batch_size]) for i in range(0, n, batch_size)]


def girl_loss(g, encoder, cfg, nodes, ops, nbr_rng, sub_rng, drop_rng=None):
    """Sum over layers of rho(H^(l-1)|H^(l)) + rho(Z^(l-1)|H^(l)) on ``nodes``.

    Returns ``(loss, self_terms, neighbor_terms)`` where the term lists hold
    the DiffValue scalars whose total is ``loss``.
    """
    a_norm, a_mean = ops
    hs = encoder_forward(encoder, g.features, a_norm, a_mean, rng=drop_rng)
    self_terms, nbr_terms = [], []
    for layer in range(1, len(hs)):
        target = hs[layer - 1].detach() if cfg.detach_targets else hs[layer - 1]
        z_idx = sample_neighbors(g, nbr_rng, nodes)
        h_rows = ad.gather_rows(hs[layer], nodes)
        prev_rows = ad.gather_rows(target, nodes)
        z_rows = ad.gather_rows(target, z_idx)
        h_s, (prev_s, z_s) = kr_subsample(h_rows, [prev_rows, z_rows], cfg.n_kr, sub_rng)
        self_terms.append(kr_loss_ridge(h_s, prev_s, cfg.kr))
        nbr_terms.append(kr_loss_ridge(h_s, z_s, cfg.kr))
    return ad.total(self_terms + nbr_terms), self_terms, nbr_terms


def girl_train(g, encoder, cfg):
    """Self-supervised GIRL training, one optimizer step per batch.

    Neighbours are resampled for every layer of every step. Returns the
    (mutated) encoder and one LayerLossReport per epoch, averaged over batches.
    """
    if g.num_nodes < 2:
        raise InvalidArgumentError("GIRL needs at least two nodes")
    ops = graph_operators(g, encoder)
    params = encoder.parameters()
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    nbr_rng, sub_rng = stream(cfg.seed, "neighbors"), stream(cfg.seed, "subsample")
    drop_rng, batch_rng = stream(cfg.seed, "dropout"), stream(cfg.seed, "batches")
    reports = []
    for epoch in range(cfg.epochs):
        self_acc = np.zeros(encoder.depth)
        nbr_acc = np.zeros(encoder.depth)
        batches = _batches(g.num_nodes, cfg.batch_size, batch_rng)
        for nodes in batches:
            loss, s_terms, n_terms = girl_loss(g, encoder, cfg, nodes, ops, nbr_rng, sub_rng, drop_rng)
            ad.backward(loss, params)
            if cfg.lr > 0:
                opt.step()
            self_acc += [float(t.value) for t in s_terms]
            nbr_acc += [float(t.value) for t in n_terms]
        reports.append(LayerLossReport(epoch, list(self_acc / len(batches)),
                                       list(nbr_acc / len(batches))))
    return encoder, reports


def ensure_masks(g, cfg):
    return g if g.has_masks else split_masks(g, cfg.split, int(stream(cfg.seed, "split").integers(2**31)))


def _require_labels(g):
    if g.labels is None:
        raise InvalidArgumentError("this operation needs node labels")


def supervised_train(g, encoder, decoder, cfg):
    """Minimize mean CE on the train mask plus lambda_reg * sum_l rho(Y|H^(l)).

    Y is one-hot, the KR terms use train-mask nodes only (subsampled to
    n_kr rows, shared across layers within an epoch). With lambda_reg = 0
    no KR work is done and no extra randomness is consumed.
    Returns ``((encoder, decoder), trace)`` where trace rows are
    ``(epoch, split, metric, value)``.
    """
    _require_labels(g)
    g = ensure_masks(g, cfg)
    ops = graph_operators(g, encoder)
    n_classes = max(g.num_classes, decoder[-1].out_dim)
    onehot = np.eye(n_classes)[g.labels]
    train_rows = np.flatnonzero(g.train_mask)
    params = encoder.parameters() + [p for layer in decoder for p in layer.parameters()]
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    drop_rng, sub_rng = stream(cfg.seed, "dropout"), stream(cfg.seed, "subsample")
    trace = []
    for epoch in range(cfg.epochs):
        hs = encoder_forward(encoder, g.features, *ops, rng=drop_rng)
        logits = mlp_forward(hs[-1], decoder, cfg.activation)
        ce = cross_entropy(logits, g.labels, g.train_mask)
        loss = ce
        kr_value = 0.0
        if cfg.lambda_reg > 0:
            idx = train_rows[subsample_index(train_rows.size, cfg.n_kr, sub_rng)]
            terms = [kr_loss_ridge(ad.gather_rows(h, idx), onehot[idx], cfg.kr) for h in hs[1:]]
            reg = ad.total(terms)
            kr_value = float(reg.value)
            loss = ad.add(ce, ad.scale(reg, cfg.lambda_reg))
        ad.backward(loss, params)
        opt.step()
        trace.append((epoch, "train", "loss", float(loss.value)))
        trace.append((epoch, "train", "ce", float(ce.value)))
        if cfg.lambda_reg > 0:
            trace.append((epoch, "train", "kr", kr_value))
        trace.extend((epoch, split, "accuracy", acc)
                     for split, acc in split_accuracies(g, encoder, decoder, cfg, ops).items())
    return (encoder, decoder), trace


def split_accuracies(g, encoder, decoder, cfg, ops=None):
    emb = embed(g, encoder, ops)
    logits = mlp_forward(emb, decoder, cfg.activation).value
    return {split: accuracy(logits, g.labels, getattr(g, f"{split}_mask"))
            for split in ("train", "val", "test")}


def kr_diagnostics(g, encoder, cfg, ops=None):
    """Exact rho(Y|H^(l)) per layer on (at most n_kr of) the train nodes."""
    _require_labels(g)
    g = ensure_masks(g, cfg)
    a_norm, a_mean = ops if ops is not None else graph_operators(g, encoder)
    hs = encoder_forward(encoder, g.features, a_norm, a_mean)
    rows = np.flatnonzero(g.train_mask)[: cfg.n_kr]
    onehot = np.eye(max(g.num_classes, 1))[g.labels[rows]]
    return [kr_loss_exact(h.value[rows], onehot, cfg.kr) for h in hs[1:]]


def downstream_eval(g, frozen_encoder, cfg):
    """Train a fresh decoder on frozen encoder outputs; return accuracy per split.

    Embeddings are standardized per column with train-row statistics first.
    The encoder is only read (its parameter checksum is verified unchanged).
    """
    _require_labels(g)
    g = ensure_masks(g, cfg)
    before = param_checksum(frozen_encoder.parameters())
    raw = embed(g, frozen_encoder)
    ref = raw[g.train_mask]
    sd = ref.std(axis=0)
    emb = ad.DiffValue((raw - ref.mean(axis=0)) / np.where(sd > 0, sd, 1.0))
    n_classes = max(g.num_classes, 1)
    decoder = build_decoder(emb.shape[1], n_classes, cfg, name="eval")
    params = [p for layer in decoder for p in layer.parameters()]
    opt = Adam(params, lr=cfg.eval_lr)
    for _ in range(cfg.eval_epochs):
        loss = cross_entropy(mlp_forward(emb, decoder, cfg.activation), g.labels, g.train_mask)
        ad.backward(loss, params)
        opt.step()
    logits = mlp_forward(emb, decoder, cfg.activation).value
    result = {split: accuracy(logits, g.labels, getattr(g, f"{split}_mask"))
              for split in ("train", "val", "test")}
    if param_checksum(frozen_encoder.parameters()) != before:
        raise RuntimeError("downstream evaluation modified the frozen encoder")
    return result
