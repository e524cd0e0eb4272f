"""Recurrent MOS estimator: forward and exact reverse-mode backward passes.

The model is a stack of LSTM layers over a feature timeseries (deeper
layers may consume only every k-th output frame of the layer below), a
max-pool across time, optional rectified-linear hidden layers, and an
output head. Three heads are supported:

* ``scalar``      - one regression value (the MOS estimate),
* ``gaussian``    - sufficient statistics (mu, sigma) of a rating model,
* ``categorical`` - logits over the 9 rating categories.

An optional auxiliary head predicts a learned synthesizer embedding.

All forward passes run batched over padded variable-length sequences with
per-item valid lengths; padded frames never influence outputs or
gradients (state updates are masked and pooling excludes padding).
Reference single-sequence implementations of the cell and layer are kept
alongside the batched engine and the two are tested against each other.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .corpus import CATEGORY_VALUES, CategoryDist, Waveform
from .frontend import (
    FeatureSeq,
    FrontendConfig,
    conv_pool_forward,
    delta_multiplier,
    delta_stack,
    delta_stack_backward,
    gammatone_init,
    prepare_input,
)

HEAD_KINDS = ("scalar", "gaussian", "categorical")
HEAD_WIDTHS = {"scalar": 1, "gaussian": 2, "categorical": 9}
FEED_MODES = ("all", "last")
GATE_ORDER = ("input", "forget", "cell", "output")

WEIGHT_INIT_SCALE = 0.08
FORGET_BIAS_INIT = 1.0
SIGMA_FLOOR = 1e-4

CHECKPOINT_MAGIC = b"AUTOMOS1"


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def categorical_to_mos(dist: CategoryDist) -> float:
    """Expected rating value under a category distribution; lies in [1, 5]."""
    return float(dist.probs @ CATEGORY_VALUES)


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class LstmLayerParams:
    """One LSTM layer: fused gate weights over [x; h] plus fused biases.

    The gate blocks along the last axis are input, forget, cell, output.
    ``stride`` selects every stride-th frame of the layer's input sequence.
    """

    weights: np.ndarray  # (input_size + hidden, 4 * hidden)
    biases: np.ndarray  # (4 * hidden,)
    stride: int = 1

    def __post_init__(self):
        if self.weights.shape[1] % 4 != 0 or self.biases.shape != (self.weights.shape[1],):
            raise ValueError("LSTM gate tensors have inconsistent shapes")
        if not 1 <= self.stride:
            raise ValueError("stride must be >= 1")

    @property
    def hidden_size(self) -> int:
        return self.weights.shape[1] // 4

    @property
    def input_size(self) -> int:
        return self.weights.shape[0] - self.hidden_size

    def gate_weights(self, gate: str) -> np.ndarray:
        """View of one gate's weight block over [x; h]."""
        k = GATE_ORDER.index(gate)
        h = self.hidden_size
        return self.weights[:, k * h : (k + 1) * h]

    def gate_biases(self, gate: str) -> np.ndarray:
        k = GATE_ORDER.index(gate)
        h = self.hidden_size
        return self.biases[k * h : (k + 1) * h]


@dataclass
class ConvFrontendParams:
    """Learned waveform filterbank living inside the network (conv mode)."""

    filters: np.ndarray  # (n_filters, filter_len)
    hop: int
    pool_size: int
    log_floor: float
    deltas: str

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def filter_len(self) -> int:
        return self.filters.shape[1]


@dataclass
class NetworkParams:
    """Every learnable tensor of the model plus its structural layout."""

    lstm_layers: list[LstmLayerParams]
    hidden_layers: list[tuple[np.ndarray, np.ndarray]]  # (weights (in, out), biases)
    head_kind: str
    head_weights: np.ndarray
    head_biases: np.ndarray
    feed_mode: str = "all"
    conv: Optional[ConvFrontendParams] = None
    embedding_head: Optional[tuple[np.ndarray, np.ndarray]] = None
    embedding_table: Optional[np.ndarray] = None

    def __post_init__(self):
        self.validate()

    @property
    def embedding_dim(self) -> int:
        return 0 if self.embedding_table is None else self.embedding_table.shape[1]

    @property
    def pooled_dim(self) -> int:
        widths = [layer.hidden_size for layer in self.lstm_layers]
        return sum(widths) if self.feed_mode == "all" else widths[-1]

    def validate(self) -> None:
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if self.feed_mode not in FEED_MODES:
            raise ValueError(f"unknown feed mode {self.feed_mode!r}")
        if not self.lstm_layers:
            raise ValueError("need at least one LSTM layer")
        if self.lstm_layers[0].stride != 1:
            raise ValueError("layer 0 must have stride 1")
        for k in range(1, len(self.lstm_layers)):
            if self.lstm_layers[k].input_size != self.lstm_layers[k - 1].hidden_size:
                raise ValueError(f"LSTM layer {k} input does not chain")
        expect = self.pooled_dim
        for k, (w, b) in enumerate(self.hidden_layers):
            if w.shape[0] != expect or b.shape != (w.shape[1],):
                raise ValueError(f"hidden layer {k} does not chain")
            expect = w.shape[1]
        if self.head_weights.shape != (expect, HEAD_WIDTHS[self.head_kind]):
            raise ValueError("head weights do not chain")
        if self.head_biases.shape != (HEAD_WIDTHS[self.head_kind],):
            raise ValueError("head biases do not chain")
        if (self.embedding_head is None) != (self.embedding_table is None):
            raise ValueError("embedding head and table must be present together")
        if self.embedding_head is not None:
            ew, eb = self.embedding_head
            d = self.embedding_table.shape[1]
            if ew.shape != (expect, d) or eb.shape != (d,):
                raise ValueError("embedding head does not chain")

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """All learnable tensors in a fixed, checkpoint-stable order."""
        tensors: list[tuple[str, np.ndarray]] = []
        if self.conv is not None:
            tensors.append(("conv/filters", self.conv.filters))
        for k, layer in enumerate(self.lstm_layers):
            tensors.append((f"lstm{k}/w", layer.weights))
            tensors.append((f"lstm{k}/b", layer.biases))
        for k, (w, b) in enumerate(self.hidden_layers):
            tensors.append((f"hidden{k}/w", w))
            tensors.append((f"hidden{k}/b", b))
        tensors.append(("head/w", self.head_weights))
        tensors.append(("head/b", self.head_biases))
        if self.embedding_head is not None:
            ew, eb = self.embedding_head
            tensors.append(("embed_head/w", ew))
            tensors.append(("embed_head/b", eb))
            tensors.append(("embed/table", self.embedding_table))
        return tensors

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.named_tensors()}


def is_weight_tensor(name: str) -> bool:
    """Tensors subject to L1/L2 penalties: weight matrices and conv filters."""
    return name.endswith("/w") or name == "conv/filters"


def init_network_params(
    rng: np.random.Generator,
    *,
    feature_dim: Optional[int] = None,
    lstm_width: int,
    lstm_depth: int,
    stride: int = 1,
    feed_mode: str = "all",
    hidden_width: int = 0,
    hidden_depth: int = 0,
    head_kind: str = "categorical",
    embedding_dim: int = 0,
    n_synthesizers: int = 0,
    conv: Optional[FrontendConfig] = None,
) -> NetworkParams:
    """Fresh parameters: uniform(-0.08, 0.08) weights, zero biases except a
    forget-gate bias of 1, and a unit-Gaussian embedding table scaled by
    1/sqrt(d).

    Pass either ``feature_dim`` (precomputed-feature input) or ``conv``
    (a conv_pool FrontendConfig; filters are created here, from a gammatone
    bank when the config requests it).
    """

    def uniform(shape):
        return rng.uniform(-WEIGHT_INIT_SCALE, WEIGHT_INIT_SCALE, size=shape)

    conv_params = None
    if conv is not None:
        if conv.kind != "conv_pool":
            raise ValueError("conv init requires a conv_pool frontend config")
        if conv.gammatone_init:
            filters = gammatone_init(conv.width, conv.conv_filter_len, fmin=conv.fmin, fmax=conv.fmax)
        else:
            filters = uniform((conv.width, conv.conv_filter_len))
        conv_params = ConvFrontendParams(
            filters=filters,
            hop=conv.hop,
            pool_size=conv.conv_pool_size,
            log_floor=conv.log_floor,
            deltas=conv.deltas,
        )
        feature_dim = conv.width * delta_multiplier(conv.deltas)
    if feature_dim is None:
        raise ValueError("feature_dim is required without a conv frontend")

    lstm_layers = []
    in_dim = feature_dim
    for k in range(lstm_depth):
        biases = np.zeros(4 * lstm_width)
        biases[lstm_width : 2 * lstm_width] = FORGET_BIAS_INIT
        lstm_layers.append(
            LstmLayerParams(
                weights=uniform((in_dim + lstm_width, 4 * lstm_width)),
                biases=biases,
                stride=1 if k == 0 else stride,
            )
        )
        in_dim = lstm_width

    pooled = lstm_width * lstm_depth if feed_mode == "all" else lstm_width
    hidden_layers = []
    in_dim = pooled
    for _ in range(hidden_depth):
        hidden_layers.append((uniform((in_dim, hidden_width)), np.zeros(hidden_width)))
        in_dim = hidden_width

    head_w = uniform((in_dim, HEAD_WIDTHS[head_kind]))
    head_b = np.zeros(HEAD_WIDTHS[head_kind])

    embedding_head = None
    embedding_table = None
    if embedding_dim > 0:
        if n_synthesizers < 1:
            raise ValueError("embedding head requires n_synthesizers >= 1")
        embedding_head = (uniform((in_dim, embedding_dim)), np.zeros(embedding_dim))
        embedding_table = rng.standard_normal((n_synthesizers, embedding_dim)) / np.sqrt(
            embedding_dim
        )

    return NetworkParams(
        lstm_layers=lstm_layers,
        hidden_layers=hidden_layers,
        head_kind=head_kind,
        head_weights=head_w,
        head_biases=head_b,
        feed_mode=feed_mode,
        conv=conv_params,
        embedding_head=embedding_head,
        embedding_table=embedding_table,
    )


# ---------------------------------------------------------------------------
# Reference single-sequence operations
# ---------------------------------------------------------------------------


def lstm_cell_step(
    params: LstmLayerParams, x: np.ndarray, h: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """One LSTM step (no peepholes): returns (h', c')."""
    hid = params.hidden_size
    if x.shape != (params.input_size,) or h.shape != (hid,) or c.shape != (hid,):
        raise ValueError("lstm_cell_step: dimension mismatch")
    a = np.concatenate([x, h]) @ params.weights + params.biases
    i = sigmoid(a[:hid])
    f = sigmoid(a[hid : 2 * hid])
    g = np.tanh(a[2 * hid : 3 * hid])
    o = sigmoid(a[3 * hid :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def lstm_layer_forward(
    params: LstmLayerParams, features: FeatureSeq, stride: Optional[int] = None
) -> FeatureSeq:
    """Run one layer over frames 0, stride, 2*stride, ... of the input.

    Output has ceil(T / stride) frames; initial hidden and cell state are
    zero. This is the sequential reference; training uses the batched
    engine, which is tested to agree with this path.
    """
    stride = params.stride if stride is None else stride
    values = features.values[: features.valid_len]
    taken = values[::stride]
    hid = params.hidden_size
    h = np.zeros(hid)
    c = np.zeros(hid)
    out = np.empty((taken.shape[0], hid))
    for t, x in enumerate(taken):
        h, c = lstm_cell_step(params, x, h, c)
        out[t] = h
    return FeatureSeq(out)


def time_max_pool(features: FeatureSeq) -> np.ndarray:
    """Per-dimension max over the valid frames."""
    return features.values[: features.valid_len].max(axis=0)


def ffn_forward(
    hidden_layers: list[tuple[np.ndarray, np.ndarray]], vec: np.ndarray
) -> np.ndarray:
    """Apply the rectified-linear hidden stack; depth 0 is the identity.

    The output head is a separate affine map applied by the caller.
    """
    out = vec
    for w, b in hidden_layers:
        out = np.maximum(out @ w + b, 0.0)
    return out


# ---------------------------------------------------------------------------
# Batched engine
# ---------------------------------------------------------------------------


@dataclass
class BatchOutputs:
    mos: np.ndarray  # (B,)
    mu: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None  # (B, 9)
    cat_probs: Optional[np.ndarray] = None
    embedding_pred: Optional[np.ndarray] = None  # (B, d)


@dataclass
class HeadGradients:
    """Loss gradients with respect to the head outputs (per batch item)."""

    d_mos: Optional[np.ndarray] = None
    d_mu: Optional[np.ndarray] = None
    d_sigma: Optional[np.ndarray] = None
    d_logits: Optional[np.ndarray] = None
    d_embedding: Optional[np.ndarray] = None


@dataclass
class HeadOutputs:
    """Single-utterance model outputs; mos_point is always populated."""

    mos_point: float
    mu: Optional[float] = None
    sigma: Optional[float] = None
    logits: Optional[np.ndarray] = None
    embedding_pred: Optional[np.ndarray] = None


def _ceil_div(a, b):
    return -(-a // b)


def _lstm_forward_batch(layer: LstmLayerParams, x: np.ndarray, valid: np.ndarray):
    """Masked batched recurrence over x (B, T, D); returns (outputs, valid', cache).

    Output frame t of item b repeats the last valid state once t passes the
    item's valid length, and state updates beyond it are suppressed, so
    padding cannot leak into any valid computation.
    """
    stride = layer.stride
    xs = x[:, ::stride]
    valid_out = _ceil_div(valid, stride)
    n_batch, n_steps, in_dim = xs.shape
    hid = layer.hidden_size
    if in_dim != layer.input_size:
        raise ValueError("LSTM layer input dimension mismatch")
    hs = np.empty((n_batch, n_steps, hid))
    cs = np.empty((n_batch, n_steps, hid))
    gates = np.empty((n_batch, n_steps, 4 * hid))
    h = np.zeros((n_batch, hid))
    c = np.zeros((n_batch, hid))
    u = np.empty((n_batch, in_dim + hid))
    for t in range(n_steps):
        u[:, :in_dim] = xs[:, t]
        u[:, in_dim:] = h
        a = u @ layer.weights + layer.biases
        i = sigmoid(a[:, :hid])
        f = sigmoid(a[:, hid : 2 * hid])
        g = np.tanh(a[:, 2 * hid : 3 * hid])
        o = sigmoid(a[:, 3 * hid :])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        m = (t < valid_out)[:, None]
        h = np.where(m, h_new, h)
        c = np.where(m, c_new, c)
        hs[:, t] = h
        cs[:, t] = c
        gates[:, t, :hid] = i
        gates[:, t, hid : 2 * hid] = f
        gates[:, t, 2 * hid : 3 * hid] = g
        gates[:, t, 3 * hid :] = o
    cache = (xs, hs, cs, gates, valid_out, stride, x.shape[1])
    return hs, valid_out, cache


def _lstm_backward_batch(layer: LstmLayerParams, cache, d_hs: np.ndarray):
    """Backprop through time for one layer; returns (d_input, dW, db)."""
    xs, hs, cs, gates, valid_out, stride, t_in = cache
    n_batch, n_steps, hid = hs.shape
    in_dim = xs.shape[2]
    d_w = np.zeros_like(layer.weights)
    d_b = np.zeros_like(layer.biases)
    d_xs = np.zeros_like(xs)
    dh = np.zeros((n_batch, hid))
    dc = np.zeros((n_batch, hid))
    u = np.empty((n_batch, in_dim + hid))
    da = np.empty((n_batch, 4 * hid))
    for t in reversed(range(n_steps)):
        dh = dh + d_hs[:, t]
        m = (t < valid_out)[:, None]
        i = gates[:, t, :hid]
        f = gates[:, t, hid : 2 * hid]
        g = gates[:, t, 2 * hid : 3 * hid]
        o = gates[:, t, 3 * hid :]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((n_batch, hid))
        tanh_c = np.tanh(cs[:, t])
        dh_live = np.where(m, dh, 0.0)
        dc_live = np.where(m, dc, 0.0)
        d_o = dh_live * tanh_c
        d_ct = dc_live + dh_live * o * (1.0 - tanh_c**2)
        da[:, :hid] = (d_ct * g) * i * (1.0 - i)
        da[:, hid : 2 * hid] = (d_ct * c_prev) * f * (1.0 - f)
        da[:, 2 * hid : 3 * hid] = (d_ct * i) * (1.0 - g**2)
        da[:, 3 * hid :] = d_o * o * (1.0 - o)
        u[:, :in_dim] = xs[:, t]
        u[:, in_dim:] = hs[:, t - 1] if t > 0 else 0.0
        d_w += u.T @ da
        d_b += da.sum(axis=0)
        du = da @ layer.weights.T
        d_xs[:, t] = du[:, :in_dim]
        # Masked steps pass state gradients through unchanged.
        dh = np.where(m, du[:, in_dim:], dh)
        dc = np.where(m, d_ct * f, dc)
    d_x = np.zeros((n_batch, t_in, in_dim))
    d_x[:, ::stride] = d_xs
    return d_x, d_w, d_b


def _masked_max_pool(hs: np.ndarray, valid: np.ndarray):
    n_steps = hs.shape[1]
    mask = np.arange(n_steps)[None, :, None] < valid[:, None, None]
    masked = np.where(mask, hs, -np.inf)
    idx = masked.argmax(axis=1)  # earliest max per (item, dim)
    pooled = np.take_along_axis(hs, idx[:, None, :], axis=1)[:, 0, :]
    return pooled, idx


def _max_pool_backward(idx: np.ndarray, d_pooled: np.ndarray, n_steps: int) -> np.ndarray:
    n_batch, hid = d_pooled.shape
    d_hs = np.zeros((n_batch, n_steps, hid))
    np.put_along_axis(d_hs, idx[:, None, :], d_pooled[:, None, :], axis=1)
    return d_hs


def _conv_forward_batch(conv: ConvFrontendParams, samples: np.ndarray, lengths: np.ndarray):
    """Batched conv+pool over padded waveforms (B, L); returns (values, valid, cache)."""
    filt_len = conv.filter_len
    if np.any(lengths < filt_len):
        raise ValueError(f"waveform shorter than filter length {filt_len}")
    n_conv = (lengths - filt_len) // conv.hop + 1
    t_conv = (samples.shape[1] - filt_len) // conv.hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(samples, filt_len, axis=1)[
        :, :: conv.hop
    ][:, :t_conv]
    conv_out = frames @ conv.filters.T  # (B, Tc, W)
    compressed = np.log(np.maximum(np.abs(conv_out), conv.log_floor))
    valid_mask = np.arange(t_conv)[None, :] < n_conv[:, None]
    masked = np.where(valid_mask[:, :, None], compressed, -np.inf)
    n_pooled = _ceil_div(t_conv, conv.pool_size)
    n_batch, _, n_filt = conv_out.shape
    padded = np.full((n_batch, n_pooled * conv.pool_size, n_filt), -np.inf)
    padded[:, :t_conv] = masked
    blocks = padded.reshape(n_batch, n_pooled, conv.pool_size, n_filt)
    argmax = blocks.argmax(axis=2)
    values = np.take_along_axis(blocks, argmax[:, :, None, :], axis=2)[:, :, 0, :]
    valid_pooled = _ceil_div(n_conv, conv.pool_size)
    pooled_mask = np.arange(n_pooled)[None, :] < valid_pooled[:, None]
    values = np.where(pooled_mask[:, :, None], values, 0.0)
    cache = (frames, conv_out, argmax, t_conv)
    return values, valid_pooled, cache


def _conv_backward_batch(conv: ConvFrontendParams, cache, d_values: np.ndarray) -> np.ndarray:
    frames, conv_out, argmax, t_conv = cache
    n_batch, n_pooled, n_filt = d_values.shape
    d_blocks = np.zeros((n_batch, n_pooled, conv.pool_size, n_filt))
    np.put_along_axis(d_blocks, argmax[:, :, None, :], d_values[:, :, None, :], axis=2)
    d_compressed = d_blocks.reshape(n_batch, n_pooled * conv.pool_size, n_filt)[:, :t_conv]
    live = np.abs(conv_out) > conv.log_floor
    d_conv = np.where(live, d_compressed / np.where(live, conv_out, 1.0), 0.0)
    return np.einsum("btw,btl->wl", d_conv, frames)


def forward_batch(
    params: NetworkParams,
    inputs: np.ndarray,
    valid: np.ndarray,
    want_cache: bool = False,
):
    """Run the full model over a padded batch.

    ``inputs`` is (B, T, D) features when the network has no conv frontend,
    or (B, L) padded raw samples in conv mode; ``valid`` holds per-item
    frame (or sample) counts. Returns (BatchOutputs, cache or None).
    """
    valid = np.asarray(valid, dtype=np.int64)
    conv_cache = None
    if params.conv is not None:
        values, valid_frames, conv_cache = _conv_forward_batch(params.conv, inputs, valid)
        feats = delta_stack(values, params.conv.deltas)
    else:
        feats, valid_frames = inputs, valid

    seq, seq_valid = feats, valid_frames
    layer_caches = []
    layer_outputs = []
    for layer in params.lstm_layers:
        seq, seq_valid, cache = _lstm_forward_batch(layer, seq, seq_valid)
        layer_caches.append(cache)
        layer_outputs.append((seq, seq_valid))

    if params.feed_mode == "all":
        pool_sources = list(range(len(params.lstm_layers)))
    else:
        pool_sources = [len(params.lstm_layers) - 1]
    pooled_parts = []
    pool_indices = []
    for k in pool_sources:
        hs, hs_valid = layer_outputs[k]
        part, idx = _masked_max_pool(hs, hs_valid)
        pooled_parts.append(part)
        pool_indices.append(idx)
    pooled = np.concatenate(pooled_parts, axis=1)

    hidden_inputs = []
    rep = pooled
    for w, b in params.hidden_layers:
        hidden_inputs.append(rep)
        rep = np.maximum(rep @ w + b, 0.0)

    raw = rep @ params.head_weights + params.head_biases
    embedding_pred = None
    if params.embedding_head is not None:
        ew, eb = params.embedding_head
        embedding_pred = rep @ ew + eb

    if params.head_kind == "scalar":
        outputs = BatchOutputs(mos=raw[:, 0].copy(), embedding_pred=embedding_pred)
    elif params.head_kind == "gaussian":
        sigma = softplus(raw[:, 1]) + SIGMA_FLOOR
        outputs = BatchOutputs(
            mos=raw[:, 0].copy(), mu=raw[:, 0].copy(), sigma=sigma,
            embedding_pred=embedding_pred,
        )
    else:
        probs = softmax(raw)
        outputs = BatchOutputs(
            mos=probs @ CATEGORY_VALUES, logits=raw, cat_probs=probs,
            embedding_pred=embedding_pred,
        )

    cache = None
    if want_cache:
        cache = {
            "conv": conv_cache,
            "layer_caches": layer_caches,
            "layer_outputs": layer_outputs,
            "pool_sources": pool_sources,
            "pool_indices": pool_indices,
            "hidden_inputs": hidden_inputs,
            "rep": rep,
            "raw": raw,
            "feat_shape": feats.shape,
        }
    return outputs, cache


def backward_batch(params: NetworkParams, cache, d_out: HeadGradients):
    """Exact gradients of the (already reduced) loss w.r.t. every tensor.

    Also returns the gradient on the stack's input features, used by tests
    and by nothing else (waveforms are not parameters).
    """
    raw = cache["raw"]
    n_batch = raw.shape[0]

    d_raw = np.zeros_like(raw)
    if params.head_kind == "scalar":
        if d_out.d_mos is not None:
            d_raw[:, 0] = d_out.d_mos
    elif params.head_kind == "gaussian":
        if d_out.d_mu is not None:
            d_raw[:, 0] = d_out.d_mu
        if d_out.d_sigma is not None:
            d_raw[:, 1] = d_out.d_sigma * sigmoid(raw[:, 1])
    else:
        if d_out.d_logits is not None:
            d_raw[:] = d_out.d_logits

    grads: dict[str, np.ndarray] = {}
    rep = cache["rep"]
    grads["head/w"] = rep.T @ d_raw
    grads["head/b"] = d_raw.sum(axis=0)
    d_rep = d_raw @ params.head_weights.T
    if params.embedding_head is not None:
        ew, _ = params.embedding_head
        d_emb = (
            d_out.d_embedding
            if d_out.d_embedding is not None
            else np.zeros((n_batch, ew.shape[1]))
        )
        grads["embed_head/w"] = rep.T @ d_emb
        grads["embed_head/b"] = d_emb.sum(axis=0)
        # The table itself is updated by the loss side, which owns the
        # pairing of items to synthesizers.
        grads["embed/table"] = np.zeros_like(params.embedding_table)
        d_rep = d_rep + d_emb @ ew.T

    for k in reversed(range(len(params.hidden_layers))):
        w, b = params.hidden_layers[k]
        h_in = cache["hidden_inputs"][k]
        pre_live = (h_in @ w + b) > 0.0
        d_pre = d_rep * pre_live
        grads[f"hidden{k}/w"] = h_in.T @ d_pre
        grads[f"hidden{k}/b"] = d_pre.sum(axis=0)
        d_rep = d_pre @ w.T

    widths = [layer.hidden_size for layer in params.lstm_layers]
    d_pool_parts = {}
    offset = 0
    for j, k in enumerate(cache["pool_sources"]):
        d_pool_parts[k] = (d_rep[:, offset : offset + widths[k]], cache["pool_indices"][j])
        offset += widths[k]

    d_from_above = None
    for k in reversed(range(len(params.lstm_layers))):
        hs, _ = cache["layer_outputs"][k]
        d_seq = np.zeros_like(hs)
        if k in d_pool_parts:
            d_part, idx = d_pool_parts[k]
            d_seq += _max_pool_backward(idx, d_part, hs.shape[1])
        if d_from_above is not None:
            d_seq += d_from_above
        d_from_above, d_w, d_b = _lstm_backward_batch(
            params.lstm_layers[k], cache["layer_caches"][k], d_seq
        )
        grads[f"lstm{k}/w"] = d_w
        grads[f"lstm{k}/b"] = d_b

    d_feats = d_from_above
    if params.conv is not None:
        d_values = delta_stack_backward(d_feats, params.conv.deltas)
        grads["conv/filters"] = _conv_backward_batch(params.conv, cache["conv"], d_values)
        d_feats = None
    return grads, d_feats


# ---------------------------------------------------------------------------
# Single-utterance surface
# ---------------------------------------------------------------------------


def _batch_inputs_for(params: NetworkParams, features: FeatureSeq):
    if params.conv is not None:
        if features.dim != 1:
            raise ValueError("conv-mode input must be raw samples shaped (n, 1)")
        return features.values[:, 0][None, :], np.array([features.valid_len])
    return features.values[None, :, :], np.array([features.valid_len])


def model_forward(
    params: NetworkParams, features: FeatureSeq, mode: Optional[str] = None
) -> HeadOutputs:
    """Forward pass for one utterance; see :class:`HeadOutputs`."""
    if mode is not None and mode != params.head_kind:
        raise ValueError(f"head kind is {params.head_kind!r}, got mode {mode!r}")
    inputs, valid = _batch_inputs_for(params, features)
    out, _ = forward_batch(params, inputs, valid)
    return HeadOutputs(
        mos_point=float(out.mos[0]),
        mu=None if out.mu is None else float(out.mu[0]),
        sigma=None if out.sigma is None else float(out.sigma[0]),
        logits=None if out.logits is None else out.logits[0],
        embedding_pred=None if out.embedding_pred is None else out.embedding_pred[0],
    )


def model_forward_retained(params: NetworkParams, features: FeatureSeq):
    """Forward pass retaining activations, for a later model_backward."""
    inputs, valid = _batch_inputs_for(params, features)
    return forward_batch(params, inputs, valid, want_cache=True)


def model_backward(params: NetworkParams, cache, d_out: HeadGradients) -> dict[str, np.ndarray]:
    """Gradients for a retained forward pass (see model_forward_retained)."""
    if cache is None:
        raise ValueError("model_backward requires a retained forward pass")
    grads, _ = backward_batch(params, cache, d_out)
    return grads


def predict_mos(
    params: NetworkParams,
    cfg: FrontendConfig,
    waveforms: list[Waveform],
    batch_size: int = 64,
) -> np.ndarray:
    """Point MOS estimates for a list of waveforms (batched internally)."""
    preds = np.empty(len(waveforms))
    for lo in range(0, len(waveforms), batch_size):
        chunk = waveforms[lo : lo + batch_size]
        seqs = [prepare_input(w, cfg) for w in chunk]
        inputs, valid = pad_batch(seqs, conv_mode=params.conv is not None)
        out, _ = forward_batch(params, inputs, valid)
        preds[lo : lo + len(chunk)] = out.mos
    return preds


def pad_batch(seqs: list[FeatureSeq], conv_mode: bool = False):
    """Stack variable-length sequences into a padded batch plus valid lengths."""
    valid = np.array([s.valid_len for s in seqs], dtype=np.int64)
    max_len = int(max(valid))
    if conv_mode:
        inputs = np.zeros((len(seqs), max_len))
        for k, s in enumerate(seqs):
            inputs[k, : s.valid_len] = s.values[: s.valid_len, 0]
    else:
        dim = seqs[0].dim
        inputs = np.zeros((len(seqs), max_len, dim))
        for k, s in enumerate(seqs):
            inputs[k, : s.valid_len] = s.values[: s.valid_len]
    return inputs, valid


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _structure_meta(params: NetworkParams) -> dict:
    meta = {
        "head_kind": params.head_kind,
        "feed_mode": params.feed_mode,
        "strides": [layer.stride for layer in params.lstm_layers],
        "n_hidden_layers": len(params.hidden_layers),
        "embedding_dim": params.embedding_dim,
        "conv": None,
    }
    if params.conv is not None:
        meta["conv"] = {
            "hop": params.conv.hop,
            "pool_size": params.conv.pool_size,
            "log_floor": params.conv.log_floor,
            "deltas": params.conv.deltas,
        }
    return meta


def _params_from_tensors(meta: dict, tensors: dict[str, np.ndarray]) -> NetworkParams:
    strides = meta["strides"]
    lstm_layers = [
        LstmLayerParams(tensors[f"lstm{k}/w"], tensors[f"lstm{k}/b"], stride=strides[k])
        for k in range(len(strides))
    ]
    hidden_layers = [
        (tensors[f"hidden{k}/w"], tensors[f"hidden{k}/b"])
        for k in range(meta["n_hidden_layers"])
    ]
    conv = None
    if meta["conv"] is not None:
        conv = ConvFrontendParams(filters=tensors["conv/filters"], **meta["conv"])
    embedding_head = None
    embedding_table = None
    if meta["embedding_dim"] > 0:
        embedding_head = (tensors["embed_head/w"], tensors["embed_head/b"])
        embedding_table = tensors["embed/table"]
    return NetworkParams(
        lstm_layers=lstm_layers,
        hidden_layers=hidden_layers,
        head_kind=meta["head_kind"],
        head_weights=tensors["head/w"],
        head_biases=tensors["head/b"],
        feed_mode=meta["feed_mode"],
        conv=conv,
        embedding_head=embedding_head,
        embedding_table=embedding_table,
    )


def save_checkpoint(
    path,
    params: NetworkParams,
    accumulators: Optional[dict[str, np.ndarray]] = None,
    config: Optional[dict] = None,
) -> None:
    """Write a versioned binary checkpoint.

    Layout: magic ``AUTOMOS1``, a little-endian uint64 header length, a JSON
    header (config echo, structure, tensor directory), then every tensor as
    row-major little-endian float64 in directory order. Adagrad accumulators
    are stored as ``adagrad/<tensor-name>``.
    """
    named = params.named_tensors()
    entries = [(name, arr) for name, arr in named]
    if accumulators is not None:
        for name, _ in named:
            entries.append((f"adagrad/{name}", accumulators[name]))
    header = {
        "format_version": 1,
        "config": config or {},
        "structure": _structure_meta(params),
        "has_accumulators": accumulators is not None,
        "tensors": [[name, list(arr.shape)] for name, arr in entries],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, accumulators or None, config)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        tensors: dict[str, np.ndarray] = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    accumulators = None
    if header["has_accumulators"]:
        accumulators = {
            name[len("adagrad/") :]: arr
            for name, arr in tensors.items()
            if name.startswith("adagrad/")
        }
    param_tensors = {k: v for k, v in tensors.items() if not k.startswith("adagrad/")}
    params = _params_from_tensors(header["structure"], param_tensors)
    return params, accumulators, header["config"]
