"""From-scratch dense neural core: MLPs with batch normalization and ReLU,
hand-derived backprop, SGD, and the four-network attention value model.

Everything is float64. Gradients flow through the attention softmax, the mean
pooling and the batch statistics; they are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import math
import struct
from typing import Sequence

import numpy as np

TRAIN = "train"
INFER = "infer"

EMBED_HIDDEN = 300
EMBED_OUT = 200
PAIR_HIDDEN = 200
PAIR_OUT = 100
ATTENTION_HIDDEN = (200, 200)
VALUE_HIDDEN = (350, 250, 200)

WEIGHT_MAGIC = b"HMPDRL-VNET v1\n"


class WeightFormatError(ValueError):
    """Weight file is corrupt, truncated, or has mismatched dimensions."""


class BatchNorm:
    """Per-feature normalization with learnable scale/shift and running stats.

    Train mode normalizes with the batch mean and (biased) variance and folds
    the batch statistics into the running averages; infer mode is a pure
    affine map from the running statistics.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.g_gamma = np.zeros(dim)
        self.g_beta = np.zeros(dim)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mean) * inv_std
            self._cache = (x_hat, inv_std)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * var
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            x_hat = (x - self.running_mean) * inv_std
            self._cache = None
        return self.gamma * x_hat + self.beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward requires a preceding train-mode forward")
        x_hat, inv_std = self._cache
        n = x_hat.shape[0]
        self.g_gamma += (dy * x_hat).sum(axis=0)
        self.g_beta += dy.sum(axis=0)
        dxh = dy * self.gamma
        return (inv_std / n) * (
            n * dxh - dxh.sum(axis=0) - x_hat * (dxh * x_hat).sum(axis=0)
        )

    def param_pairs(self):
        yield self.gamma, self.g_gamma
        yield self.beta, self.g_beta

    def state_arrays(self):
        return [self.gamma, self.beta, self.running_mean, self.running_var]


class DenseNet:
    """MLP with Linear -> BatchNorm -> ReLU hidden layers and a linear output."""

    def __init__(
        self,
        dims: Sequence[int],
        rng: np.random.Generator,
        momentum: float = 0.1,
        eps: float = 1e-5,
    ):
        if len(dims) < 2:
            raise ValueError("a DenseNet needs at least input and output dims")
        self.dims = tuple(int(d) for d in dims)
        self.weights = []
        self.biases = []
        self.norms = []
        n_layers = len(self.dims) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.dims[i], self.dims[i + 1]
            limit = math.sqrt(6.0 / fan_in)  # He-uniform for ReLU layers
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
            if i < n_layers - 1:
                self.norms.append(BatchNorm(fan_out, momentum, eps))
        self.g_weights = [np.zeros_like(w) for w in self.weights]
        self.g_biases = [np.zeros_like(b) for b in self.biases]
        self._cache = None
        self._folded = None  # (W', b') per layer with the norm affine folded in

    def invalidate_infer_cache(self) -> None:
        self._folded = None

    def _folded_layers(self):
        # In infer mode each hidden layer is Linear then a fixed affine map,
        # so the affine folds into the layer's weights once per weight version.
        if self._folded is None:
            folded = []
            last = len(self.weights) - 1
            for i, (w, b) in enumerate(zip(self.weights, self.biases)):
                if i < last:
                    norm = self.norms[i]
                    scale = norm.gamma / np.sqrt(norm.running_var + norm.eps)
                    shift = norm.beta - norm.running_mean * scale
                    folded.append((w * scale, b * scale + shift))
                else:
                    folded.append((w, b))
            self._folded = folded
        return self._folded

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.dims[0]:
            raise ValueError(
                f"input shape {x.shape} incompatible with input dim {self.dims[0]}"
            )
        last = len(self.weights) - 1
        if not train:
            out = x
            for i, (w, b) in enumerate(self._folded_layers()):
                out = out @ w + b
                if i < last:
                    np.maximum(out, 0.0, out=out)
            self._cache = None
            return out
        self.invalidate_infer_cache()  # running stats change below
        cache = []
        out = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = out @ w + b
            if i < last:
                z = self.norms[i].forward(z, train)
                mask = z > 0.0
                cache.append((out, mask))
                out = np.where(mask, z, 0.0)
            else:
                cache.append((out, None))
                out = z
        self._cache = cache
        return out

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward requires a preceding train-mode forward")
        for i in range(len(self.weights) - 1, -1, -1):
            x_in, mask = self._cache[i]
            if mask is not None:
                dy = np.where(mask, dy, 0.0)
                dy = self.norms[i].backward(dy)
            self.g_weights[i] += x_in.T @ dy
            self.g_biases[i] += dy.sum(axis=0)
            dy = dy @ self.weights[i].T
        return dy

    def param_pairs(self):
        for w, gw in zip(self.weights, self.g_weights):
            yield w, gw
        for b, gb in zip(self.biases, self.g_biases):
            yield b, gb
        for norm in self.norms:
            yield from norm.param_pairs()

    def state_arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        for norm in self.norms:
            out.extend(norm.state_arrays())
        return out


class ValueNet:
    """Attention-pooled state-value model over a variable entity count.

    Entity rows are embedded (``embed``), turned into pairwise interaction
    features (``pair``) and attention scores (``attend`` on the embedding
    concatenated with its mean pool), then softmax-pooled and judged together
    with the extended self-state (``value``).
    """

    def __init__(
        self,
        k_checkpoints: int = 2,
        seed: int = 0,
        momentum: float = 0.1,
        eps: float = 1e-5,
    ):
        self.k_checkpoints = int(k_checkpoints)
        self.self_dim = 6 + 4 * self.k_checkpoints
        row_dim = self.self_dim + 11
        rng = np.random.default_rng(seed)
        self.embed = DenseNet((row_dim, EMBED_HIDDEN, EMBED_OUT), rng, momentum, eps)
        self.pair = DenseNet((EMBED_OUT, PAIR_HIDDEN, PAIR_OUT), rng, momentum, eps)
        self.attend = DenseNet(
            (2 * EMBED_OUT, *ATTENTION_HIDDEN, 1), rng, momentum, eps
        )
        self.value = DenseNet(
            (self.self_dim + PAIR_OUT, *VALUE_HIDDEN, 1), rng, momentum, eps
        )
        self.mode = INFER
        self._cache = None

    @property
    def nets(self):
        return (self.embed, self.pair, self.attend, self.value)

    # --- forward / backward -------------------------------------------------

    def forward_batch(
        self, self_states: np.ndarray, rows_list: Sequence[np.ndarray]
    ) -> np.ndarray:
        """Values for a batch of joint states, each with >= 1 entity rows.

        In train mode batch statistics pool over all entity rows of the batch
        (and over the batch for the value head), and intermediates are cached
        for backward.
        """
        counts = np.array([len(r) for r in rows_list], dtype=np.int64)
        if (counts < 1).any():
            raise ValueError("every sample needs at least one entity row")
        flat = np.concatenate([np.atleast_2d(r) for r in rows_list], axis=0)
        return self.forward_packed(self_states, flat, counts)

    def forward_packed(
        self, self_states: np.ndarray, flat: np.ndarray, counts: np.ndarray
    ) -> np.ndarray:
        """forward_batch with the entity rows already stacked into one matrix."""
        train = self.mode == TRAIN
        self_states = np.atleast_2d(np.asarray(self_states, dtype=float))
        counts = np.asarray(counts, dtype=np.int64)
        if len(counts) != self_states.shape[0]:
            raise ValueError("one entity-row count required per self state")
        if flat.shape[0] != int(counts.sum()):
            raise ValueError("entity row count mismatch")
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        seg_ids = np.repeat(np.arange(len(counts)), counts)

        g = self.embed.forward(flat, train)
        h = self.pair.forward(g, train)
        g_mean = np.add.reduceat(g, offsets, axis=0) / counts[:, None]
        attn_in = np.concatenate([g, g_mean[seg_ids]], axis=1)
        scores = self.attend.forward(attn_in, train)[:, 0]

        seg_max = np.maximum.reduceat(scores, offsets)
        exp = np.exp(scores - seg_max[seg_ids])
        denom = np.add.reduceat(exp, offsets)
        weights = exp / denom[seg_ids]

        pooled = np.add.reduceat(weights[:, None] * h, offsets, axis=0)
        value_in = np.concatenate([self_states, pooled], axis=1)
        v = self.value.forward(value_in, train)[:, 0]
        if train:
            self._cache = (weights, h, seg_ids, offsets, counts)
        return v

    def attention_weights(self, rows) -> np.ndarray:
        """Softmax attention weights for one joint state (diagnostics only)."""
        g = self.embed.forward(np.atleast_2d(rows), False)
        g_mean = g.mean(axis=0, keepdims=True)
        attn_in = np.concatenate([g, np.repeat(g_mean, len(g), axis=0)], axis=1)
        scores = self.attend.forward(attn_in, False)[:, 0]
        exp = np.exp(scores - scores.max())
        return exp / exp.sum()

    def forward_value(self, self_state: np.ndarray, rows: np.ndarray) -> float:
        """Scalar value of one joint state (n >= 1 entity rows)."""
        return float(self.forward_batch(self_state[None, :], [rows])[0])

    def backward_batch(self, dv: np.ndarray) -> None:
        """Backprop d(loss)/d(value) through attention, pooling and all MLPs."""
        if self._cache is None:
            raise RuntimeError("backward requires a preceding train-mode forward")
        weights, h, seg_ids, offsets, counts = self._cache
        d_value_in = self.value.backward(np.asarray(dv, dtype=float)[:, None])
        d_pooled = d_value_in[:, self.self_dim :]

        d_pooled_rows = d_pooled[seg_ids]
        dh = weights[:, None] * d_pooled_rows
        dw = (h * d_pooled_rows).sum(axis=1)
        wdw = weights * dw
        seg_sum = np.add.reduceat(wdw, offsets)
        dscores = wdw - weights * seg_sum[seg_ids]

        d_attn_in = self.attend.backward(dscores[:, None])
        dg = d_attn_in[:, :EMBED_OUT].copy()
        d_gmean = np.add.reduceat(d_attn_in[:, EMBED_OUT:], offsets, axis=0)
        dg += (d_gmean / counts[:, None])[seg_ids]
        dg += self.pair.backward(dh)
        self.embed.backward(dg)
        self._cache = None

    # --- parameters ----------------------------------------------------------

    def param_pairs(self):
        for net in self.nets:
            yield from net.param_pairs()

    def state_arrays(self):
        out = []
        for net in self.nets:
            out.extend(net.state_arrays())
        return out

    def zero_grads(self) -> None:
        for _, grad in self.param_pairs():
            grad[...] = 0.0

    def sgd_step(self, lr: float) -> None:
        for param, grad in self.param_pairs():
            param -= lr * grad
        for net in self.nets:
            net.invalidate_infer_cache()

    def num_serialized_floats(self) -> int:
        return sum(a.size for a in self.state_arrays())

    def clone(self) -> "ValueNet":
        bn = self.embed.norms[0]
        other = ValueNet(self.k_checkpoints, momentum=bn.momentum, eps=bn.eps)
        other.load_state_from(self)
        return other

    def load_state_from(self, source: "ValueNet") -> None:
        mine, theirs = self.state_arrays(), source.state_arrays()
        if len(mine) != len(theirs):
            raise ValueError("mismatched architectures")
        for dst, src in zip(mine, theirs):
            if dst.shape != src.shape:
                raise ValueError("mismatched architectures")
            dst[...] = src
        for net in self.nets:
            net.invalidate_infer_cache()


def set_mode(net: ValueNet, mode: str) -> ValueNet:
    """Switch between batch statistics (train) and running statistics (infer)."""
    if mode not in (TRAIN, INFER):
        raise ValueError(f"mode must be '{TRAIN}' or '{INFER}'")
    net.mode = mode
    return net


def backward_sgd(net: ValueNet, batch, lr: float) -> float:
    """One mean-squared-error SGD step on (self_state, rows, target) tuples."""
    if not batch:
        raise ValueError("batch must be non-empty")
    if net.mode != TRAIN:
        raise RuntimeError("backward_sgd requires train mode")
    self_states = np.stack([b[0] for b in batch])
    rows_list = [b[1] for b in batch]
    targets = np.array([b[2] for b in batch], dtype=float)
    net.zero_grads()
    v = net.forward_batch(self_states, rows_list)
    err = v - targets
    loss = float(np.mean(err * err))
    net.backward_batch(2.0 * err / err.size)
    net.sgd_step(lr)
    return loss


# --- serialization -----------------------------------------------------------


def save_weights(net: ValueNet, path) -> None:
    """Little-endian binary: magic, dimension table, then the float64 blob."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(net.nets)))
        for sub in net.nets:
            fh.write(struct.pack("<I", len(sub.dims)))
            fh.write(struct.pack(f"<{len(sub.dims)}I", *sub.dims))
        fh.write(struct.pack("<dd", net.embed.norms[0].momentum, net.embed.norms[0].eps))
        for arr in net.state_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path) -> ValueNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(WEIGHT_MAGIC):
        raise WeightFormatError("bad magic: not a value-network weight file")
    off = len(WEIGHT_MAGIC)

    def unpack(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise WeightFormatError("truncated weight file header")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (n_nets,) = unpack("<I")
    if n_nets != 4:
        raise WeightFormatError(f"expected 4 sub-networks, found {n_nets}")
    dim_tables = []
    for _ in range(n_nets):
        (n_dims,) = unpack("<I")
        dim_tables.append(unpack(f"<{n_dims}I"))
    momentum, eps = unpack("<dd")

    row_dim = dim_tables[0][0]
    self_dim = dim_tables[3][0] - PAIR_OUT
    if row_dim != self_dim + 11 or (self_dim - 6) % 4 != 0:
        raise WeightFormatError(f"inconsistent dimension table: {dim_tables}")
    k = (self_dim - 6) // 4
    net = ValueNet(k_checkpoints=k, momentum=momentum, eps=eps)
    expected = tuple(tuple(t) for t in dim_tables)
    actual = tuple(sub.dims for sub in net.nets)
    if expected != actual:
        raise WeightFormatError(
            f"dimension table {expected} does not match architecture {actual}"
        )
    arrays = net.state_arrays()
    need = sum(a.size for a in arrays) * 8
    if len(blob) - off != need:
        raise WeightFormatError(
            f"parameter blob has {len(blob) - off} bytes, expected {need}"
        )
    for arr in arrays:
        flat = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=off)
        arr[...] = flat.reshape(arr.shape)
        off += arr.size * 8
    return net
