"""Differentiable primitives, parameter storage, Adam, and checkpoints.

A small reverse-mode tape over float64 numpy arrays: just the operations
the model graph needs, each with a hand-written backward rule. Gradient
correctness is pinned by finite-difference tests rather than by generality.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ._kernels import (linear_bias, linear_nobias, scatter_add_rows, segment_sum_plain,
                       segment_sum_sorted)
from .errors import CheckpointFormatError, InvalidArgumentError

PROB_CLAMP = 1e-12


# ---------------------------------------------------------------------------
# Plain numeric primitives
# ---------------------------------------------------------------------------

def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def sigmoid(x):
    """Numerically stable logistic function; never overflows for finite input."""
    arr = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(arr))
    out = np.where(arr >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return float(out) if out.ndim == 0 else out


def bce_loss(probs, labels, pos_weight: float = 1.0) -> float:
    """Mean binary cross-entropy with probabilities clamped away from {0, 1}."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise InvalidArgumentError(f"probs/labels length mismatch: {probs.shape} vs {labels.shape}")
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    terms = -(pos_weight * labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    return float(terms.mean())


def glorot_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    fan_out, fan_in = shape if len(shape) == 2 else (shape[0], shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------

@dataclass
class BatchNormState:
    """Running statistics for one normalization site.

    The learnable scale/shift live in the ParamStore (they are trained like
    any other weight); this object only tracks the running moments used in
    eval mode. Train mode normalizes by biased batch statistics and folds
    them into the running values with the given momentum.
    """

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def fresh(cls, channels: int) -> "BatchNormState":
        return cls(running_mean=np.zeros(channels), running_var=np.ones(channels))

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        self.running_mean *= 1.0 - self.momentum
        self.running_mean += self.momentum * batch_mean
        self.running_var *= 1.0 - self.momentum
        self.running_var += self.momentum * batch_var


def batch_norm(x, gamma, beta, state: BatchNormState, mode: str):
    """Normalize rows per channel; train mode also updates running stats."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "train":
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        state.update(mean, var)
    elif mode == "eval":
        mean, var = state.running_mean, state.running_var
    else:
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    xhat = (x - mean) / np.sqrt(var + state.epsilon)
    return gamma * xhat + beta


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------

class Var:
    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = None


def _acc(var: Var, g: np.ndarray, owned: bool = False) -> None:
    # owned=True hands over a freshly allocated array, avoiding a copy
    if var.grad is None:
        var.grad = g if owned else g.copy()
    else:
        var.grad += g


class Tape:
    """Records forward operations and replays their backward rules in reverse."""

    def __init__(self):
        self._steps = []

    def leaf(self, value: np.ndarray) -> Var:
        return Var(np.asarray(value, dtype=np.float64))

    def _push(self, out: Var, backward) -> Var:
        self._steps.append((out, backward))
        return out

    def backward(self, loss: Var) -> None:
        if not self._steps:
            raise RuntimeError("backward called before any forward operation was recorded")
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self._steps):
            if out.grad is not None:
                fn(out.grad)

    # -- operations --------------------------------------------------------

    def linear(self, x: Var, w: Var, b: Var | None = None, row_stable: bool = False) -> Var:
        """x @ w.T (+ b).

        With row_stable, a fixed-order kernel computes each output row
        identically regardless of the row count; BLAS switches kernels with
        the matrix height, which would break exact batch-independence.
        """
        xv = np.ascontiguousarray(x.value)
        if row_stable:
            wt = np.ascontiguousarray(w.value.T)
            out_v = np.empty((xv.shape[0], wt.shape[1]))
            if b is None:
                linear_nobias(xv, wt, out_v)
            else:
                linear_bias(xv, wt, b.value, out_v)
        else:
            out_v = xv @ w.value.T
            if b is not None:
                out_v += b.value
        out = Var(out_v)

        def backward(g):
            _acc(x, g @ w.value, owned=True)
            _acc(w, g.T @ xv, owned=True)
            if b is not None:
                _acc(b, g.sum(axis=0), owned=True)
        return self._push(out, backward)

    def add(self, a: Var, b: Var) -> Var:
        out = Var(a.value + b.value)

        def backward(g):
            _acc(a, g)
            _acc(b, g)
        return self._push(out, backward)

    def mul(self, a: Var, b: Var) -> Var:
        out = Var(a.value * b.value)

        def backward(g):
            _acc(a, g * b.value, owned=True)
            _acc(b, g * a.value, owned=True)
        return self._push(out, backward)

    def div(self, a: Var, b: Var) -> Var:
        out = Var(a.value / b.value)

        def backward(g):
            _acc(a, g / b.value, owned=True)
            _acc(b, -g * out.value / b.value, owned=True)
        return self._push(out, backward)

    def add_const(self, x: Var, c: float) -> Var:
        out = Var(x.value + c)

        def backward(g):
            _acc(x, g)
        return self._push(out, backward)

    def sigmoid(self, x: Var) -> Var:
        out = Var(sigmoid(x.value))

        def backward(g):
            _acc(x, g * (out.value * (1.0 - out.value)), owned=True)
        return self._push(out, backward)

    def relu(self, x: Var) -> Var:
        out = Var(np.maximum(x.value, 0.0))

        def backward(g):
            _acc(x, g * (x.value > 0.0), owned=True)
        return self._push(out, backward)

    def reshape(self, x: Var, shape) -> Var:
        out = Var(x.value.reshape(shape))

        def backward(g):
            _acc(x, g.reshape(x.value.shape))
        return self._push(out, backward)

    def gather(self, x: Var, idx: np.ndarray) -> Var:
        out = Var(x.value[idx])

        def backward(g):
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            scatter_add_rows(np.ascontiguousarray(g), idx, x.grad)
        return self._push(out, backward)

    def segment_sum(self, x: Var, seg_of_row: np.ndarray, order: np.ndarray,
                    ptr: np.ndarray, n_segments: int, canonical: bool) -> Var:
        """Per-segment sum; canonical mode accumulates each group in ascending
        value order so the result is invariant to row ordering."""
        out_v = np.empty((n_segments, x.value.shape[1]))
        if canonical:
            segment_sum_sorted(np.ascontiguousarray(x.value), order, ptr, out_v)
        else:
            segment_sum_plain(np.ascontiguousarray(x.value), seg_of_row, out_v)
        out = Var(out_v)

        def backward(g):
            _acc(x, g[seg_of_row], owned=True)
        return self._push(out, backward)

    def batch_norm(self, x: Var, gamma: Var, beta: Var, state: BatchNormState, mode: str) -> Var:
        eps = state.epsilon
        if mode == "train":
            m = x.value.shape[0]
            mean = x.value.mean(axis=0)
            var = x.value.var(axis=0)
            state.update(mean, var)
            ivar = 1.0 / np.sqrt(var + eps)
            xhat = (x.value - mean) * ivar
            out = Var(gamma.value * xhat + beta.value)

            def backward(g):
                _acc(beta, g.sum(axis=0), owned=True)
                _acc(gamma, (g * xhat).sum(axis=0), owned=True)
                dxhat = g * gamma.value
                dx = (ivar / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
                _acc(x, dx, owned=True)
        elif mode == "eval":
            ivar = 1.0 / np.sqrt(state.running_var + eps)
            xhat = (x.value - state.running_mean) * ivar
            out = Var(gamma.value * xhat + beta.value)

            def backward(g):
                _acc(beta, g.sum(axis=0), owned=True)
                _acc(gamma, (g * xhat).sum(axis=0), owned=True)
                _acc(x, g * (gamma.value * ivar), owned=True)
        else:
            raise InvalidArgumentError(f"unknown mode {mode!r}")
        return self._push(out, backward)

    def bce(self, probs: Var, labels: np.ndarray, pos_weight: float = 1.0) -> Var:
        y = np.asarray(labels, dtype=np.float64)
        if probs.value.shape != y.shape:
            raise InvalidArgumentError(f"probs/labels length mismatch: {probs.value.shape} vs {y.shape}")
        p = np.clip(probs.value, PROB_CLAMP, 1.0 - PROB_CLAMP)
        n = y.size
        terms = -(pos_weight * y * np.log(p) + (1.0 - y) * np.log1p(-p))
        out = Var(np.array(terms.mean()))
        unclamped = probs.value == p

        def backward(g):
            dp = (-pos_weight * y / p + (1.0 - y) / (1.0 - p)) / n
            _acc(probs, g * dp * unclamped, owned=True)
        return self._push(out, backward)


# ---------------------------------------------------------------------------
# Parameters and optimizer
# ---------------------------------------------------------------------------

@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)


class ParamStore:
    """Named parameters with gradient slots and Adam state, insertion-ordered."""

    def __init__(self):
        self._entries: dict[str, ParamEntry] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> ParamEntry:
        if name in self._entries:
            raise InvalidArgumentError(f"duplicate parameter name {name!r}")
        entry = ParamEntry(value=value)
        self._entries[name] = entry
        return entry

    def __getitem__(self, name: str) -> ParamEntry:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grad(self) -> None:
        for entry in self._entries.values():
            entry.grad[...] = 0.0


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update with bias correction; zeroes gradients afterwards."""
    t = store.step_count + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for entry in store._entries.values():
        g = entry.grad
        entry.adam_m *= beta1
        entry.adam_m += (1.0 - beta1) * g
        entry.adam_v *= beta2
        entry.adam_v += (1.0 - beta2) * (g * g)
        m_hat = entry.adam_m / c1
        v_hat = entry.adam_v / c2
        entry.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        g[...] = 0.0
    store.step_count = t


# ---------------------------------------------------------------------------
# Checkpoint format
#
#   magic "EGAE" | version u32 LE | config-JSON length u32 LE | config JSON |
#   tensor count u32 LE | per tensor: name length u16 LE, UTF-8 name,
#   rank u8, dims u32 LE each, float64 LE row-major payload.
#
# Tensor names: parameters under their store names (BN scale/shift included
# as bn.<layer>.<node|edge>.{gamma,beta}), running stats as
# bn.<layer>.<node|edge>.{mean,var}, optimizer state as adam.{m,v}.<param>,
# plus adam.step_count and train.epochs_done.
# ---------------------------------------------------------------------------

MAGIC = b"EGAE"
FORMAT_VERSION = 1
CONFIG_KEYS = ("H", "L", "k", "lr", "pos_weight", "seed")


@dataclass
class CheckpointData:
    store: ParamStore
    bn_states: dict[str, BatchNormState]
    config: dict
    epochs_done: int


def _write_tensor(fh, name: str, array: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", array.ndim))
    for d in array.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def save_checkpoint(store: ParamStore, bn_states: dict[str, BatchNormState], config: dict,
                    path, epochs_done: int = 0) -> None:
    if set(config) != set(CONFIG_KEYS):
        raise InvalidArgumentError(f"config must have exactly the keys {CONFIG_KEYS}")
    tensors: list[tuple[str, np.ndarray]] = []
    for name, entry in store.items():
        tensors.append((name, entry.value))
    for key, state in bn_states.items():
        tensors.append((f"bn.{key}.mean", state.running_mean))
        tensors.append((f"bn.{key}.var", state.running_var))
    for name, entry in store.items():
        tensors.append((f"adam.m.{name}", entry.adam_m))
        tensors.append((f"adam.v.{name}", entry.adam_v))
    tensors.append(("adam.step_count", np.array([float(store.step_count)])))
    tensors.append(("train.epochs_done", np.array([float(epochs_done)])))

    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, array in tensors:
            _write_tensor(fh, name, array)


def _read_exact(fh, nbytes: int) -> bytes:
    data = fh.read(nbytes)
    if len(data) != nbytes:
        raise CheckpointFormatError("truncated checkpoint file")
    return data


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointFormatError("bad magic bytes, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported format version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            config = json.loads(_read_exact(fh, blob_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"bad config block: {exc}") from None
        if set(config) != set(CONFIG_KEYS):
            raise CheckpointFormatError(
                f"config keys {sorted(config)} do not match the expected {sorted(CONFIG_KEYS)}")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1))
            dims = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(rank))
            size = int(np.prod(dims)) if dims else 1
            payload = _read_exact(fh, 8 * size)
            if name in tensors:
                raise CheckpointFormatError(f"duplicate tensor name {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)

    params: dict[str, np.ndarray] = {}
    running: dict[str, dict[str, np.ndarray]] = {}
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    step_count = None
    epochs_done = 0
    for name, array in tensors.items():
        if name == "adam.step_count":
            step_count = int(array[0])
        elif name == "train.epochs_done":
            epochs_done = int(array[0])
        elif name.startswith("adam.m."):
            adam_m[name[len("adam.m."):]] = array
        elif name.startswith("adam.v."):
            adam_v[name[len("adam.v."):]] = array
        elif name.startswith("bn.") and name.rsplit(".", 1)[-1] in ("mean", "var"):
            key, stat = name[len("bn."):].rsplit(".", 1)
            running.setdefault(key, {})[stat] = array
        else:
            params[name] = array

    if step_count is None:
        raise CheckpointFormatError("missing adam.step_count")
    for name in adam_m:
        if name not in params:
            raise CheckpointFormatError(f"unknown tensor name 'adam.m.{name}'")
    for name in adam_v:
        if name not in params:
            raise CheckpointFormatError(f"unknown tensor name 'adam.v.{name}'")
    store = ParamStore()
    store.step_count = step_count
    for name, value in params.items():
        entry = store.add(name, value)
        if name not in adam_m or name not in adam_v:
            raise CheckpointFormatError(f"missing optimizer state for parameter {name!r}")
        if adam_m[name].shape != value.shape or adam_v[name].shape != value.shape:
            raise CheckpointFormatError(f"optimizer state shape mismatch for {name!r}")
        entry.adam_m = np.ascontiguousarray(adam_m[name])
        entry.adam_v = np.ascontiguousarray(adam_v[name])

    bn_states: dict[str, BatchNormState] = {}
    for key, stats in running.items():
        if set(stats) != {"mean", "var"}:
            raise CheckpointFormatError(f"incomplete running statistics for bn.{key}")
        bn_states[key] = BatchNormState(running_mean=np.ascontiguousarray(stats["mean"]),
                                        running_var=np.ascontiguousarray(stats["var"]))
    return CheckpointData(store=store, bn_states=bn_states, config=config, epochs_done=epochs_done)
