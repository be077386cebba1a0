"""Dense-array helpers, parameters, Adam, seeded sampling and gradient checks.

All training math runs in float64.  Arrays are plain ``numpy.ndarray``;
``as_array`` is the single gate that rejects non-finite input.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class NumericsError(ValueError):
    pass


def as_array(x, name="array") -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim and 0 in a.shape:
        raise NumericsError(f"{name}: zero-length extent in shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericsError(f"{name}: non-finite entries")
    return a


def softmax(logits, axis=-1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise NumericsError("softmax over an empty axis")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass(eq=False)
class Parameter:
    """A named trainable array with its gradient and Adam moments."""

    name: str
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)
    step_count: int = 0

    def __post_init__(self):
        self.value = as_array(self.value, self.name)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def adam_step(param: Parameter, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> Parameter:
    """Bias-corrected Adam update in place; clears the gradient.

    ``weight_decay`` adds ``2 * weight_decay * value`` to the gradient, i.e. the
    derivative of an L2 penalty ``weight_decay * sum(value**2)``.
    """
    if not param.trainable:
        raise NumericsError(f"parameter {param.name!r} is frozen")
    if param.grad.shape != param.value.shape:
        raise NumericsError(f"gradient shape {param.grad.shape} != value shape {param.value.shape}")
    g = param.grad
    if weight_decay:
        g = g + 2.0 * weight_decay * param.value
    param.step_count += 1
    t = param.step_count
    param.adam_m *= beta1
    param.adam_m += (1.0 - beta1) * g
    param.adam_v *= beta2
    param.adam_v += (1.0 - beta2) * (g * g)
    m_hat = param.adam_m / (1.0 - beta1 ** t)
    v_hat = param.adam_v / (1.0 - beta2 ** t)
    param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.zero_grad()
    return param


class Adam:
    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        for p in self.params:
            adam_step(p, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)


def grad_check(fun, point, h: float = 1e-5) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``fun(x)`` returns ``(value, grad)``.  The error per coordinate is
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    if h <= 0:
        raise NumericsError("step h must be positive")
    x = np.array(point, dtype=np.float64)
    f0, g = fun(x.copy())
    g = np.asarray(g, dtype=np.float64)
    if not np.isfinite(f0) or not np.all(np.isfinite(g)):
        raise NumericsError("function returned a non-finite value")
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fun(x.copy())[0]
        flat[i] = old - h
        fm = fun(x.copy())[0]
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericsError("function returned a non-finite value")
        num = (fp - fm) / (2.0 * h)
        err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]), abs(num))
        worst = max(worst, err)
    return worst


class Rng:
    """Seeded PCG64 stream with named, independent substreams.

    ``Rng(seed).substream("noise")`` always yields the same generator for the
    same seed and name, independent of what other substreams have consumed.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        if not 0 <= int(seed) < 2 ** 64:
            raise NumericsError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._key = _key
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=_key)))

    def substream(self, name: str) -> "Rng":
        tag = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
        return Rng(self.seed, self._key + (tag,))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, std=1.0):
        return self._gen.standard_normal(shape) * std

    def uniform(self, shape, low=0.0, high=1.0):
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n):
        return self._gen.permutation(n)


def gaussian_sample(rng: Rng, shape, variance: float) -> np.ndarray:
    if variance < 0:
        raise NumericsError("variance must be non-negative")
    z = rng.generator.standard_normal(shape)
    if variance == 0:
        return np.zeros(shape)
    return z * np.sqrt(variance)


def glorot(rng: Rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape or (fan_in, fan_out), -limit, limit)


def hash_arrays(params) -> str:
    """sha256 over names and raw bytes of parameter values, in given order."""
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()
