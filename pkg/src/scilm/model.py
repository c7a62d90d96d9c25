"""Semantic embedding network, attention-weighted prototypes, shared latent map."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .data import Dataset
from .errors import ConfigurationError, ContractViolation, DatasetError
from .sampler import BalancedBatch

VARIANTS = ("a", "b", "c")
OPTIMIZERS = ("adam", "sgd")


@dataclass
class ModelConfig:
    q: int = 0
    p: int = 0
    h: int = 1000
    n: int = 10
    lambda_p: float = 0.4
    lambda_q: float = 0.4
    beta: float = 1.0
    gamma: float = 2.0
    lambda_reg: float = 1e-4
    variant: str = "c"
    optimizer: str = "adam"
    lr: float = 1e-3
    iterations: int = 2000
    seed: int = 0
    eq8_literal: bool = False

    def validate(self) -> None:
        if self.q < 1 or self.p < 1 or self.h < 1:
            raise ConfigurationError(f"q, p, h must be positive (got q={self.q}, p={self.p}, h={self.h})")
        if self.n < 1:
            raise ConfigurationError(f"n must be positive, got {self.n}")
        if not 0.0 <= self.lambda_p <= 1.0:
            raise ConfigurationError(f"lambda_p must lie in [0, 1], got {self.lambda_p}")
        if not 0.0 <= self.lambda_q <= 1.0:
            raise ConfigurationError(f"lambda_q must lie in [0, 1], got {self.lambda_q}")
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be > 0, got {self.gamma}")
        if self.lambda_reg < 0:
            raise ConfigurationError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.iterations < 0:
            raise ConfigurationError(f"iterations must be >= 0, got {self.iterations}")

    def for_dataset(self, ds: Dataset) -> "ModelConfig":
        """Copy with ``q`` and ``p`` taken from ``ds``."""
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(q=ds.q, p=ds.p)
        return ModelConfig(**kw)


@dataclass
class SenParams:
    W1: np.ndarray  # h x q
    b1: np.ndarray  # h
    W2: np.ndarray  # p x h
    b2: np.ndarray  # p

    NAMES = ("W1", "b1", "W2", "b2")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.NAMES}


@dataclass
class SharedParams:
    Ws: np.ndarray  # h x p
    bs: np.ndarray  # h

    NAMES = ("Ws", "bs")

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.NAMES}


@dataclass
class PrototypeSet:
    """Per batch class prototypes, one row per class in ``class_ids`` order.

    Fields hold arrays, or tape variables when built under differentiation.
    """

    class_ids: list[int]
    x_hat: object  # k x p, embedded semantic prototypes
    x_a: object  # k x p, averaged
    x_b: object  # k x p, attention-weighted
    x_c: object  # k x p, fused
    alpha: object  # k x n
    degenerate: int = 0

    def visual(self, variant: str):
        try:
            return {"a": self.x_a, "b": self.x_b, "c": self.x_c}[variant]
        except KeyError:
            raise ConfigurationError(f"unknown variant {variant!r}") from None


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(config: ModelConfig, rng: np.random.Generator) -> tuple[SenParams, SharedParams]:
    """Uniform fan-in/fan-out weights, zero biases."""
    q, h, p = config.q, config.h, config.p
    sen = SenParams(
        W1=_glorot(rng, h, q),
        b1=np.zeros(h),
        W2=_glorot(rng, p, h),
        b2=np.zeros(p),
    )
    shared = SharedParams(Ws=_glorot(rng, h, p), bs=np.zeros(h))
    return sen, shared


def _dense_relu(x, W, b):
    # rows of x are inputs: relu(x W^T + b)
    return nk.relu(nk.add(nk.matmul(x, nk.transpose(W)), b))


def sen_forward(a, theta: SenParams):
    """Embed attribute vectors into visual space.

    ``a`` is a single vector of length q or a matrix with one vector per row.
    """
    a_val = nk.value(a)
    q = nk.value(theta.W1).shape[1]
    single = a_val.ndim == 1
    if a_val.shape[-1] != q:
        raise ContractViolation(f"sen_forward: attribute length {a_val.shape[-1]} != q={q}")
    x = nk.reshape(a, (1, q)) if single else a
    out = _dense_relu(_dense_relu(x, theta.W1, theta.b1), theta.W2, theta.b2)
    return nk.reshape(out, (nk.value(out).shape[1],)) if single else out


def shared_embed(x, theta: SharedParams):
    """Latent map g(x) = relu(Ws x + bs); rows of a matrix are embedded independently."""
    x_val = nk.value(x)
    p = nk.value(theta.Ws).shape[1]
    if x_val.shape[-1] != p:
        raise ContractViolation(f"shared_embed: input length {x_val.shape[-1]} != p={p}")
    single = x_val.ndim == 1
    rows = nk.reshape(x, (1, p)) if single else x
    out = _dense_relu(rows, theta.Ws, theta.bs)
    return nk.reshape(out, (nk.value(out).shape[1],)) if single else out


def attention_weights(x_hat, samples, floor: float = nk.DEGENERATE_NORM):
    """Softmax over the cosine similarities between ``x_hat`` and each sample row.

    Batched form: ``x_hat`` is k x p and ``samples`` is k x n x p.
    """
    xh = nk.value(x_hat)
    s = nk.value(samples)
    if xh.shape[-1] != s.shape[-1]:
        raise ContractViolation(f"attention_weights: prototype length {xh.shape[-1]} vs samples {s.shape}")
    lifted = nk.reshape(x_hat, xh.shape[:-1] + (1, xh.shape[-1]))
    return nk.softmax(nk.cosine_sim(lifted, samples, floor=floor))


def count_degenerate(x, threshold: float = nk.DEGENERATE_NORM) -> int:
    """Number of rows whose norm falls below the cosine floor."""
    return int(np.sum(np.linalg.norm(nk.value(x), axis=-1) < threshold))


def build_prototypes(batch: BalancedBatch, ds: Dataset, theta: SenParams, lambda_p: float) -> PrototypeSet:
    ids = batch.class_ids
    x_hat = sen_forward(ds.attributes[ids], theta)
    samples = ds.features[batch.per_class_indices]  # k x n x p
    x_a = nk.mean_rows(samples)
    alpha = attention_weights(x_hat, samples)
    x_b = nk.weighted_sum_rows(samples, alpha)
    x_c = nk.add(nk.scale(x_a, lambda_p), nk.scale(x_b, 1.0 - lambda_p))
    degenerate = count_degenerate(x_hat) + count_degenerate(samples)
    return PrototypeSet(ids, x_hat, x_a, x_b, x_c, alpha, degenerate)


# --- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"SCLM"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIII5dB")
# variant byte: 0/1/2 for a/b/c, 3 for the instance-batch baseline
VARIANT_CODES = {"a": 0, "b": 1, "c": 2, "dem": 3}


def save_checkpoint(path: str | os.PathLike, config: ModelConfig, sen: SenParams,
                    shared: SharedParams | None, variant: str | None = None) -> None:
    variant = variant or config.variant
    h, q = sen.W1.shape
    p = sen.W2.shape[0]
    if shared is None:
        shared = SharedParams(Ws=np.zeros((h, p)), bs=np.zeros(h))
    header = _CKPT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, q, h, p,
        config.lambda_p, config.lambda_q, config.beta, config.gamma, config.lambda_reg,
        VARIANT_CODES[variant],
    )
    body = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes()
        for arr in (sen.W1, sen.b1, sen.W2, sen.b2, shared.Ws, shared.bs)
    )
    Path(path).write_bytes(header + body)


@dataclass
class Checkpoint:
    config: ModelConfig
    variant: str
    sen: SenParams
    shared: SharedParams


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise DatasetError(f"{path}: truncated checkpoint header")
    magic, version, q, h, p, lp, lq, beta, gamma, lreg, code = _CKPT_HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise DatasetError(f"{path}: unsupported checkpoint version {version}")
    shapes = [(h, q), (h,), (p, h), (p,), (h, p), (h,)]
    expected = _CKPT_HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arrays = []
    offset = _CKPT_HEADER.size
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape).copy())
        offset += 8 * size
    variant = {v: k for k, v in VARIANT_CODES.items()}.get(code)
    if variant is None:
        raise DatasetError(f"{path}: unknown variant code {code}")
    config = ModelConfig(q=q, p=p, h=h, lambda_p=lp, lambda_q=lq, beta=beta, gamma=gamma,
                         lambda_reg=lreg, variant=variant if variant in VARIANTS else "c")
    return Checkpoint(config, variant, SenParams(*arrays[:4]), SharedParams(*arrays[4:]))
