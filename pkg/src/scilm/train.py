"""Optimisation loop, instance-batch baseline and gradient check harness."""

from __future__ import annotations

import csv
import os
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import numkernel as nk
from .data import Dataset
from .errors import NumericalError
from .loss import LossBreakdown, total_loss
from .model import (
    ModelConfig,
    SenParams,
    SharedParams,
    build_prototypes,
    init_params,
    sen_forward,
)
from .sampler import BalancedBatch, sample_balanced_batch, sample_uniform_batch


class Sgd:
    kind = "sgd"

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            p -= self.lr * grads[name]


class Adam:
    kind = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(config: ModelConfig):
    return Adam(config.lr) if config.optimizer == "adam" else Sgd(config.lr)


@dataclass
class TrainReport:
    losses: list[LossBreakdown] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=lambda: defaultdict(float))
    iterations: int = 0
    degenerate: int = 0
    rows_per_step: list[int] = field(default_factory=list)

    def write_loss_curve(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "l1", "l2", "l3", "reg", "total"])
            for i, lb in enumerate(self.losses):
                w.writerow([i, *(repr(x) for x in lb.as_row())])


def _check_finite(it: int, lb: LossBreakdown, grads: dict[str, np.ndarray] | None = None) -> None:
    for name in ("l1", "l2", "l3", "reg", "total"):
        if not np.isfinite(getattr(lb, name)):
            raise NumericalError(f"iteration {it}: loss component {name} is {getattr(lb, name)}")
    for name, g in (grads or {}).items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"iteration {it}: gradient of {name} is not finite")


def _record(tape: nk.Tape, sen: SenParams, shared: SharedParams | None):
    sen_v = SenParams(**{k: tape.param(v, k) for k, v in sen.as_dict().items()})
    if shared is None:
        return sen_v, None
    shared_v = SharedParams(**{k: tape.param(v, k) for k, v in shared.as_dict().items()})
    return sen_v, shared_v


def scilm_step_loss(batch: BalancedBatch, ds: Dataset, sen: SenParams, shared: SharedParams,
                    config: ModelConfig) -> tuple[LossBreakdown, int]:
    protos = build_prototypes(batch, ds, sen, config.lambda_p)
    return total_loss(protos, sen, shared, config), protos.degenerate


def train(ds: Dataset, config: ModelConfig, rng: np.random.Generator,
          on_step: Callable[[int, LossBreakdown], None] | None = None,
          ) -> tuple[SenParams, SharedParams, TrainReport]:
    """Class-balanced training of the semantic embedding and shared latent map.

    Each step draws ``config.n`` instances from every seen class, builds the
    prototypes, evaluates the combined loss and applies one optimiser update.
    """
    config.validate()
    sen, shared = init_params(config, rng)
    params = {**sen.as_dict(), **shared.as_dict()}
    opt = make_optimizer(config)
    report = TrainReport()
    clock = time.perf_counter
    for it in range(config.iterations):
        t0 = clock()
        batch = sample_balanced_batch(ds, config.n, rng)
        t1 = clock()
        tape = nk.Tape()
        sen_v, shared_v = _record(tape, sen, shared)
        lb, degenerate = scilm_step_loss(batch, ds, sen_v, shared_v, config)
        t2 = clock()
        _check_finite(it, lb)
        grads = tape.backward(lb.graph)
        _check_finite(it, lb, grads)
        t3 = clock()
        opt.step(params, grads)
        t4 = clock()
        lb.graph = None
        report.losses.append(lb)
        report.degenerate += degenerate
        report.rows_per_step.append(int(batch.per_class_indices.size))
        report.timings["sample"] += t1 - t0
        report.timings["forward"] += t2 - t1
        report.timings["backward"] += t3 - t2
        report.timings["update"] += t4 - t3
        report.iterations = it + 1
        if on_step is not None:
            on_step(it, lb)
    return sen, shared, report


def train_baseline_dem(ds: Dataset, config: ModelConfig, rng: np.random.Generator,
                       ) -> tuple[SenParams, TrainReport]:
    """Instance-uniform baseline: regress each sampled feature onto its class embedding.

    Uses the same network and ``k * n`` instances per step, drawn uniformly
    from the whole training split, so large classes dominate the batches.
    """
    config.validate()
    sen, _ = init_params(config, rng)
    params = sen.as_dict()
    opt = make_optimizer(config)
    report = TrainReport()
    size = len(ds.seen_classes) * config.n
    for it in range(config.iterations):
        t0 = time.perf_counter()
        idx = sample_uniform_batch(ds, size, rng)
        t1 = time.perf_counter()
        tape = nk.Tape()
        sen_v, _ = _record(tape, sen, None)
        x_hat = sen_forward(ds.attributes[ds.labels[idx]], sen_v)
        fit = nk.mean(nk.sq_dist(x_hat, ds.features[idx]))
        reg = nk.sum_squares(sen_v.W1)
        for name in ("b1", "W2", "b2"):
            reg = nk.add(reg, nk.sum_squares(getattr(sen_v, name)))
        total = nk.add(fit, nk.scale(reg, config.lambda_reg))
        lb = LossBreakdown(float(fit.value), 0.0, 0.0, float(reg.value), float(total.value))
        _check_finite(it, lb)
        t2 = time.perf_counter()
        grads = tape.backward(total)
        _check_finite(it, lb, grads)
        t3 = time.perf_counter()
        opt.step(params, grads)
        report.losses.append(lb)
        report.rows_per_step.append(size)
        report.timings["sample"] += t1 - t0
        report.timings["forward"] += t2 - t1
        report.timings["backward"] += t3 - t2
        report.timings["update"] += time.perf_counter() - t3
        report.iterations = it + 1
    return sen, report


# --- gradient check ------------------------------------------------------------

GRADCHECK_CONFIG = ModelConfig(q=8, h=6, p=10, n=3, gamma=2.0, iterations=0)
GRADCHECK_CLASSES = 4


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_parameter: dict[str, float]


def _gradcheck_dataset(config: ModelConfig, k: int, rng: np.random.Generator) -> Dataset:
    per_class = config.n + 2
    labels = np.repeat(np.arange(k), per_class)
    return Dataset(
        features=rng.random((k * per_class, config.p)),
        labels=labels,
        attributes=rng.standard_normal((k, config.q)),
        seen_classes=list(range(k)),
        unseen_classes=[],
        train_idx=np.arange(k * per_class),
        test_seen_idx=np.array([], dtype=np.int64),
        test_unseen_idx=np.array([], dtype=np.int64),
    )


def gradcheck(config: ModelConfig, rng: np.random.Generator, k: int = GRADCHECK_CLASSES,
              eps: float = 1e-5,
              corrupt: Callable[[dict[str, np.ndarray]], dict[str, np.ndarray]] | None = None,
              ) -> GradcheckReport:
    """Compare tape gradients against central differences on one random batch.

    ``corrupt`` lets tests tamper with the analytic gradients to confirm the
    harness notices.
    """
    config = replace(config)
    config.validate()
    ds = _gradcheck_dataset(config, k, rng)
    sen, shared = init_params(config, rng)
    # zero biases put dead ReLU units exactly on their kink
    for b in (sen.b1, sen.b2, shared.bs):
        b[:] = rng.uniform(0.05, 0.2, size=b.shape)
    batch = sample_balanced_batch(ds, config.n, rng)

    tape = nk.Tape()
    sen_v, shared_v = _record(tape, sen, shared)
    lb, _ = scilm_step_loss(batch, ds, sen_v, shared_v, config)
    analytic = tape.backward(lb.graph)
    if corrupt is not None:
        analytic = corrupt(analytic)

    def f(p: dict[str, np.ndarray]):
        s = SenParams(**{n: p[n] for n in SenParams.NAMES})
        g = SharedParams(**{n: p[n] for n in SharedParams.NAMES})
        return scilm_step_loss(batch, ds, s, g, config)[0].graph

    numeric = nk.finite_difference_gradient(
        f, {**sen.as_dict(), **shared.as_dict()}, eps, dtype=np.longdouble
    )
    per_param = {
        name: float(nk.relative_error(analytic[name], numeric[name]).max())
        for name in numeric
    }
    return GradcheckReport(max(per_param.values()), per_param)
