"""Prototype alignment, latent matching and margin losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .model import ModelConfig, PrototypeSet, SenParams, SharedParams, shared_embed


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    reg: float
    total: float
    # scalar node behind ``total``: a tape Var under differentiation,
    # otherwise a 0-d array at the working precision
    graph: object = field(default=None, repr=False, compare=False)

    def as_row(self) -> tuple[float, float, float, float, float]:
        return (self.l1, self.l2, self.l3, self.reg, self.total)


def loss_l1(protos: PrototypeSet, variant: str):
    """Mean squared distance between each embedded prototype and its visual prototype."""
    return nk.mean(nk.sq_dist(protos.x_hat, protos.visual(variant)))


def loss_l2(protos: PrototypeSet, theta_s: SharedParams, variant: str, literal: bool = False):
    """Mean latent-space cosine between embedded and visual prototypes (to be maximised).

    ``literal`` divides by squared norms instead of norms.
    """
    z_hat = shared_embed(protos.x_hat, theta_s)
    z_vis = shared_embed(protos.visual(variant), theta_s)
    return nk.mean(nk.cosine_sim(z_hat, z_vis, floor=nk.DEGENERATE_NORM, squared_norms=literal))


def loss_l3(protos: PrototypeSet, gamma: float, variant: str):
    """Hinge over all k*k ordered (semantic, visual) pairs, averaged.

    Matching pairs contribute their squared distance; mismatched pairs
    contribute ``max(gamma - d, 0)``.
    """
    x_hat = protos.x_hat
    x_vis = protos.visual(variant)
    k, p = nk.value(x_hat).shape
    d = nk.sq_dist(nk.reshape(x_hat, (k, 1, p)), nk.reshape(x_vis, (1, k, p)))
    same = np.eye(k)
    terms = nk.add(nk.mul(d, same), nk.mul(nk.hinge(d, gamma), 1.0 - same))
    return nk.mean(terms)


def regularizer(theta_e: SenParams, theta_s: SharedParams):
    parts = [nk.sum_squares(v) for v in (*theta_e.as_dict().values(), *theta_s.as_dict().values())]
    out = parts[0]
    for part in parts[1:]:
        out = nk.add(out, part)
    return out


def total_loss(protos: PrototypeSet, theta_e: SenParams, theta_s: SharedParams,
               config: ModelConfig) -> LossBreakdown:
    variant = config.variant
    l1 = loss_l1(protos, variant)
    l2 = loss_l2(protos, theta_s, variant, literal=config.eq8_literal)
    l3 = loss_l3(protos, config.gamma, variant)
    reg = regularizer(theta_e, theta_s)
    total = nk.add(
        nk.add(nk.scale(l1, config.lambda_q), nk.scale(l3, 1.0 - config.lambda_q)),
        nk.sub(nk.scale(reg, config.lambda_reg), nk.scale(l2, config.beta)),
    )
    return LossBreakdown(
        l1=float(nk.value(l1)),
        l2=float(nk.value(l2)),
        l3=float(nk.value(l3)),
        reg=float(nk.value(reg)),
        total=float(nk.value(total)),
        graph=total,
    )
