"""Contrastive objectives over shared and scenario-specific representations.

Both losses are softmax contrasts of dot products at temperature tau.  The
generalized loss weights each term by a detached reciprocal similarity
score; the individual loss contrasts a dropout-augmented view against
cross-scenario negatives and uses no weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .errors import ConfigError, ContractError, DimensionError
from .model import ModelParams, specific_forward
from .rng import RngStream


def reciprocal_weight(e_i, e_j, eps: float = 1e-2) -> float:
    """1 / max(e_i . e_j, eps) on plain vectors; never touches the graph.

    The clamp keeps the weight positive and bounded when the dot product is
    small or negative.
    """
    if eps <= 0.0:
        raise ConfigError(f"weight clamp eps must be > 0, got {eps}")
    a = np.asarray(e_i, dtype=float).ravel()
    b = np.asarray(e_j, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"embedding lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return 1.0 / max(float(a @ b), eps)


@dataclass(frozen=True)
class WeightedPair:
    """A contrastive candidate with its (gradient-free) similarity weight."""
    s: float
    rep: object            # DiffNode or plain vector
    role: str              # "positive" | "negative"

    def __post_init__(self):
        if not (np.isfinite(self.s) and self.s > 0.0):
            raise ContractError(f"similarity weight must be positive and finite, got {self.s}")
        if self.role not in ("positive", "negative"):
            raise ContractError(f"unknown pair role {self.role!r}")


def _as_rep_node(rep) -> DiffNode:
    if isinstance(rep, DiffNode):
        return rep
    return DiffNode.constant(np.asarray(rep, dtype=float))


def _weighted_softmax_loss(pos_dot: DiffNode, pos_weight: float,
                           neg_dots: list[DiffNode], neg_weights: list[float],
                           tau: float, log_form: bool) -> DiffNode:
    """-ln(P / (P + sum N_i)) with P = w+ exp(d+/tau), N_i = w_i exp(d_i/tau).

    Evaluated in log space: the denominator is a max-shifted log-sum-exp and
    the numerator enters as ln w+ + d+/tau directly, so the value and its
    gradient stay finite for arbitrarily large or small dots.  The literal
    (non-log) form exponentiates the same difference.
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    if not neg_dots:
        raise ContractError("contrastive loss needs at least one negative")
    shift = max([pos_dot.item() / tau] + [d.item() / tau for d in neg_dots])
    terms = [ad.affine(ad.exp(ad.affine(pos_dot, 1.0 / tau, -shift)), pos_weight)]
    for d, w in zip(neg_dots, neg_weights):
        terms.append(ad.affine(ad.exp(ad.affine(d, 1.0 / tau, -shift)), w))
    log_den = ad.affine(ad.log(ad.add_n(terms)), 1.0, shift)
    log_num = ad.affine(pos_dot, 1.0 / tau, float(np.log(pos_weight)))
    if log_form:
        return ad.sub(log_den, log_num)
    return ad.neg(ad.exp(ad.sub(log_num, log_den)))


def generalized_loss(anchor_z: DiffNode, positive: WeightedPair,
                     negatives: list[WeightedPair], tau: float,
                     log_form: bool = True) -> DiffNode:
    """Weighted contrast of one anchor's shared representation.

    Gradient flows through the anchor and through any representation that is
    a live graph node; weights and detached vectors contribute values only.
    """
    if positive.role != "positive":
        raise ContractError(f"positive slot holds a {positive.role!r} pair")
    for n in negatives:
        if n.role != "negative":
            raise ContractError(f"negative slot holds a {n.role!r} pair")
    if not negatives:
        raise ContractError("generalized loss needs at least one negative")
    pos_dot = ad.dot(anchor_z, _as_rep_node(positive.rep))
    neg_dots = [ad.dot(anchor_z, _as_rep_node(n.rep)) for n in negatives]
    return _weighted_softmax_loss(pos_dot, positive.s, neg_dots,
                                  [n.s for n in negatives], tau, log_form)


# ---------------------------------------------------------------------------
# individual loss
# ---------------------------------------------------------------------------

@dataclass
class IndividualTriple:
    """Anchor views and negatives in scenario-specific space.

    h and h_aug must come from the same shared representation of the same
    sample; neg_other are other-scenario samples through their own towers,
    neg_cross are within-scenario negatives pushed through a foreign tower.
    """
    h: DiffNode
    h_aug: DiffNode
    neg_other: list[DiffNode] = field(default_factory=list)
    neg_cross: list[DiffNode] = field(default_factory=list)


def augment_positive(k: int, z: DiffNode, params: ModelParams,
                     rate: float, rng: RngStream) -> DiffNode:
    """Second pass through tower k with fresh dropout masks."""
    return specific_forward(k, z, params, dropout_rate=rate, rng=rng)


def cross_scenario_negative(k_prime: int, z_neg: DiffNode, params: ModelParams,
                            *, anchor_scenario: int) -> DiffNode:
    """Encode a within-scenario negative with a foreign tower (dropout off)."""
    if k_prime == anchor_scenario:
        raise ContractError(
            f"cross-scenario encoder must differ from anchor scenario {anchor_scenario}")
    return specific_forward(k_prime, z_neg, params)


def individual_loss(triple: IndividualTriple, tau: float,
                    log_form: bool = True) -> DiffNode:
    """Unweighted contrast of h against its augmented view.

    The denominator pools both negative kinds; there is no similarity
    weighting here.
    """
    negatives = list(triple.neg_other) + list(triple.neg_cross)
    if not negatives:
        raise ContractError("individual loss needs at least one negative")
    pos_dot = ad.dot(triple.h, triple.h_aug)
    neg_dots = [ad.dot(triple.h, n) for n in negatives]
    return _weighted_softmax_loss(pos_dot, 1.0, neg_dots,
                                  [1.0] * len(neg_dots), tau, log_form)
