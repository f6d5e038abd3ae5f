"""Training objectives: distance cross-entropy, class-inclusion regularization,
and the baseline background-class regularizers.

Every loss builds nodes on a caller-supplied Graph.  The composite objective
is always cf + lambda * reg, where reg depends on the configured family; with
family "none" the objective reduces to the classification term alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Tensor
from .errors import ContractError
from .model import DistanceHead, OpenSetModel, SoftmaxHead
from .special import PROB_FLOOR

FAMILIES = ("class_inclusion", "hsc", "triplet", "objectosphere", "uniformity", "energy", "none")
DISTANCE_FAMILIES = ("class_inclusion", "hsc", "triplet")
SOFTMAX_FAMILIES = ("objectosphere", "uniformity", "energy")

_LOG_FLOOR = math.log(PROB_FLOOR)


@dataclass
class LossConfig:
    """Selects the regularizer family, its weight, and family-specific margins."""

    family: str = "class_inclusion"
    lam: float = 1.0
    triplet_margin: float = 1.0
    objectosphere_xi: float | None = None  # defaults to sqrt(latent_dim)
    energy_m_in: float = -7.0
    energy_m_out: float = -1.0

    def validate(self, head_type: str) -> None:
        if self.family not in FAMILIES:
            raise ContractError(f"unknown loss family {self.family!r}")
        if self.lam < 0.0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if self.family in DISTANCE_FAMILIES and head_type != "distance":
            raise ContractError(f"family {self.family!r} needs a distance head")
        if self.family in SOFTMAX_FAMILIES and head_type != "softmax":
            raise ContractError(f"family {self.family!r} needs a softmax head")


@dataclass
class BatchPair:
    """A known mini-batch (features + 1-based labels) and a background mini-batch."""

    known_x: np.ndarray
    known_y: np.ndarray
    background_x: np.ndarray | None = None


@dataclass
class LossParts:
    """Composite loss node plus the scalar values of its pieces, for tracing."""

    total: Tensor
    cf: float = 0.0
    reg: float = 0.0
    bg_k: float = 0.0
    bg_u: float = 0.0


def _check_batch(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError(f"{what} batch must be a non-empty matrix, got shape {x.shape}")
    return x


def _check_labels(y: np.ndarray, class_count: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.size == 0:
        raise ContractError(f"labels must be a non-empty vector, got shape {y.shape}")
    if y.min() < 1 or y.max() > class_count:
        raise ContractError(f"labels must lie in 1..{class_count}, got range [{y.min()}, {y.max()}]")
    return y


def _distance_logits(g: Graph, model: OpenSetModel, x: np.ndarray) -> Tensor:
    z = model.extractor.features_graph(g, x)
    d = g.pairwise_sq_dist(z, model.head.anchors)
    return g.add_bias(g.neg(d), g.constant(np.log(model.head.priors)))


def _softmax_logits(g: Graph, model: OpenSetModel, x: np.ndarray) -> tuple[Tensor, Tensor]:
    z = model.extractor.features_graph(g, x)
    logits = g.add_bias(g.matmul(z, g.transpose(model.head.weight)), model.head.bias)
    return z, logits


def _cross_entropy(g: Graph, logits: Tensor, y: np.ndarray) -> Tensor:
    rows = np.arange(logits.shape[0])
    lse = g.logsumexp(logits, axis=1)
    true = g.take_entries(logits, rows, y - 1)
    return g.mean_all(g.sub(lse, true))


def loss_cf(g: Graph, model: OpenSetModel, known_x, known_y) -> Tensor:
    """Mean negative log posterior of the true class under the model's head."""
    x = _check_batch(known_x, "known")
    y = _check_labels(known_y, model.class_count)
    if isinstance(model.head, DistanceHead):
        logits = _distance_logits(g, model, x)
    else:
        _, logits = _softmax_logits(g, model, x)
    return _cross_entropy(g, logits, y)


def loss_bg_u(g: Graph, model: OpenSetModel, background_x) -> Tensor:
    """Push background samples out of every class hypersphere.

    Penalizes -log(1 - max inclusion probability), where the maximum over
    classes is realized by the nearest anchor; the complement is computed
    directly so it never cancels, and is clamped before the log.
    """
    x = _check_batch(background_x, "background")
    z = model.extractor.features_graph(g, x)
    d = g.pairwise_sq_dist(z, model.head.anchors)
    d_min = g.min_axis(d, axis=1)
    exclusion = g.prob_exclusion(d_min, model.latent_dim)
    log_term = g.log(g.clamp_min(exclusion, PROB_FLOOR))
    return g.scalar_mul(g.sum_all(log_term), -1.0 / x.shape[0])


def loss_bg_k(g: Graph, model: OpenSetModel, known_x, known_y) -> Tensor:
    """Pull correctly classified known samples inside their class hypersphere.

    Samples whose nearest anchor disagrees with the label contribute exactly
    zero; the gate sees only current values and passes no gradient.
    """
    x = _check_batch(known_x, "known")
    y = _check_labels(known_y, model.class_count)
    z = model.extractor.features_graph(g, x)
    d = g.pairwise_sq_dist(z, model.head.anchors)
    predicted = d.values.argmin(axis=1)
    gate = predicted == (y - 1)
    if not gate.any():
        return g.constant(0.0)
    rows = np.nonzero(gate)[0]
    d_true = g.take_entries(d, rows, y[rows] - 1)
    inclusion = g.prob_inclusion(d_true, model.latent_dim)
    log_term = g.log(g.clamp_min(inclusion, PROB_FLOOR))
    return g.scalar_mul(g.sum_all(log_term), -1.0 / x.shape[0])


def loss_class_inclusion(g: Graph, model: OpenSetModel, pair: BatchPair, lam: float) -> Tensor:
    """Composite objective cf + lam * (bg_k + bg_u)."""
    parts = _class_inclusion_parts(g, model, pair, lam)
    return parts.total


def _class_inclusion_parts(g: Graph, model: OpenSetModel, pair: BatchPair, lam: float) -> LossParts:
    cf = loss_cf(g, model, pair.known_x, pair.known_y)
    bg_k = loss_bg_k(g, model, pair.known_x, pair.known_y)
    bg_u = loss_bg_u(g, model, pair.background_x)
    reg = g.add(bg_k, bg_u)
    total = g.add(cf, g.scalar_mul(reg, lam))
    return LossParts(
        total=total,
        cf=float(cf.values),
        reg=float(reg.values),
        bg_k=float(bg_k.values),
        bg_u=float(bg_u.values),
    )


def _h_scale_node(g: Graph, d_sq: Tensor) -> Tensor:
    return g.add_scalar(g.sqrt(g.add_scalar(d_sq, 1.0)), -1.0)


def _reg_hsc(g: Graph, model: OpenSetModel, pair: BatchPair) -> Tensor:
    """Hypersphere-classifier objective applied class-wise.

    The single-center form has no class structure, so the known term uses the
    true-class anchor and the background term the nearest anchor.
    """
    x = _check_batch(pair.known_x, "known")
    y = _check_labels(pair.known_y, model.class_count)
    bx = _check_batch(pair.background_x, "background")

    z_k = model.extractor.features_graph(g, x)
    d_k = g.pairwise_sq_dist(z_k, model.head.anchors)
    d_true = g.take_entries(d_k, np.arange(x.shape[0]), y - 1)
    known_term = g.mean_all(_h_scale_node(g, d_true))

    z_b = model.extractor.features_graph(g, bx)
    d_b = g.pairwise_sq_dist(z_b, model.head.anchors)
    d_min = g.min_axis(d_b, axis=1)
    bg_term = g.neg(g.mean_all(g.log1mexp(_h_scale_node(g, d_min))))
    return g.add(known_term, bg_term)


def loss_hsc(g: Graph, model: OpenSetModel, pair: BatchPair) -> Tensor:
    return _reg_hsc(g, model, pair)


def _reg_triplet(g: Graph, model: OpenSetModel, pair: BatchPair, margin: float) -> Tensor:
    """Hinge on (true-anchor distance of a known) vs (same-anchor distance of a
    background sample), backgrounds matched round-robin within the batch."""
    x = _check_batch(pair.known_x, "known")
    y = _check_labels(pair.known_y, model.class_count)
    bx = _check_batch(pair.background_x, "background")
    b_idx = np.arange(x.shape[0]) % bx.shape[0]

    z_k = model.extractor.features_graph(g, x)
    d_pos = g.take_entries(
        g.pairwise_sq_dist(z_k, model.head.anchors), np.arange(x.shape[0]), y - 1
    )
    z_b = model.extractor.features_graph(g, bx)
    d_neg = g.take_entries(g.pairwise_sq_dist(z_b, model.head.anchors), b_idx, y - 1)
    hinge = g.relu(g.add_scalar(g.sub(d_pos, d_neg), float(margin)))
    return g.mean_all(hinge)


def loss_triplet(g: Graph, model: OpenSetModel, pair: BatchPair, margin: float) -> Tensor:
    return _reg_triplet(g, model, pair, margin)


def _uniform_target_term(g: Graph, logits: Tensor) -> Tensor:
    """Mean over classes of the negative log posterior; minimal at the uniform posterior."""
    c = logits.shape[1]
    lse = g.logsumexp(logits, axis=1)
    mean_logit = g.scalar_mul(g.sum_axis(logits, axis=1), 1.0 / c)
    return g.mean_all(g.sub(lse, mean_logit))


def _reg_objectosphere(g: Graph, model: OpenSetModel, pair: BatchPair, xi: float) -> Tensor:
    bx = _check_batch(pair.background_x, "background")
    z_k, _ = _softmax_logits(g, model, pair.known_x)
    z_b, logits_b = _softmax_logits(g, model, bx)
    uniform = _uniform_target_term(g, logits_b)
    norm_k = g.sqrt(g.sum_axis(g.square(z_k), axis=1))
    known_mag = g.mean_all(g.square(g.relu(g.add_scalar(g.neg(norm_k), float(xi)))))
    bg_mag = g.mean_all(g.sum_axis(g.square(z_b), axis=1))
    return g.add(uniform, g.add(known_mag, bg_mag))


def loss_objectosphere(g: Graph, model: OpenSetModel, pair: BatchPair, xi: float) -> Tensor:
    """Cross-entropy on knowns plus the magnitude/uniformity background penalty."""
    ce = loss_cf(g, model, pair.known_x, pair.known_y)
    return g.add(ce, _reg_objectosphere(g, model, pair, xi))


def _reg_uniformity(g: Graph, model: OpenSetModel, pair: BatchPair) -> Tensor:
    bx = _check_batch(pair.background_x, "background")
    _, logits_b = _softmax_logits(g, model, bx)
    return _uniform_target_term(g, logits_b)


def loss_uniformity(g: Graph, model: OpenSetModel, pair: BatchPair) -> Tensor:
    """Cross-entropy on knowns plus a push of background posteriors towards uniform."""
    ce = loss_cf(g, model, pair.known_x, pair.known_y)
    return g.add(ce, _reg_uniformity(g, model, pair))


def _reg_energy(g: Graph, model: OpenSetModel, pair: BatchPair, m_in: float, m_out: float) -> Tensor:
    bx = _check_batch(pair.background_x, "background")
    _, logits_k = _softmax_logits(g, model, pair.known_x)
    _, logits_b = _softmax_logits(g, model, bx)
    e_k = g.neg(g.logsumexp(logits_k, axis=1))
    e_b = g.neg(g.logsumexp(logits_b, axis=1))
    known_term = g.mean_all(g.square(g.relu(g.add_scalar(e_k, -float(m_in)))))
    bg_term = g.mean_all(g.square(g.relu(g.add_scalar(g.neg(e_b), float(m_out)))))
    return g.add(known_term, bg_term)


def loss_energy(g: Graph, model: OpenSetModel, pair: BatchPair, m_in: float, m_out: float) -> Tensor:
    """Cross-entropy on knowns plus squared hinges on the energy of both batches."""
    ce = loss_cf(g, model, pair.known_x, pair.known_y)
    return g.add(ce, _reg_energy(g, model, pair, m_in, m_out))


def resolve_xi(cfg: LossConfig, latent_dim: int) -> float:
    return float(cfg.objectosphere_xi) if cfg.objectosphere_xi is not None else math.sqrt(latent_dim)


def total_loss(g: Graph, model: OpenSetModel, pair: BatchPair, cfg: LossConfig) -> LossParts:
    """Composite objective for any family: cf + lambda * family regularizer."""
    cfg.validate(model.head_type)
    if cfg.family == "none":
        cf = loss_cf(g, model, pair.known_x, pair.known_y)
        return LossParts(total=cf, cf=float(cf.values))
    if cfg.family == "class_inclusion":
        return _class_inclusion_parts(g, model, pair, cfg.lam)

    cf = loss_cf(g, model, pair.known_x, pair.known_y)
    if cfg.family == "hsc":
        reg = _reg_hsc(g, model, pair)
    elif cfg.family == "triplet":
        reg = _reg_triplet(g, model, pair, cfg.triplet_margin)
    elif cfg.family == "objectosphere":
        reg = _reg_objectosphere(g, model, pair, resolve_xi(cfg, model.latent_dim))
    elif cfg.family == "uniformity":
        reg = _reg_uniformity(g, model, pair)
    else:  # energy
        reg = _reg_energy(g, model, pair, cfg.energy_m_in, cfg.energy_m_out)
    total = g.add(cf, g.scalar_mul(reg, cfg.lam))
    return LossParts(
        total=total, cf=float(cf.values), reg=float(reg.values), bg_u=float(reg.values)
    )
