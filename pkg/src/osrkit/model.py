"""Feature extractor, classifier heads, open-set decision rules, and checkpoints.

Classes are labelled 1..C everywhere a label crosses a public surface; the
rejection label is C+1.  Inference helpers run on plain numpy over a frozen
parameter snapshot and may be parallelised over samples; the graph-building
forward is for training only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Graph, Tensor, parameter
from .errors import ContractError, DomainError, ShapeError

CHECKPOINT_FORMAT = "osrkit-checkpoint-v1"


class FeatureExtractor:
    """MLP with relu hidden activations and a linear latent output."""

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator):
        if len(layer_sizes) < 2:
            raise ContractError(f"need at least input and output sizes, got {layer_sizes}")
        self.layer_sizes = list(layer_sizes)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(parameter(rng.normal(0.0, scale, size=(fan_in, fan_out))))
            self.biases.append(parameter(np.zeros(fan_out)))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_sizes[-1]

    def features(self, x: np.ndarray) -> np.ndarray:
        """Numpy forward pass over rows of x; mirrors features_graph exactly."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        z = x[None, :] if squeeze else x
        if z.shape[1] != self.input_dim:
            raise ShapeError(f"input dim {z.shape[1]} != extractor dim {self.input_dim}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = z @ w.values + b.values
            if i < last:
                z = np.where(z > 0.0, z, 0.0)
        return z[0] if squeeze else z

    def features_graph(self, g: Graph, x: np.ndarray) -> Tensor:
        """Graph-building forward pass for training."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected (batch, {self.input_dim}) input, got {x.shape}")
        z = g.constant(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = g.add_bias(g.matmul(z, w), b)
            if i < last:
                z = g.relu(z)
        return z


class DistanceHead:
    """Trainable class anchors with fixed priors; classifies by squared distance."""

    def __init__(
        self,
        class_count: int,
        latent_dim: int,
        rng: np.random.Generator,
        trainable: bool = True,
    ):
        # Standard-Gaussian anchors start well separated in high dimension.
        self.anchors = parameter(
            rng.standard_normal((class_count, latent_dim)), requires_grad=trainable
        )
        self.priors = np.full(class_count, 1.0 / class_count)

    @property
    def class_count(self) -> int:
        return self.anchors.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.anchors.shape[1]


class SoftmaxHead:
    """Affine logits over latent features."""

    def __init__(self, class_count: int, latent_dim: int, rng: np.random.Generator):
        self.weight = parameter(rng.normal(0.0, 1.0 / np.sqrt(latent_dim), size=(class_count, latent_dim)))
        self.bias = parameter(np.zeros(class_count))

    @property
    def class_count(self) -> int:
        return self.weight.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class OpenSetDecision:
    """Outcome of an open-set decision rule; predicted_class is C+1 when rejected."""

    predicted_class: int
    score: float


class OpenSetModel:
    """Extractor plus one head, with bookkeeping for checkpoints."""

    def __init__(self, extractor: FeatureExtractor, head, init_seed: int, freeze_anchors: bool = False):
        if extractor.latent_dim != head.latent_dim:
            raise ShapeError(
                f"extractor latent dim {extractor.latent_dim} != head dim {head.latent_dim}"
            )
        self.extractor = extractor
        self.head = head
        self.init_seed = int(init_seed)
        self.freeze_anchors = bool(freeze_anchors)

    @property
    def head_type(self) -> str:
        return "distance" if isinstance(self.head, DistanceHead) else "softmax"

    @property
    def class_count(self) -> int:
        return self.head.class_count

    @property
    def latent_dim(self) -> int:
        return self.extractor.latent_dim

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """All parameter tensors in declared (checkpoint) order."""
        out = []
        for i, (w, b) in enumerate(zip(self.extractor.weights, self.extractor.biases)):
            out.append((f"layer{i}.weight", w))
            out.append((f"layer{i}.bias", b))
        if isinstance(self.head, DistanceHead):
            out.append(("anchors", self.head.anchors))
        else:
            out.append(("head.weight", self.head.weight))
            out.append(("head.bias", self.head.bias))
        return out

    def trainable_parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters() if t.requires_grad]


def build_model(
    layer_sizes: list[int],
    head_type: str,
    class_count: int,
    seed: int,
    freeze_anchors: bool = False,
) -> OpenSetModel:
    """Deterministically initialise an extractor+head pair from one seed."""
    rng = np.random.default_rng(seed)
    extractor = FeatureExtractor(layer_sizes, rng)
    if head_type == "distance":
        head = DistanceHead(class_count, extractor.latent_dim, rng, trainable=not freeze_anchors)
    elif head_type == "softmax":
        head = SoftmaxHead(class_count, extractor.latent_dim, rng)
    else:
        raise ContractError(f"unknown head type {head_type!r}")
    return OpenSetModel(extractor, head, init_seed=seed, freeze_anchors=freeze_anchors)


# -- inference ---------------------------------------------------------------


def latent(model: OpenSetModel, x: np.ndarray) -> np.ndarray:
    """Latent feature vector of a single input."""
    return model.extractor.features(np.asarray(x, dtype=np.float64))


def sq_distances(z: np.ndarray, head: DistanceHead) -> np.ndarray:
    """Squared Euclidean distance from latent z to every class anchor."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (head.latent_dim,):
        raise ShapeError(f"latent shape {z.shape} != ({head.latent_dim},)")
    diff = head.anchors.values - z
    return np.einsum("cn,cn->c", diff, diff)


def posterior_distance(z: np.ndarray, head: DistanceHead) -> np.ndarray:
    """Class posterior from prior-weighted Gaussian likelihoods around the anchors."""
    logits = np.log(head.priors) - sq_distances(z, head)
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def posterior_softmax(z: np.ndarray, head: SoftmaxHead) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (head.latent_dim,):
        raise ShapeError(f"latent shape {z.shape} != ({head.latent_dim},)")
    logits = head.weight.values @ z + head.bias.values
    logits -= logits.max()
    p = np.exp(logits)
    return p / p.sum()


def decide_distance(z: np.ndarray, head: DistanceHead, tau: float) -> OpenSetDecision:
    """Accept iff the best (least negative) squared-distance score clears tau.

    The acceptance region is the union of closed balls of radius sqrt(-tau)
    around the anchors, so it is bounded for every tau.
    """
    d = sq_distances(z, head)
    best = int(d.argmin())  # ties resolve to the lowest class index
    score = -float(d[best])
    if score >= tau:
        return OpenSetDecision(predicted_class=best + 1, score=score)
    return OpenSetDecision(predicted_class=head.class_count + 1, score=score)


def decide_softmax(z: np.ndarray, head: SoftmaxHead, tau: float) -> OpenSetDecision:
    """Confidence thresholding of the softmax posterior; tau must lie in (0, 1]."""
    if not 0.0 < tau <= 1.0:
        raise DomainError(f"softmax threshold must be in (0, 1], got {tau}")
    p = posterior_softmax(z, head)
    best = int(p.argmax())
    score = float(p[best])
    if score >= tau:
        return OpenSetDecision(predicted_class=best + 1, score=score)
    return OpenSetDecision(predicted_class=head.class_count + 1, score=score)


def closed_set_scores(model: OpenSetModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (score, predicted 1-based class) for rows of x under the model's rule."""
    z = model.extractor.features(np.asarray(x, dtype=np.float64))
    if isinstance(model.head, DistanceHead):
        diff = z[:, None, :] - model.head.anchors.values[None, :, :]
        d = np.einsum("bcn,bcn->bc", diff, diff)
        pred = d.argmin(axis=1)
        score = -d[np.arange(len(d)), pred]
    else:
        logits = z @ model.head.weight.values.T + model.head.bias.values
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        pred = p.argmax(axis=1)
        score = p[np.arange(len(p)), pred]
    return score.astype(np.float64), (pred + 1).astype(np.int64)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(model: OpenSetModel, path, training_state: dict | None = None) -> None:
    """Write a self-describing JSON checkpoint; floats round-trip bitwise."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "head_type": model.head_type,
        "layer_sizes": model.extractor.layer_sizes,
        "class_count": model.class_count,
        "init_seed": model.init_seed,
        "freeze_anchors": model.freeze_anchors,
        "params": {name: t.values.tolist() for name, t in model.named_parameters()},
    }
    if isinstance(model.head, DistanceHead):
        payload["priors"] = model.head.priors.tolist()
    payload["training_state"] = _encode_training_state(training_state)
    Path(path).write_text(json.dumps(payload, indent=1, allow_nan=False) + "\n")


def _encode_training_state(state: dict | None):
    if state is None:
        return None
    return {
        "epoch": int(state["epoch"]),
        "velocity": {k: np.asarray(v).tolist() for k, v in state["velocity"].items()},
    }


def load_checkpoint(path) -> tuple[OpenSetModel, dict | None]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ContractError(f"unrecognised checkpoint format {payload.get('format')!r}")
    model = build_model(
        payload["layer_sizes"],
        payload["head_type"],
        payload["class_count"],
        payload["init_seed"],
        freeze_anchors=payload["freeze_anchors"],
    )
    for name, tensor in model.named_parameters():
        stored = np.asarray(payload["params"][name], dtype=np.float64)
        if stored.shape != tensor.values.shape:
            raise ContractError(f"checkpoint param {name} has shape {stored.shape}, expected {tensor.values.shape}")
        tensor.values = stored
    if "priors" in payload and isinstance(model.head, DistanceHead):
        model.head.priors = np.asarray(payload["priors"], dtype=np.float64)
    state = payload.get("training_state")
    if state is not None:
        state = {
            "epoch": int(state["epoch"]),
            "velocity": {k: np.asarray(v, dtype=np.float64) for k, v in state["velocity"].items()},
        }
    return model, state
